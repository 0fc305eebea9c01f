#pragma once

// Query-conditioned segmentation readout, pixel cross-entropy and IoU metrics.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mgfc/feature_map.hpp"
#include "mgfc/tensor.hpp"

namespace mgfc {

template <typename S>
struct HeadParams {
  Tensor<S> w_cls;  // c_q x C
  Tensor<S> b_cls;  // 1 x C

  Index classes() const { return w_cls.cols(); }
};

// A = softmax(F * Q^T / sqrt(c_q)) assigns every token to the queries, each
// query carries class logits Q * W_cls + b_cls, and tokens read out A * those.
template <typename S>
Tensor<S> predict_pixel_logits(const Tensor<S>& queries, const FeatureMap<S>& features, const HeadParams<S>& p) {
  if (features.channels() != queries.cols())
    throw ShapeError("predict_pixel_logits: feature width " + std::to_string(features.channels()) +
                     " differs from query width " + std::to_string(queries.cols()));
  if (p.w_cls.rows() != queries.cols())
    throw ShapeError("predict_pixel_logits: W_cls has " + std::to_string(p.w_cls.rows()) + " rows, queries have " +
                     std::to_string(queries.cols()) + " channels");
  const S inv = S(1) / std::sqrt(static_cast<S>(queries.cols()));
  const Tensor<S> assign = softmax_rows(scale(matmul(features.values, transpose(queries)), inv));
  const Tensor<S> class_logits = add(matmul(queries, p.w_cls), p.b_cls);
  return matmul(assign, class_logits);
}

// Mean over rows of -log softmax(logits)[label], via log-sum-exp.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels) {
  const Index n = logits.rows(), classes = logits.cols();
  if (static_cast<Index>(labels.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  if (n == 0) throw DataError("cross_entropy: empty batch");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= classes)
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " outside [0, " + std::to_string(classes) + ")");
  Matrix<S> prob(n, classes);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const auto row = logits.value().row(i);
    const S m = row.maxCoeff();
    prob.row(i) = (row.array() - m).exp().matrix();
    const S z = prob.row(i).sum();
    prob.row(i) /= z;
    total += static_cast<double>(m + std::log(z) - row(labels[static_cast<std::size_t>(i)]));
  }
  Matrix<S> out(1, 1);
  out(0, 0) = static_cast<S>(total / static_cast<double>(n));
  std::vector<int> kept(labels.begin(), labels.end());
  return detail::make_result<S>(std::move(out), "cross_entropy", {logits},
                                [prob = std::move(prob), kept = std::move(kept)](detail::Node<S>& self) {
                                  auto& L = *self.inputs[0];
                                  const S g = self.grad(0, 0) / static_cast<S>(prob.rows());
                                  L.grad += g * prob;
                                  for (std::size_t i = 0; i < kept.size(); ++i)
                                    L.grad(static_cast<Index>(i), kept[i]) -= g;
                                });
}

template <typename S>
std::vector<int> argmax_rows(const Matrix<S>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

struct MiouReport {
  std::vector<double> iou;     // NaN where the class is excluded
  std::vector<bool> counted;   // present in truth or prediction
  double mean = 0.0;
  double pixel_accuracy = 0.0;
};

// Rows are ground truth, columns prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes) : classes_(classes), counts_(static_cast<std::size_t>(classes * classes), 0) {
    if (classes < 2) throw ParameterError("ConfusionMatrix: need at least two classes");
  }

  int classes() const { return classes_; }
  std::int64_t at(int truth, int pred) const { return counts_[index(truth, pred)]; }

  void add(int truth, int pred, std::int64_t count = 1) {
    if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_)
      throw DataError("ConfusionMatrix: class id outside [0, " + std::to_string(classes_) + ")");
    counts_[index(truth, pred)] += count;
  }

  void add(std::span<const int> truth, std::span<const int> pred) {
    if (truth.size() != pred.size()) throw ShapeError("ConfusionMatrix: truth and prediction lengths differ");
    for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], pred[i]);
  }

  void merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw ShapeError("ConfusionMatrix: class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t index(int truth, int pred) const { return static_cast<std::size_t>(truth * classes_ + pred); }

  int classes_;
  std::vector<std::int64_t> counts_;
};

// IoU_c = TP / (TP + FP + FN); classes absent from both truth and prediction
// are left out of the mean.
inline MiouReport miou(const ConfusionMatrix& cm) {
  const int n = cm.classes();
  if (cm.total() == 0) throw DataError("miou: empty confusion matrix");
  MiouReport r;
  r.iou.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::quiet_NaN());
  r.counted.assign(static_cast<std::size_t>(n), false);
  double sum = 0.0, diag = 0.0;
  int used = 0;
  for (int c = 0; c < n; ++c) {
    std::int64_t row = 0, col = 0;
    for (int k = 0; k < n; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::int64_t tp = cm.at(c, c);
    diag += static_cast<double>(tp);
    const std::int64_t uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.iou[static_cast<std::size_t>(c)] = iou;
    r.counted[static_cast<std::size_t>(c)] = true;
    sum += iou;
    ++used;
  }
  r.mean = sum / used;
  r.pixel_accuracy = diag / static_cast<double>(cm.total());
  return r;
}

}  // namespace mgfc
