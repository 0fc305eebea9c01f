#pragma once

// Training loop and evaluation over the synthetic dataset.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgfc/config.hpp"
#include "mgfc/data.hpp"
#include "mgfc/model.hpp"
#include "mgfc/optim.hpp"
#include "mgfc/state.hpp"

namespace mgfc {

// An image with labels pooled to the token grid the head predicts on.
template <typename S>
struct LabeledImage {
  Matrix<S> image;
  std::vector<int> labels;
};

template <typename S>
std::vector<LabeledImage<S>> prepare_samples(const std::vector<Sample>& samples, const ModelConfig& cfg) {
  std::vector<LabeledImage<S>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.height != cfg.backbone.image_height || s.width != cfg.backbone.image_width)
      throw ConfigError("sample is " + dims_string(s.height, s.width) + ", model expects " +
                        dims_string(cfg.backbone.image_height, cfg.backbone.image_width));
    out.push_back({s.image.template cast<S>(), pool_labels(s.labels, s.height, s.width, cfg.backbone.patch, cfg.classes)});
  }
  return out;
}

struct MetricRecord {
  int iter = 0;
  double loss = 0.0;
  MiouReport report;

  std::string json() const {
    nlohmann::json per_class = nlohmann::json::array();
    for (double v : report.iou) per_class.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    nlohmann::json j = {{"iter", iter}, {"loss", loss}, {"miou", report.mean}, {"per_class", per_class}};
    return j.dump();
  }
};

struct TrainHooks {
  // Perturbs one frozen weight halfway through training; the final integrity
  // check must then fail.
  bool inject_frozen_drift = false;
};

template <typename S>
std::vector<MetricRecord> train_model(Model<S>& model, const std::vector<LabeledImage<S>>& data,
                                      const TrainOptions& opt, const std::filesystem::path* out_dir = nullptr,
                                      std::ostream* metrics = nullptr, const TrainHooks& hooks = {}) {
  if (data.empty() && opt.iters > 0) throw DataError("train: no training samples");
  const Sha256 initial_hash = frozen_hash(model);
  auto params = model.trainable_parameters();
  OptimizerState<S> state;
  state.config = opt.optim;

  std::mt19937_64 rng(opt.seed ^ 0x2545f4914f6cdd1dULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  auto save = [&](const std::string& name) {
    if (out_dir) write_checkpoint(*out_dir / name, model_checkpoint(model));
  };

  std::vector<MetricRecord> records;
  for (int iter = 1; iter <= opt.iters; ++iter) {
    model.zero_grad();
    ConfusionMatrix cm(model.config().classes);
    Tensor<S> total;
    for (int b = 0; b < opt.batch; ++b) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& sample = data[order[cursor++]];
      const Tensor<S> logits = model.logits(sample.image);
      const Tensor<S> loss = cross_entropy(logits, std::span<const int>(sample.labels));
      total = total.defined() ? add(total, loss) : loss;
      cm.add(sample.labels, argmax_rows(logits.value()));
    }
    const Tensor<S> loss = scale(total, S(1) / static_cast<S>(opt.batch));
    if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("train: loss diverged at iteration " + std::to_string(iter));
    backward(loss);
    adamw_step(params, state);

    if (hooks.inject_frozen_drift && iter == std::max(1, opt.iters / 2)) {
      model.mutable_encoder().patch_bias.mutable_value()(0, 0) += S(1e-3);
    }
    if (opt.log_every > 0 && iter % opt.log_every == 0) {
      MetricRecord r{iter, static_cast<double>(loss.item()), miou(cm)};
      if (metrics) *metrics << r.json() << '\n';
      records.push_back(std::move(r));
    }
    if (opt.checkpoint_every > 0 && iter % opt.checkpoint_every == 0 && iter != opt.iters)
      save("checkpoint_" + std::to_string(iter) + ".mgc");
  }
  if (frozen_hash(model) != initial_hash)
    throw IntegrityError("train: frozen encoder changed during training (" + to_hex(initial_hash) + " -> " +
                         to_hex(frozen_hash(model)) + ")");
  save("checkpoint.mgc");
  return records;
}

// Samples are sharded round-robin over `workers` threads; per-shard confusion
// matrices are merged at the end.
template <typename S>
ConfusionMatrix evaluate(const Model<S>& model, const std::vector<LabeledImage<S>>& data, int workers = 1) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(1, data.size()))));
  std::vector<ConfusionMatrix> shards(static_cast<std::size_t>(workers), ConfusionMatrix(model.config().classes));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto run = [&](int w) {
    try {
      for (std::size_t i = static_cast<std::size_t>(w); i < data.size(); i += static_cast<std::size_t>(workers)) {
        const Tensor<S> logits = model.logits(data[i].image);
        shards[static_cast<std::size_t>(w)].add(data[i].labels, argmax_rows(logits.value()));
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  ConfusionMatrix total(model.config().classes);
  for (const auto& s : shards) total.merge(s);
  return total;
}

}  // namespace mgfc
