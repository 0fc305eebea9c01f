#pragma once

// Spatial-token clustering and per-cluster instance normalization.
//
// Clustering works on plain values and sits outside the autodiff graph; only
// the normalization that consumes its labels is differentiable.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mgfc/feature_map.hpp"
#include "mgfc/tensor.hpp"

namespace mgfc {

enum class ClusterMethod { single, dbscan, kmeans };

inline const char* to_string(ClusterMethod m) {
  switch (m) {
    case ClusterMethod::single:
      return "single";
    case ClusterMethod::dbscan:
      return "dbscan";
    case ClusterMethod::kmeans:
      return "kmeans";
  }
  return "?";
}

struct ClusterConfig {
  ClusterMethod method = ClusterMethod::dbscan;
  std::optional<double> eps;  // nullopt: half the median pairwise distance
  int min_pts = 4;
  int k = 5;
  std::uint64_t seed = 0;
  int max_iters = 50;
};

inline constexpr int kNoise = -1;

struct ClusterAssignment {
  std::vector<int> labels;  // kNoise or 0..num_clusters-1
  int num_clusters = 0;
  ClusterMethod method = ClusterMethod::single;
  double eps = 0.0;
  int min_pts = 0;
  int k = 0;
  std::uint64_t seed = 0;
  Matrix<double> centroids;               // kmeans only
  std::vector<double> objective_history;  // kmeans: objective after each assignment step

  bool has_noise() const { return std::find(labels.begin(), labels.end(), kNoise) != labels.end(); }
};

namespace detail {

inline Matrix<double> pairwise_sq_distances(const Matrix<double>& p) {
  const Eigen::VectorXd norms = p.rowwise().squaredNorm();
  Matrix<double> d = (-2.0 * p * p.transpose()).eval();
  d.colwise() += norms;
  d.rowwise() += norms.transpose();
  return d.cwiseMax(0.0);
}

inline void check_finite(const char* op, const Matrix<double>& p) {
  if (!p.allFinite()) throw NumericError(std::string(op) + ": non-finite points");
}

}  // namespace detail

inline ClusterAssignment single_cluster(Index count) {
  ClusterAssignment a;
  a.labels.assign(static_cast<std::size_t>(count), 0);
  a.num_clusters = count > 0 ? 1 : 0;
  a.method = ClusterMethod::single;
  return a;
}

// Half the median Euclidean distance over all unordered token pairs.
template <typename S>
double auto_eps(const Matrix<S>& points) {
  const Matrix<double> p = points.template cast<double>();
  const Index n = p.rows();
  if (n < 2) return 1.0;
  const Matrix<double> d2 = detail::pairwise_sq_distances(p);
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) dist.push_back(std::sqrt(d2(i, j)));
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double median = dist[mid];
  if (dist.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return median > 0.0 ? 0.5 * median : 1.0;
}

// Lloyd iterations from kmeans++ seeding. Clusters that empty out are refilled
// with the point farthest from its own centroid.
template <typename S>
ClusterAssignment kmeans(const Matrix<S>& points, int k, std::uint64_t seed, int max_iters = 50) {
  const Matrix<double> p = points.template cast<double>();
  detail::check_finite("kmeans", p);
  const Index n = p.rows();
  if (k < 1 || k > n)
    throw ParameterError("kmeans: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix<double> centroids(k, p.cols());
  {
    std::uniform_int_distribution<Index> pick(0, n - 1);
    centroids.row(0) = p.row(pick(rng));
    Eigen::VectorXd nearest = (p.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
      const double total = nearest.sum();
      Index chosen = 0;
      if (total > 0.0) {
        double target = unit(rng) * total;
        chosen = n - 1;
        for (Index i = 0; i < n; ++i) {
          target -= nearest(i);
          if (target < 0.0 && nearest(i) > 0.0) {
            chosen = i;
            break;
          }
        }
      } else {
        chosen = static_cast<Index>(c % n);
      }
      centroids.row(c) = p.row(chosen);
      nearest = nearest.cwiseMin((p.rowwise() - centroids.row(c)).rowwise().squaredNorm());
    }
  }

  ClusterAssignment out;
  out.method = ClusterMethod::kmeans;
  out.k = k;
  out.seed = seed;
  out.labels.assign(static_cast<std::size_t>(n), -1);

  auto assign = [&](std::vector<int>& labels) {
    double objective = 0.0;
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (p.row(i) - centroids.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      labels[static_cast<std::size_t>(i)] = best;
      objective += best_d;
    }
    return objective;
  };

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < std::max(1, max_iters); ++iter) {
    std::vector<int> next(labels.size());
    const double objective = assign(next);
    out.objective_history.push_back(objective);
    const bool converged = next == labels;
    labels = std::move(next);
    if (converged) break;

    Matrix<double> sums = Matrix<double>::Zero(k, p.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(labels[static_cast<std::size_t>(i)]) += p.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0) centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      Index far = -1;
      double far_d = -1.0;
      for (Index i = 0; i < n; ++i) {
        const int li = labels[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(li)] < 2) continue;
        const double d = (p.row(i) - centroids.row(li)).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far < 0) break;
      --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
      labels[static_cast<std::size_t>(far)] = c;
      counts[static_cast<std::size_t>(c)] = 1;
      centroids.row(c) = p.row(far);
    }
  }

  // Compact away clusters that stayed empty (only possible with duplicate points).
  std::vector<int> remap(static_cast<std::size_t>(k), -1);
  int used = 0;
  for (int l : labels)
    if (remap[static_cast<std::size_t>(l)] < 0) remap[static_cast<std::size_t>(l)] = 0;
  Matrix<double> kept(k, p.cols());
  for (int c = 0; c < k; ++c)
    if (remap[static_cast<std::size_t>(c)] == 0) {
      remap[static_cast<std::size_t>(c)] = used;
      kept.row(used++) = centroids.row(c);
    }
  for (auto& l : labels) l = remap[static_cast<std::size_t>(l)];
  out.labels = std::move(labels);
  out.num_clusters = used;
  out.centroids = kept.topRows(used);
  return out;
}

// Density-based clustering. Points are visited in index order; a border point
// joins the first cluster whose expansion reaches it; points that are neither
// core nor reachable from a core are noise.
template <typename S>
ClusterAssignment dbscan(const Matrix<S>& points, double eps, int min_pts) {
  if (!(eps > 0.0)) throw ParameterError("dbscan: eps must be positive");
  if (min_pts < 1) throw ParameterError("dbscan: min_pts must be at least 1");
  const Matrix<double> p = points.template cast<double>();
  detail::check_finite("dbscan", p);
  const Index n = p.rows();
  const Matrix<double> d2 = detail::pairwise_sq_distances(p);
  const double eps2 = eps * eps;

  std::vector<std::vector<Index>> neighbors(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i == j || d2(i, j) <= eps2) neighbors[static_cast<std::size_t>(i)].push_back(j);

  constexpr int kUnvisited = -2;
  std::vector<int> labels(static_cast<std::size_t>(n), kUnvisited);
  int cluster = 0;
  std::vector<Index> queue;
  for (Index i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] != kUnvisited) continue;
    const auto& ni = neighbors[static_cast<std::size_t>(i)];
    if (static_cast<int>(ni.size()) < min_pts) {
      labels[static_cast<std::size_t>(i)] = kNoise;
      continue;
    }
    labels[static_cast<std::size_t>(i)] = cluster;
    queue.assign(ni.begin(), ni.end());
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const Index j = queue[q];
      int& lj = labels[static_cast<std::size_t>(j)];
      if (lj == kNoise) lj = cluster;
      if (lj != kUnvisited) continue;
      lj = cluster;
      const auto& nj = neighbors[static_cast<std::size_t>(j)];
      if (static_cast<int>(nj.size()) >= min_pts) queue.insert(queue.end(), nj.begin(), nj.end());
    }
    ++cluster;
  }

  ClusterAssignment out;
  out.labels = std::move(labels);
  out.num_clusters = cluster;
  out.method = ClusterMethod::dbscan;
  out.eps = eps;
  out.min_pts = min_pts;
  return out;
}

template <typename S>
ClusterAssignment cluster_tokens(const Matrix<S>& points, const ClusterConfig& cfg) {
  switch (cfg.method) {
    case ClusterMethod::single:
      return single_cluster(points.rows());
    case ClusterMethod::kmeans:
      return kmeans(points, std::min<int>(cfg.k, static_cast<int>(points.rows())), cfg.seed, cfg.max_iters);
    case ClusterMethod::dbscan:
      return dbscan(points, cfg.eps ? *cfg.eps : auto_eps(points), cfg.min_pts);
  }
  throw ParameterError("cluster_tokens: unknown method");
}

// Token indices per normalization group: clusters 0..K-1 then, if present,
// the noise tokens as one extra group.
inline std::vector<std::vector<Index>> normalization_groups(const ClusterAssignment& a) {
  std::vector<std::vector<Index>> groups(static_cast<std::size_t>(a.num_clusters));
  std::vector<Index> noise;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const int l = a.labels[i];
    if (l == kNoise) noise.push_back(static_cast<Index>(i));
    else if (l >= 0 && l < a.num_clusters) groups[static_cast<std::size_t>(l)].push_back(static_cast<Index>(i));
    else throw ParameterError("label " + std::to_string(l) + " outside [-1, " + std::to_string(a.num_clusters) + ")");
  }
  if (!noise.empty()) groups.push_back(std::move(noise));
  return groups;
}

inline constexpr double kNormEps = 1e-5;

// Per-column standardization over rows with population variance.
template <typename S>
Tensor<S> standardize_columns(const Tensor<S>& x, S eps = static_cast<S>(kNormEps)) {
  const Tensor<S> centered = sub(x, mean_rows(x));
  const Tensor<S> var = mean_rows(mul(centered, centered));
  return div(centered, sqrt(add_scalar(var, eps)));
}

template <typename S>
FeatureMap<S> instance_norm(const FeatureMap<S>& f) {
  return FeatureMap<S>(standardize_columns(f.values), f.height, f.width);
}

template <typename S>
FeatureMap<S> cluster_instance_norm(const FeatureMap<S>& f, const ClusterAssignment& a) {
  if (static_cast<Index>(a.labels.size()) != f.tokens())
    throw ShapeError("cluster_instance_norm: " + std::to_string(a.labels.size()) + " labels for " +
                     std::to_string(f.tokens()) + " tokens");
  const auto groups = normalization_groups(a);
  if (groups.size() == 1) return instance_norm(f);

  std::vector<Tensor<S>> parts;
  std::vector<Index> position(static_cast<std::size_t>(f.tokens()));
  Index offset = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.size(); ++i) position[static_cast<std::size_t>(g[i])] = offset + static_cast<Index>(i);
    offset += static_cast<Index>(g.size());
    parts.push_back(standardize_columns(gather_rows(f.values, g)));
  }
  const Tensor<S> stacked = concat(std::span<const Tensor<S>>(parts), 0);
  return FeatureMap<S>(gather_rows(stacked, std::move(position)), f.height, f.width);
}

}  // namespace mgfc
