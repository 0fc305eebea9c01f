#pragma once

// Straight-line reference evaluations used by the tests. Nothing here calls
// into the library's math; matrices are plain nested vectors and every formula
// is spelled out with loops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "mgfc/tensor.hpp"

namespace oracle {

using Grid = std::vector<std::vector<double>>;

inline Grid zeros(std::size_t r, std::size_t c) { return Grid(r, std::vector<double>(c, 0.0)); }

template <typename S>
Grid from(const mgfc::Matrix<S>& m) {
  Grid g = zeros(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g[i].size(); ++j) g[i][j] = static_cast<double>(m(static_cast<long>(i), static_cast<long>(j)));
  return g;
}

template <typename S>
Grid from(const mgfc::Tensor<S>& t) {
  return from(t.value());
}

inline double max_abs_diff(const Grid& a, const Grid& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
  }
  return m;
}

template <typename S>
double max_abs_diff(const mgfc::Matrix<S>& a, const Grid& b) {
  return max_abs_diff(from(a), b);
}

inline Grid matmul(const Grid& a, const Grid& b) {
  Grid out = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  return out;
}

inline Grid transpose(const Grid& a) {
  Grid out = zeros(a[0].size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
  return out;
}

inline Grid plus(const Grid& a, const Grid& b) {
  Grid out = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] += b[i][j];
  return out;
}

// Adds a 1 x c row to every row.
inline Grid plus_row(const Grid& a, const Grid& row) {
  Grid out = a;
  for (auto& r : out)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[0][j];
  return out;
}

inline Grid scaled(const Grid& a, double s) {
  Grid out = a;
  for (auto& r : out)
    for (auto& v : r) v *= s;
  return out;
}

inline Grid softmax_rows(const Grid& a) {
  Grid out = a;
  for (auto& r : out) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : r) m = std::max(m, v);
    double z = 0.0;
    for (auto& v : r) {
      v = std::exp(v - m);
      z += v;
    }
    for (auto& v : r) v /= z;
  }
  return out;
}

inline Grid hconcat(const std::vector<Grid>& parts) {
  Grid out = zeros(parts[0].size(), 0);
  for (const auto& p : parts)
    for (std::size_t i = 0; i < p.size(); ++i) out[i].insert(out[i].end(), p[i].begin(), p[i].end());
  return out;
}

inline Grid relu(const Grid& a) {
  Grid out = a;
  for (auto& r : out)
    for (auto& v : r) v = std::max(v, 0.0);
  return out;
}

// softmax(Q K^T / sqrt(d)) V
inline Grid attention(const Grid& q, const Grid& k, const Grid& v) {
  const double d = static_cast<double>(q[0].size());
  Grid w = zeros(q.size(), k.size());
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t j = 0; j < k.size(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < q[0].size(); ++c) s += q[i][c] * k[j][c];
      w[i][j] = s / std::sqrt(d);
    }
  return matmul(softmax_rows(w), v);
}

// F + (S (T W1 + b1) + F) W2 + b2 with S = softmax(F T^T / sqrt(c)).
inline Grid token_calibrate(const Grid& f, const Grid& t, const Grid& w1, const Grid& b1, const Grid& w2, const Grid& b2) {
  const std::size_t hw = f.size(), c = f[0].size(), m = t.size();
  Grid s = zeros(hw, m);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) acc += f[i][k] * t[j][k];
      s[i][j] = acc / std::sqrt(static_cast<double>(c));
    }
  s = softmax_rows(s);
  Grid proj = zeros(m, c);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = 0; k < c; ++k) {
      double acc = b1[0][k];
      for (std::size_t l = 0; l < c; ++l) acc += t[j][l] * w1[l][k];
      proj[j][k] = acc;
    }
  Grid out = zeros(hw, c);
  for (std::size_t i = 0; i < hw; ++i) {
    std::vector<double> mixed(c, 0.0);
    for (std::size_t k = 0; k < c; ++k) {
      double acc = f[i][k];
      for (std::size_t j = 0; j < m; ++j) acc += s[i][j] * proj[j][k];
      mixed[k] = acc;
    }
    for (std::size_t k = 0; k < c; ++k) {
      double acc = f[i][k] + b2[0][k];
      for (std::size_t l = 0; l < c; ++l) acc += mixed[l] * w2[l][k];
      out[i][k] = acc;
    }
  }
  return out;
}

// Per-channel Sobel magnitude of an H x W x c map stored as HW x c, with
// replicate padding, by direct convolution.
inline Grid sobel(const Grid& f, long height, long width) {
  static const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  const std::size_t c = f[0].size();
  Grid out = zeros(f.size(), c);
  auto at = [&](long y, long x, std::size_t ch) {
    y = std::clamp(y, 0L, height - 1);
    x = std::clamp(x, 0L, width - 1);
    return f[static_cast<std::size_t>(y * width + x)][ch];
  };
  for (long y = 0; y < height; ++y)
    for (long x = 0; x < width; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double gx = 0.0, gy = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const double v = at(y + dy, x + dx, ch);
            gx += kx[dy + 1][dx + 1] * v;
            gy += ky[dy + 1][dx + 1] * v;
          }
        out[static_cast<std::size_t>(y * width + x)][ch] = std::sqrt(gx * gx + gy * gy + 1e-12);
      }
  return out;
}

// Standardizes every column over the given rows, population variance.
inline void standardize_rows(Grid& out, const Grid& f, const std::vector<std::size_t>& rows, double eps = 1e-5) {
  const std::size_t c = f[0].size();
  for (std::size_t k = 0; k < c; ++k) {
    double mu = 0.0;
    for (auto r : rows) mu += f[r][k];
    mu /= static_cast<double>(rows.size());
    double var = 0.0;
    for (auto r : rows) var += (f[r][k] - mu) * (f[r][k] - mu);
    var /= static_cast<double>(rows.size());
    for (auto r : rows) out[r][k] = (f[r][k] - mu) / std::sqrt(var + eps);
  }
}

inline Grid instance_norm(const Grid& f, double eps = 1e-5) {
  Grid out = f;
  std::vector<std::size_t> all(f.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  standardize_rows(out, f, all, eps);
  return out;
}

// Reference DBSCAN: cores by neighbor count, clusters as connected components
// of the core graph numbered by their smallest core index, border points
// given to the lowest-numbered adjacent cluster.
inline std::vector<int> dbscan(const Grid& p, double eps, int min_pts) {
  const std::size_t n = p.size();
  auto dist = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t k = 0; k < p[a].size(); ++k) s += (p[a][k] - p[b][k]) * (p[a][k] - p[b][k]);
    return std::sqrt(s);
  };
  std::vector<std::vector<bool>> near(n, std::vector<bool>(n, false));
  std::vector<bool> core(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    int count = 0;
    for (std::size_t j = 0; j < n; ++j) {
      near[i][j] = i == j || dist(i, j) <= eps;
      count += near[i][j];
    }
    core[i] = count >= min_pts;
  }
  std::vector<int> label(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i] || label[i] >= 0) continue;
    std::vector<std::size_t> stack = {i};
    label[i] = next;
    while (!stack.empty()) {
      const std::size_t a = stack.back();
      stack.pop_back();
      for (std::size_t b = 0; b < n; ++b)
        if (core[b] && near[a][b] && label[b] < 0) {
          label[b] = next;
          stack.push_back(b);
        }
    }
    ++next;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    int best = -1;
    for (std::size_t j = 0; j < n; ++j)
      if (core[j] && near[i][j] && (best < 0 || label[j] < best)) best = label[j];
    label[i] = best;
  }
  return label;
}

// Equality of two labelings up to renaming the non-negative labels; -1 must
// match exactly.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] < 0) != (b[i] < 0)) return false;
    if (a[i] < 0) continue;
    auto [it1, new1] = ab.emplace(a[i], b[i]);
    auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

inline Grid random_grid(std::mt19937_64& rng, std::size_t r, std::size_t c, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  Grid g = zeros(r, c);
  for (auto& row : g)
    for (auto& v : row) v = n(rng);
  return g;
}

inline mgfc::Matrix<double> to_matrix(const Grid& g) {
  mgfc::Matrix<double> m(static_cast<long>(g.size()), static_cast<long>(g.empty() ? 0 : g[0].size()));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g[i].size(); ++j) m(static_cast<long>(i), static_cast<long>(j)) = g[i][j];
  return m;
}

}  // namespace oracle
