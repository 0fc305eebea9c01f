#pragma once

// Synthetic domain-shift scenes, styling, and the on-disk formats.
//
// Tensor file (".mgt"), all integers little-endian:
//   "MGT1" | dtype u8 (0 = f32) | ndim u8 | ndim x u64 dims | row-major payload
//
// Checkpoint file (".mgc"):
//   "MGC1" | count u32 | count x (name_len u16 | name | tensor) | frozen hash (32 bytes)

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mgfc/tensor.hpp"

namespace mgfc {

// ---------------------------------------------------------------------------
// Serialization

struct Blob {
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  std::uint64_t element_count() const;
  bool operator==(const Blob&) const = default;
};

using Sha256 = std::array<std::uint8_t, 32>;

Sha256 sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_tensor(const Blob& blob);
// Decodes one tensor starting at `offset` and advances it past the payload.
Blob decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset);

void write_tensor(const std::filesystem::path& path, const Blob& blob);
Blob read_tensor(const std::filesystem::path& path);

struct NamedBlob {
  std::string name;
  Blob blob;
};

struct Checkpoint {
  std::vector<NamedBlob> entries;
  Sha256 frozen_hash{};

  const Blob* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);
// Throws IntegrityError when the stored hash differs from `expected`.
Checkpoint read_checkpoint(const std::filesystem::path& path, const Sha256& expected);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

template <typename S>
Blob to_blob(const Matrix<S>& m) {
  Blob b;
  b.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  b.data.resize(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.size(); ++i) b.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return b;
}

template <typename S>
Matrix<S> to_matrix(const Blob& b, Index rows, Index cols) {
  if (static_cast<Index>(b.element_count()) != rows * cols)
    throw ShapeError("blob with " + std::to_string(b.element_count()) + " entries cannot fill " + dims_string(rows, cols));
  Matrix<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(b.data[static_cast<std::size_t>(i)]);
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct StyleParams {
  double hue_degrees = 0.0;
  double gamma = 1.0;
  double contrast = 1.0;
  double noise_sigma = 0.0;
  std::array<double, 3> tint{1.0, 1.0, 1.0};

  void validate() const;
  bool operator==(const StyleParams&) const = default;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct StyleRange {
  Range hue_degrees{0, 0};
  Range gamma{1, 1};
  Range contrast{1, 1};
  Range noise_sigma{0, 0};
  Range tint{1, 1};
};

struct DomainSpec {
  std::string name;
  StyleRange style;
};

DomainSpec source_domain();
DomainSpec target_domain();
// True when no sampled parameter range of `a` intersects the one of `b`.
bool style_ranges_disjoint(const StyleRange& a, const StyleRange& b);

enum class ShapeKind { circle = 1, square = 2, triangle = 3 };

struct Shape {
  ShapeKind kind = ShapeKind::circle;
  int label = 1;
  double cx = 0.0, cy = 0.0;  // centre in pixel units
  double size = 0.0;          // circle diameter, square side, triangle base and height
};

// Point-in-shape test at continuous image coordinates.
bool shape_contains(const Shape& s, double x, double y);

struct SceneConfig {
  Index height = 64;
  Index width = 64;
  int classes = 4;  // background plus up to three shape classes
  int min_shapes = 1;
  int max_shapes = 3;
  double min_size = 0.25;  // fraction of the shorter image side
  double max_size = 0.4;
};

struct Sample {
  Index height = 0;
  Index width = 0;
  Matrix<float> image;      // height x (width * 3), interleaved RGB in [0, 1]
  std::vector<int> labels;  // height * width, row-major
  int domain = 0;
  StyleParams style;
  std::uint64_t seed = 0;
  std::vector<Shape> shapes;
};

// Renders a scene from `seed`, then styles it with parameters drawn from the
// domain's ranges using the same generator.
Sample generate_sample(std::uint64_t seed, const DomainSpec& domain, int domain_id, const SceneConfig& scene);
// tint, gamma, contrast about 0.5, hue rotation about the grey axis, noise,
// clamp. Labels are untouched.
Sample apply_style(Sample s, const StyleParams& p);

// Majority class of each patch x patch cell (ties go to the lower id).
std::vector<int> pool_labels(std::span<const int> labels, Index height, Index width, Index patch, int classes);

// ---------------------------------------------------------------------------
// Dataset directory

struct DatasetConfig {
  SceneConfig scene;
  int source_count = 200;
  int target_count = 50;
  std::uint64_t seed = 0;
  DomainSpec source = source_domain();
  DomainSpec target = target_domain();
};

struct ManifestEntry {
  int index = 0;
  std::string domain;
  std::uint64_t seed = 0;
};

std::uint64_t sample_seed(std::uint64_t dataset_seed, int domain_id, int index);

// <root>/<domain>/<index>.img.mgt and .lbl.mgt, <root>/dataset.cfg, and
// <root>/manifest.txt, written last as the completion marker.
void write_dataset(const std::filesystem::path& root, const DatasetConfig& cfg);

struct DatasetInfo {
  int classes = 0;
  Index height = 0;
  Index width = 0;
  std::vector<ManifestEntry> manifest;
};

DatasetInfo read_dataset_info(const std::filesystem::path& root);
std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& domain, int limit = 0);
Blob image_blob(const Sample& s);
Blob label_blob(const Sample& s);

}  // namespace mgfc
