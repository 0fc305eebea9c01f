#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "mgfc/data.hpp"

namespace mgfc {

namespace {

struct Rgb {
  double r, g, b;
};

// Base colours for background, circle, square, triangle.
constexpr Rgb kClassColour[4] = {{0.45, 0.50, 0.42}, {0.85, 0.30, 0.25}, {0.25, 0.40, 0.85}, {0.90, 0.85, 0.25}};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double uniform(std::mt19937_64& rng, const Range& r) { return uniform(rng, r.lo, r.hi); }

bool overlaps(const Range& a, const Range& b) { return a.lo <= b.hi && b.lo <= a.hi; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void StyleParams::validate() const {
  if (!(gamma > 0.0)) throw ParameterError("style: gamma must be positive");
  if (!(contrast > 0.0)) throw ParameterError("style: contrast must be positive");
  if (!(noise_sigma >= 0.0)) throw ParameterError("style: noise sigma must be non-negative");
  for (double t : tint)
    if (!(t > 0.0)) throw ParameterError("style: tint multipliers must be positive");
}

DomainSpec source_domain() {
  DomainSpec d;
  d.name = "source";
  d.style.hue_degrees = {-10.0, 10.0};
  d.style.gamma = {0.85, 1.15};
  d.style.contrast = {0.9, 1.1};
  d.style.noise_sigma = {0.0, 0.02};
  d.style.tint = {0.92, 1.08};
  return d;
}

DomainSpec target_domain() {
  DomainSpec d;
  d.name = "target";
  d.style.hue_degrees = {25.0, 45.0};
  d.style.gamma = {1.3, 1.6};
  d.style.contrast = {0.6, 0.8};
  d.style.noise_sigma = {0.03, 0.05};
  d.style.tint = {1.12, 1.25};
  return d;
}

bool style_ranges_disjoint(const StyleRange& a, const StyleRange& b) {
  return !overlaps(a.hue_degrees, b.hue_degrees) && !overlaps(a.gamma, b.gamma) && !overlaps(a.contrast, b.contrast) &&
         !overlaps(a.noise_sigma, b.noise_sigma) && !overlaps(a.tint, b.tint);
}

bool shape_contains(const Shape& s, double x, double y) {
  const double h = 0.5 * s.size;
  switch (s.kind) {
    case ShapeKind::circle:
      return (x - s.cx) * (x - s.cx) + (y - s.cy) * (y - s.cy) <= h * h;
    case ShapeKind::square:
      return std::abs(x - s.cx) <= h && std::abs(y - s.cy) <= h;
    case ShapeKind::triangle: {
      // Apex at the top centre, base along the bottom edge of the bounding box.
      const double ax = s.cx, ay = s.cy - h, bx = s.cx - h, by = s.cy + h, cx = s.cx + h, cy = s.cy + h;
      auto edge = [](double px, double py, double qx, double qy, double rx, double ry) {
        return (qx - px) * (ry - py) - (qy - py) * (rx - px);
      };
      const double e0 = edge(ax, ay, bx, by, x, y), e1 = edge(bx, by, cx, cy, x, y), e2 = edge(cx, cy, ax, ay, x, y);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

Sample apply_style(Sample s, const StyleParams& p) {
  p.validate();
  const double theta = p.hue_degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta), k = 1.0 / std::sqrt(3.0);
  // Rodrigues rotation about the grey axis (1, 1, 1) / sqrt(3).
  double rot[3][3];
  const double u[3] = {k, k, k};
  const double cross[3][3] = {{0, -u[2], u[1]}, {u[2], 0, -u[0]}, {-u[1], u[0], 0}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rot[i][j] = (i == j ? cs : 0.0) + sn * cross[i][j] + (1.0 - cs) * u[i] * u[j];

  std::mt19937_64 rng(s.seed ^ 0xa5a5a5a5c3c3c3c3ULL);
  std::normal_distribution<double> noise(0.0, p.noise_sigma > 0.0 ? p.noise_sigma : 1.0);
  for (Index y = 0; y < s.height; ++y)
    for (Index x = 0; x < s.width; ++x) {
      double c[3];
      for (int ch = 0; ch < 3; ++ch) {
        double v = s.image(y, x * 3 + ch);
        v *= p.tint[ch];
        if (p.gamma != 1.0) v = std::pow(std::max(v, 0.0), p.gamma);
        if (p.contrast != 1.0) v = (v - 0.5) * p.contrast + 0.5;
        c[ch] = v;
      }
      if (p.hue_degrees != 0.0) {
        const double r = c[0], g = c[1], b = c[2];
        for (int ch = 0; ch < 3; ++ch) c[ch] = rot[ch][0] * r + rot[ch][1] * g + rot[ch][2] * b;
      }
      for (int ch = 0; ch < 3; ++ch) {
        double v = c[ch];
        if (p.noise_sigma > 0.0) v += noise(rng);
        s.image(y, x * 3 + ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  s.style = p;
  return s;
}

Sample generate_sample(std::uint64_t seed, const DomainSpec& domain, int domain_id, const SceneConfig& scene) {
  if (scene.classes < 2 || scene.classes > 4) throw ParameterError("scene: classes must lie in [2, 4]");
  if (scene.height < 4 || scene.width < 4) throw ParameterError("scene: image too small");
  if (scene.min_shapes < 0 || scene.max_shapes < scene.min_shapes) throw ParameterError("scene: bad shape count range");
  if (!(scene.min_size > 0.0) || scene.max_size < scene.min_size || scene.max_size > 1.0)
    throw ParameterError("scene: bad shape size range");

  std::mt19937_64 rng(seed);
  Sample s;
  s.height = scene.height;
  s.width = scene.width;
  s.domain = domain_id;
  s.seed = seed;
  s.image.resize(scene.height, scene.width * 3);
  s.labels.assign(static_cast<std::size_t>(scene.height * scene.width), 0);

  // Textured background: a random plane wave plus per-pixel jitter.
  const double amp = uniform(rng, 0.03, 0.08);
  const double fx = uniform(rng, -3.0, 3.0), fy = uniform(rng, -3.0, 3.0), phase = uniform(rng, 0.0, 6.283);
  const Rgb bg = kClassColour[0];
  for (Index y = 0; y < s.height; ++y)
    for (Index x = 0; x < s.width; ++x) {
      const double wave =
          amp * std::sin(2.0 * std::numbers::pi * (fx * x / double(s.width) + fy * y / double(s.height)) + phase);
      const double base[3] = {bg.r, bg.g, bg.b};
      for (int ch = 0; ch < 3; ++ch) s.image(y, x * 3 + ch) = static_cast<float>(base[ch] + wave + uniform(rng, -0.03, 0.03));
    }

  const int count = std::uniform_int_distribution<int>(scene.min_shapes, scene.max_shapes)(rng);
  const double side = static_cast<double>(std::min(scene.height, scene.width));
  for (int n = 0; n < count; ++n) {
    Shape shape;
    shape.label = std::uniform_int_distribution<int>(1, scene.classes - 1)(rng);
    shape.kind = static_cast<ShapeKind>(shape.label);
    shape.size = uniform(rng, scene.min_size * side, scene.max_size * side);
    const double h = 0.5 * shape.size;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      shape.cx = uniform(rng, h, double(s.width) - h);
      shape.cy = uniform(rng, h, double(s.height) - h);
      placed = std::none_of(s.shapes.begin(), s.shapes.end(), [&](const Shape& o) {
        const double reach = h + 0.5 * o.size + 1.0;
        return std::abs(o.cx - shape.cx) < reach && std::abs(o.cy - shape.cy) < reach;
      });
    }
    if (!placed && n >= scene.min_shapes) break;
    if (!placed)
      throw GenerationError("generate_sample: no room for shape " + std::to_string(n) + " after 100 attempts (seed " +
                            std::to_string(seed) + ")");
    s.shapes.push_back(shape);
  }

  for (const auto& shape : s.shapes) {
    const Rgb c = kClassColour[shape.label];
    const double tone[3] = {c.r + uniform(rng, -0.05, 0.05), c.g + uniform(rng, -0.05, 0.05), c.b + uniform(rng, -0.05, 0.05)};
    for (Index y = 0; y < s.height; ++y)
      for (Index x = 0; x < s.width; ++x) {
        if (!shape_contains(shape, x + 0.5, y + 0.5)) continue;
        s.labels[static_cast<std::size_t>(y * s.width + x)] = shape.label;
        for (int ch = 0; ch < 3; ++ch) s.image(y, x * 3 + ch) = static_cast<float>(tone[ch]);
      }
  }
  s.image = s.image.cwiseMax(0.0f).cwiseMin(1.0f);

  StyleParams p;
  const auto& r = domain.style;
  p.hue_degrees = uniform(rng, r.hue_degrees);
  p.gamma = uniform(rng, r.gamma);
  p.contrast = uniform(rng, r.contrast);
  p.noise_sigma = uniform(rng, r.noise_sigma);
  for (auto& t : p.tint) t = uniform(rng, r.tint);
  return apply_style(std::move(s), p);
}

std::vector<int> pool_labels(std::span<const int> labels, Index height, Index width, Index patch, int classes) {
  if (static_cast<Index>(labels.size()) != height * width) throw ShapeError("pool_labels: label count mismatch");
  if (patch < 1 || height % patch != 0 || width % patch != 0) throw ShapeError("pool_labels: patch does not tile image");
  const Index gh = height / patch, gw = width / patch;
  std::vector<int> out(static_cast<std::size_t>(gh * gw));
  std::vector<int> votes(static_cast<std::size_t>(classes));
  for (Index gy = 0; gy < gh; ++gy)
    for (Index gx = 0; gx < gw; ++gx) {
      std::fill(votes.begin(), votes.end(), 0);
      for (Index dy = 0; dy < patch; ++dy)
        for (Index dx = 0; dx < patch; ++dx) {
          const int l = labels[static_cast<std::size_t>((gy * patch + dy) * width + gx * patch + dx)];
          if (l < 0 || l >= classes) throw DataError("pool_labels: label " + std::to_string(l) + " out of range");
          ++votes[static_cast<std::size_t>(l)];
        }
      out[static_cast<std::size_t>(gy * gw + gx)] =
          static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  return out;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, int domain_id, int index) {
  return splitmix64(splitmix64(dataset_seed) ^ (static_cast<std::uint64_t>(domain_id) << 32) ^
                    static_cast<std::uint64_t>(index));
}

Blob image_blob(const Sample& s) {
  Blob b;
  b.dims = {static_cast<std::uint64_t>(s.height), static_cast<std::uint64_t>(s.width), 3};
  b.data.assign(s.image.data(), s.image.data() + s.image.size());
  return b;
}

Blob label_blob(const Sample& s) {
  Blob b;
  b.dims = {static_cast<std::uint64_t>(s.height), static_cast<std::uint64_t>(s.width)};
  b.data.reserve(s.labels.size());
  for (int l : s.labels) b.data.push_back(static_cast<float>(l));
  return b;
}

void write_dataset(const std::filesystem::path& root, const DatasetConfig& cfg) {
  namespace fs = std::filesystem;
  if (!style_ranges_disjoint(cfg.source.style, cfg.target.style))
    throw ConfigError("gen-data: source and target style ranges overlap");
  fs::create_directories(root);
  fs::remove(root / "manifest.txt");
  {
    std::ofstream meta(root / "dataset.cfg", std::ios::trunc);
    meta << "classes=" << cfg.scene.classes << "\nheight=" << cfg.scene.height << "\nwidth=" << cfg.scene.width << "\n";
    if (!meta) throw DataError("cannot write " + (root / "dataset.cfg").string());
  }
  std::ostringstream manifest;
  const std::pair<const DomainSpec*, int> splits[] = {{&cfg.source, cfg.source_count}, {&cfg.target, cfg.target_count}};
  for (int d = 0; d < 2; ++d) {
    const auto& [domain, count] = splits[d];
    const fs::path dir = root / domain->name;
    fs::create_directories(dir);
    for (int i = 0; i < count; ++i) {
      const std::uint64_t seed = sample_seed(cfg.seed, d, i);
      const Sample s = generate_sample(seed, *domain, d, cfg.scene);
      write_tensor(dir / (std::to_string(i) + ".img.mgt"), image_blob(s));
      write_tensor(dir / (std::to_string(i) + ".lbl.mgt"), label_blob(s));
      manifest << i << ' ' << domain->name << ' ' << seed << '\n';
    }
  }
  const std::string text = manifest.str();
  const fs::path tmp = root / "manifest.txt.partial";
  write_file(tmp, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  fs::rename(tmp, root / "manifest.txt");
}

DatasetInfo read_dataset_info(const std::filesystem::path& root) {
  DatasetInfo info;
  std::ifstream meta(root / "dataset.cfg");
  if (!meta) throw DataError("dataset " + root.string() + " has no dataset.cfg");
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const long value = std::stol(line.substr(eq + 1));
    if (key == "classes") info.classes = static_cast<int>(value);
    else if (key == "height") info.height = value;
    else if (key == "width") info.width = value;
  }
  std::ifstream manifest(root / "manifest.txt");
  if (!manifest) throw DataError("dataset " + root.string() + " is incomplete: manifest.txt missing");
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    ManifestEntry e;
    if (!(in >> e.index >> e.domain >> e.seed)) throw DataError("manifest: malformed line '" + line + "'");
    info.manifest.push_back(e);
  }
  return info;
}

std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& domain, int limit) {
  const DatasetInfo info = read_dataset_info(root);
  std::vector<Sample> out;
  const int domain_id = domain == "source" ? 0 : domain == "target" ? 1 : -1;
  for (const auto& e : info.manifest) {
    if (e.domain != domain) continue;
    if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
    const auto dir = root / domain;
    const Blob img = read_tensor(dir / (std::to_string(e.index) + ".img.mgt"));
    const Blob lbl = read_tensor(dir / (std::to_string(e.index) + ".lbl.mgt"));
    if (img.dims.size() != 3 || img.dims[2] != 3 || lbl.dims.size() != 2 || lbl.dims[0] != img.dims[0] ||
        lbl.dims[1] != img.dims[1])
      throw DataError("sample " + std::to_string(e.index) + " in " + domain + " has inconsistent dims");
    Sample s;
    s.height = static_cast<Index>(img.dims[0]);
    s.width = static_cast<Index>(img.dims[1]);
    s.image = Eigen::Map<const Matrix<float>>(img.data.data(), s.height, s.width * 3);
    s.labels.reserve(lbl.data.size());
    for (float f : lbl.data) {
      const int l = static_cast<int>(f);
      if (static_cast<float>(l) != f || l < 0 || (info.classes > 0 && l >= info.classes))
        throw DataError("sample " + std::to_string(e.index) + " in " + domain + " has invalid label " + std::to_string(f));
      s.labels.push_back(l);
    }
    s.domain = domain_id;
    s.seed = e.seed;
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("dataset " + root.string() + " has no samples in domain '" + domain + "'");
  return out;
}

}  // namespace mgfc
