#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "mgfc/data.hpp"

namespace mgfc {

namespace {

constexpr char kTensorMagic[4] = {'M', 'G', 'T', '1'};
constexpr char kCheckpointMagic[4] = {'M', 'G', 'C', '1'};
constexpr std::uint8_t kDtypeF32 = 0;

static_assert(sizeof(float) == 4);

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t& offset, const char* what) {
  if (offset > bytes.size() || bytes.size() - offset < sizeof(T))
    throw FormatError(std::string("truncated ") + what, offset);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  offset += sizeof(T);
  return static_cast<T>(v);
}

void expect_magic(std::span<const std::uint8_t> bytes, std::size_t& offset, const char (&magic)[4]) {
  if (bytes.size() < offset + 4) throw FormatError("truncated magic", offset);
  if (std::memcmp(bytes.data() + offset, magic, 4) != 0)
    throw FormatError(std::string("bad magic, expected ") + std::string(magic, 4), offset);
  offset += 4;
}

}  // namespace

std::uint64_t Blob::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

const Blob* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e.blob;
  return nullptr;
}

Sha256 sha256(std::span<const std::uint8_t> bytes) {
  Sha256 out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
    throw Error("sha256: digest failed");
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto b : bytes) {
    s += digits[b >> 4];
    s += digits[b & 0xf];
  }
  return s;
}

std::vector<std::uint8_t> encode_tensor(const Blob& blob) {
  if (blob.dims.size() > 255) throw ShapeError("tensor rank exceeds 255");
  if (blob.element_count() != blob.data.size())
    throw ShapeError("tensor dims cover " + std::to_string(blob.element_count()) + " entries but payload has " +
                     std::to_string(blob.data.size()));
  std::vector<std::uint8_t> out(kTensorMagic, kTensorMagic + 4);
  out.push_back(kDtypeF32);
  out.push_back(static_cast<std::uint8_t>(blob.dims.size()));
  for (auto d : blob.dims) put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + 4 * blob.data.size());
  for (float f : blob.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Blob decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  expect_magic(bytes, offset, kTensorMagic);
  const std::size_t dtype_at = offset;
  const auto dtype = get_le<std::uint8_t>(bytes, offset, "dtype");
  if (dtype != kDtypeF32) throw FormatError("unsupported dtype code " + std::to_string(dtype), dtype_at);
  const auto ndim = get_le<std::uint8_t>(bytes, offset, "rank");
  Blob b;
  std::uint64_t count = 1;
  for (int i = 0; i < ndim; ++i) {
    const std::size_t at = offset;
    const auto d = get_le<std::uint64_t>(bytes, offset, "dims");
    if (d != 0 && count > (std::uint64_t{1} << 40) / d) throw FormatError("implausible tensor size", at);
    count *= d;
    b.dims.push_back(d);
  }
  const std::uint64_t remaining = bytes.size() - offset;
  if (remaining / 4 < count)
    throw FormatError("truncated payload: need " + std::to_string(4 * count) + " bytes, have " + std::to_string(remaining),
                      offset);
  b.data.resize(static_cast<std::size_t>(count));
  for (auto& f : b.data) f = std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset, "payload"));
  return b;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

void write_tensor(const std::filesystem::path& path, const Blob& blob) { write_file(path, encode_tensor(blob)); }

Blob read_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t offset = 0;
  Blob b = decode_tensor(bytes, offset);
  if (offset != bytes.size()) throw FormatError("trailing bytes after tensor", offset);
  return b;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::set<std::string> names;
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (!names.insert(e.name).second) throw ParameterError("checkpoint: duplicate entry '" + e.name + "'");
    if (e.name.size() > 0xffff) throw ParameterError("checkpoint: entry name too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    const auto t = encode_tensor(e.blob);
    out.insert(out.end(), t.begin(), t.end());
  }
  out.insert(out.end(), ckpt.frozen_hash.begin(), ckpt.frozen_hash.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  std::size_t offset = 0;
  expect_magic(bytes, offset, kCheckpointMagic);
  const auto count = get_le<std::uint32_t>(bytes, offset, "entry count");
  Checkpoint ckpt;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = offset;
    const auto len = get_le<std::uint16_t>(bytes, offset, "name length");
    if (bytes.size() - offset < len) throw FormatError("truncated entry name", offset);
    std::string name(reinterpret_cast<const char*>(bytes.data() + offset), len);
    offset += len;
    if (!names.insert(name).second) throw FormatError("duplicate entry '" + name + "'", at);
    Blob b = decode_tensor(bytes, offset);
    ckpt.entries.push_back({std::move(name), std::move(b)});
  }
  if (bytes.size() - offset < ckpt.frozen_hash.size()) throw FormatError("truncated frozen hash", offset);
  std::memcpy(ckpt.frozen_hash.data(), bytes.data() + offset, ckpt.frozen_hash.size());
  offset += ckpt.frozen_hash.size();
  if (offset != bytes.size()) throw FormatError("trailing bytes after checkpoint", offset);
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) { write_file(path, encode_checkpoint(ckpt)); }

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

Checkpoint read_checkpoint(const std::filesystem::path& path, const Sha256& expected) {
  Checkpoint c = read_checkpoint(path);
  if (c.frozen_hash != expected)
    throw IntegrityError("checkpoint " + path.string() + " was saved against frozen weights " + to_hex(c.frozen_hash) +
                         ", current backbone is " + to_hex(expected));
  return c;
}

}  // namespace mgfc
