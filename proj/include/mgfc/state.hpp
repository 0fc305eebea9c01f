#pragma once

// Model <-> checkpoint conversion and the content hash of the frozen encoder.

#include <string>
#include <vector>

#include "mgfc/data.hpp"
#include "mgfc/model.hpp"

namespace mgfc {

// SHA-256 over (name length, name, tensor encoding) of every frozen tensor,
// stored as float32 in encoder order.
template <typename S>
Sha256 frozen_hash(const FrozenEncoder<S>& enc) {
  std::vector<std::uint8_t> bytes;
  for (const auto& t : enc.named_tensors()) {
    const auto n = static_cast<std::uint16_t>(t.name.size());
    bytes.push_back(static_cast<std::uint8_t>(n & 0xff));
    bytes.push_back(static_cast<std::uint8_t>(n >> 8));
    bytes.insert(bytes.end(), t.name.begin(), t.name.end());
    const auto enc_bytes = encode_tensor(to_blob(t.tensor.value()));
    bytes.insert(bytes.end(), enc_bytes.begin(), enc_bytes.end());
  }
  return sha256(bytes);
}

template <typename S>
Sha256 frozen_hash(const Model<S>& model) {
  return frozen_hash(model.encoder());
}

template <typename S>
Checkpoint model_checkpoint(const Model<S>& model) {
  Checkpoint c;
  for (const auto& p : model.trainable_parameters()) c.entries.push_back({p.name, to_blob(p.tensor.value())});
  c.frozen_hash = frozen_hash(model);
  return c;
}

// Copies every trainable tensor from the checkpoint; names and dims must match
// the model exactly.
template <typename S>
void load_checkpoint(Model<S>& model, const Checkpoint& c) {
  if (c.frozen_hash != frozen_hash(model))
    throw IntegrityError("checkpoint frozen hash " + to_hex(c.frozen_hash) + " does not match the backbone " +
                         to_hex(frozen_hash(model)));
  auto params = model.trainable_parameters();
  if (params.size() != c.entries.size())
    throw ConfigError("checkpoint has " + std::to_string(c.entries.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  for (auto& p : params) {
    const Blob* b = c.find(p.name);
    if (!b) throw ConfigError("checkpoint lacks tensor '" + p.name + "'");
    if (b->dims.size() != 2 || b->dims[0] != static_cast<std::uint64_t>(p.tensor.rows()) ||
        b->dims[1] != static_cast<std::uint64_t>(p.tensor.cols()))
      throw ConfigError("checkpoint tensor '" + p.name + "' has the wrong dims for this model");
    p.tensor.mutable_value() = to_matrix<S>(*b, p.tensor.rows(), p.tensor.cols());
  }
}

}  // namespace mgfc
