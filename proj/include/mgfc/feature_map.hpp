#pragma once

#include <string>

#include "mgfc/tensor.hpp"

namespace mgfc {

// Patch features of one layer: HW tokens by c channels over an H x W grid.
template <typename S>
struct FeatureMap {
  Tensor<S> values;
  Index height = 0;
  Index width = 0;

  FeatureMap() = default;
  FeatureMap(Tensor<S> v, Index h, Index w) : values(std::move(v)), height(h), width(w) {
    if (values.rows() != h * w)
      throw ShapeError("FeatureMap: " + std::to_string(values.rows()) + " tokens do not match a " + dims_string(h, w) +
                       " grid");
  }

  Index tokens() const { return values.rows(); }
  Index channels() const { return values.cols(); }
  const Matrix<S>& value() const { return values.value(); }
};

template <typename S>
void check_same_dims(const char* op, const FeatureMap<S>& a, const FeatureMap<S>& b) {
  if (a.height != b.height || a.width != b.width || a.channels() != b.channels())
    throw ShapeError(std::string(op) + ": feature maps differ (" + dims_string(a.tokens(), a.channels()) + " vs " +
                     dims_string(b.tokens(), b.channels()) + ")");
}

}  // namespace mgfc
