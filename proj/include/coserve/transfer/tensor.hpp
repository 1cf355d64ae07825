#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace coserve::transfer {

static_assert(std::endian::native == std::endian::little,
              "wire codecs assume a little-endian host");

struct TransferError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeMismatch : TransferError {
  using TransferError::TransferError;
};
struct PayloadFormatError : TransferError {
  using TransferError::TransferError;
};

enum class DType : std::uint8_t { F32 = 0, I32 = 1 };

inline std::size_t dtype_size(DType) { return 4; }

inline const char* dtype_name(DType d) { return d == DType::F32 ? "f32" : "i32"; }

// Dense row-major host tensor. Elements are stored as raw little-endian
// bytes; typed views are available for arithmetic.
struct HostTensor {
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> data;

  static HostTensor zeros(DType dt, std::vector<std::int64_t> shp) {
    HostTensor t;
    t.dtype = dt;
    t.shape = std::move(shp);
    t.data.assign(static_cast<std::size_t>(t.elems()) * dtype_size(dt), 0);
    return t;
  }

  std::int64_t elems() const {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                           [](std::int64_t a, std::int64_t b) { return a * b; });
  }
  std::size_t byte_size() const { return data.size(); }

  float* f32() { return reinterpret_cast<float*>(data.data()); }
  const float* f32() const { return reinterpret_cast<const float*>(data.data()); }
  std::int32_t* i32() { return reinterpret_cast<std::int32_t*>(data.data()); }
  const std::int32_t* i32() const {
    return reinterpret_cast<const std::int32_t*>(data.data());
  }

  bool same_layout(const HostTensor& o) const {
    return dtype == o.dtype && shape == o.shape;
  }
  bool bitwise_equal(const HostTensor& o) const {
    return same_layout(o) && data == o.data;
  }
};

inline std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace coserve::transfer
