#include "coserve/transfer/codec.hpp"

#include <cstring>

namespace coserve::transfer {

namespace {

constexpr std::uint32_t kDenseMagic = 0x31445743;   // "CWD1"
constexpr std::uint32_t kSparseMagic = 0x31535743;  // "CWS1"

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  const std::size_t at = out.size();
  out.resize(at + sizeof(T));
  std::memcpy(out.data() + at, &v, sizeof(T));
}

template <typename T>
T get_le(const std::uint8_t* data, std::size_t len, std::size_t& pos,
         const char* what) {
  if (pos + sizeof(T) > len)
    throw PayloadFormatError(std::string("payload truncated reading ") + what);
  T v;
  std::memcpy(&v, data + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::uint32_t wrap_sub_u32(std::uint32_t a, std::uint32_t b) { return a - b; }

}  // namespace

SparseDelta diff_shards(const HostTensor& prev, const HostTensor& next) {
  if (!prev.same_layout(next))
    throw ShapeMismatch("diff_shards: " + shape_str(prev.shape) + " vs " +
                        shape_str(next.shape));
  SparseDelta d;
  d.dtype = prev.dtype;
  d.shape = prev.shape;
  const std::int64_t n = prev.elems();
  if (prev.dtype == DType::F32) {
    const float* a = prev.f32();
    const float* b = next.f32();
    for (std::int64_t i = 0; i < n; ++i) {
      if (a[i] == b[i]) continue;
      const float delta = b[i] - a[i];
      d.indices.push_back(static_cast<std::uint64_t>(i));
      put_le(d.values, delta);
    }
  } else {
    const std::int32_t* a = prev.i32();
    const std::int32_t* b = next.i32();
    for (std::int64_t i = 0; i < n; ++i) {
      if (a[i] == b[i]) continue;
      const std::int32_t delta = static_cast<std::int32_t>(
          wrap_sub_u32(static_cast<std::uint32_t>(b[i]), static_cast<std::uint32_t>(a[i])));
      d.indices.push_back(static_cast<std::uint64_t>(i));
      put_le(d.values, delta);
    }
  }
  return d;
}

void apply_delta(HostTensor& target, const SparseDelta& delta) {
  if (target.dtype != delta.dtype || target.shape != delta.shape)
    throw ShapeMismatch("apply_delta: target " + shape_str(target.shape) +
                        " vs delta " + shape_str(delta.shape));
  const std::uint64_t n = static_cast<std::uint64_t>(target.elems());
  if (target.dtype == DType::F32) {
    float* t = target.f32();
    const float* v = reinterpret_cast<const float*>(delta.values.data());
    for (std::size_t k = 0; k < delta.indices.size(); ++k) {
      const std::uint64_t i = delta.indices[k];
      if (i >= n)
        throw IndexOutOfShard("delta index " + std::to_string(i) + " >= " +
                              std::to_string(n));
      t[i] += v[k];
    }
  } else {
    std::int32_t* t = target.i32();
    const std::int32_t* v = reinterpret_cast<const std::int32_t*>(delta.values.data());
    for (std::size_t k = 0; k < delta.indices.size(); ++k) {
      const std::uint64_t i = delta.indices[k];
      if (i >= n)
        throw IndexOutOfShard("delta index " + std::to_string(i) + " >= " +
                              std::to_string(n));
      t[i] = static_cast<std::int32_t>(static_cast<std::uint32_t>(t[i]) +
                                        static_cast<std::uint32_t>(v[k]));
    }
  }
}

SparseDelta reslice_delta(const SparseDelta& delta, const ShardDescriptor& src,
                          const ShardDescriptor& dst,
                          const std::vector<std::int64_t>& full_shape) {
  const auto src_shape = shard_shape(src, full_shape);
  if (delta.shape != src_shape)
    throw ShapeMismatch("reslice_delta: delta " + shape_str(delta.shape) +
                        " does not match source shard " + shape_str(src_shape));
  if (!src.full() && !dst.full() && src.slice_dim != dst.slice_dim)
    throw ShapeMismatch("reslice_delta: slices along different dims");

  const int dim = !src.full() ? src.slice_dim : (!dst.full() ? dst.slice_dim : 0);
  std::int64_t inner = 1, outer = 1;
  for (int i = 0; i < static_cast<int>(full_shape.size()); ++i) {
    if (i < dim) outer *= full_shape[static_cast<std::size_t>(i)];
    if (i > dim) inner *= full_shape[static_cast<std::size_t>(i)];
  }
  const std::int64_t full_ext = full_shape[static_cast<std::size_t>(dim)];
  const std::int64_t src_lo = src.full() ? 0 : src.start;
  const std::int64_t src_ext = src.full() ? full_ext : src.end - src.start;
  const std::int64_t dst_lo = dst.full() ? 0 : dst.start;
  const std::int64_t dst_ext = dst.full() ? full_ext : dst.end - dst.start;

  SparseDelta out;
  out.dtype = delta.dtype;
  out.shape = shard_shape(dst, full_shape);
  const std::uint64_t src_elems = static_cast<std::uint64_t>(src_ext * inner * outer);
  const std::size_t esz = dtype_size(delta.dtype);
  for (std::size_t k = 0; k < delta.indices.size(); ++k) {
    const std::uint64_t i = delta.indices[k];
    if (i >= src_elems)
      throw IndexOutOfShard("delta index " + std::to_string(i) +
                            " outside source shard of " + std::to_string(src_elems));
    const std::int64_t si = static_cast<std::int64_t>(i);
    const std::int64_t in = si % inner;
    const std::int64_t row = (si / inner) % src_ext;
    const std::int64_t o = si / (inner * src_ext);
    const std::int64_t grow = row + src_lo;
    if (grow < dst_lo || grow >= dst_lo + dst_ext) continue;
    const std::int64_t di = (o * dst_ext + (grow - dst_lo)) * inner + in;
    out.indices.push_back(static_cast<std::uint64_t>(di));
    out.values.insert(out.values.end(), delta.values.begin() + static_cast<std::ptrdiff_t>(k * esz),
                      delta.values.begin() + static_cast<std::ptrdiff_t>((k + 1) * esz));
  }
  return out;
}

int pick_index_width(const SparseDelta& d) {
  const std::uint64_t top = d.indices.empty() ? 0 : d.indices.back();
  return top <= 0xFFFFFFFFull ? 4 : 8;
}

static void encode_header(std::vector<std::uint8_t>& out, std::uint32_t magic,
                          DType dtype, const std::vector<std::int64_t>& shape,
                          std::uint8_t iw) {
  put_le(out, magic);
  put_le(out, static_cast<std::uint8_t>(dtype));
  put_le(out, static_cast<std::uint8_t>(shape.size()));
  put_le(out, iw);
  put_le(out, std::uint8_t{0});
  for (auto d : shape) put_le(out, d);
}

std::vector<std::uint8_t> encode_dense(const HostTensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(32 + t.data.size());
  encode_header(out, kDenseMagic, t.dtype, t.shape, 0);
  out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

std::vector<std::uint8_t> encode_sparse(const SparseDelta& d, int index_width) {
  if (index_width != 4 && index_width != 8)
    throw PayloadFormatError("index width must be 4 or 8");
  std::vector<std::uint8_t> out;
  out.reserve(40 + d.indices.size() * (static_cast<std::size_t>(index_width) + 4));
  encode_header(out, kSparseMagic, d.dtype, d.shape,
                static_cast<std::uint8_t>(index_width));
  put_le(out, static_cast<std::uint64_t>(d.indices.size()));
  for (auto i : d.indices) {
    if (index_width == 4) {
      if (i > 0xFFFFFFFFull)
        throw PayloadFormatError("index " + std::to_string(i) + " exceeds u32");
      put_le(out, static_cast<std::uint32_t>(i));
    } else {
      put_le(out, i);
    }
  }
  out.insert(out.end(), d.values.begin(), d.values.end());
  return out;
}

namespace {

struct Header {
  std::uint32_t magic;
  DType dtype;
  int ndims;
  int iw;
  std::vector<std::int64_t> shape;
  std::size_t pos;  // offset just past the header
};

Header decode_header(const std::uint8_t* data, std::size_t len) {
  Header h;
  std::size_t pos = 0;
  h.magic = get_le<std::uint32_t>(data, len, pos, "magic");
  if (h.magic != kDenseMagic && h.magic != kSparseMagic)
    throw PayloadFormatError("bad payload magic");
  const auto dt = get_le<std::uint8_t>(data, len, pos, "dtype");
  if (dt > 1) throw PayloadFormatError("bad dtype " + std::to_string(dt));
  h.dtype = static_cast<DType>(dt);
  h.ndims = get_le<std::uint8_t>(data, len, pos, "ndims");
  h.iw = get_le<std::uint8_t>(data, len, pos, "index width");
  (void)get_le<std::uint8_t>(data, len, pos, "pad");
  for (int i = 0; i < h.ndims; ++i) {
    const auto d = get_le<std::int64_t>(data, len, pos, "dim");
    if (d <= 0) throw PayloadFormatError("non-positive dim");
    h.shape.push_back(d);
  }
  h.pos = pos;
  return h;
}

}  // namespace

std::size_t peek_payload_size(const std::uint8_t* data, std::size_t len) {
  Header h = decode_header(data, len);
  std::uint64_t elems = 1;
  for (auto d : h.shape) elems *= static_cast<std::uint64_t>(d);
  if (h.magic == kDenseMagic) return h.pos + elems * 4;
  std::size_t pos = h.pos;
  const auto nnz = get_le<std::uint64_t>(data, len, pos, "nnz");
  return pos + nnz * (static_cast<std::size_t>(h.iw) + 4);
}

DecodedPayload decode_payload(const std::vector<std::uint8_t>& bytes) {
  const std::uint8_t* data = bytes.data();
  const std::size_t len = bytes.size();
  Header h = decode_header(data, len);
  std::size_t pos = h.pos;
  if (h.magic == kDenseMagic) {
    HostTensor t = HostTensor::zeros(h.dtype, h.shape);
    if (pos + t.data.size() != len)
      throw PayloadFormatError("dense payload size mismatch: header implies " +
                               std::to_string(pos + t.data.size()) + ", got " +
                               std::to_string(len));
    std::memcpy(t.data.data(), data + pos, t.data.size());
    return DecodedPayload{std::move(t)};
  }
  if (h.iw != 4 && h.iw != 8) throw PayloadFormatError("sparse index width");
  SparseDelta d;
  d.dtype = h.dtype;
  d.shape = h.shape;
  const auto nnz = get_le<std::uint64_t>(data, len, pos, "nnz");
  const std::size_t want = pos + nnz * (static_cast<std::size_t>(h.iw) + 4);
  if (want != len)
    throw PayloadFormatError("sparse payload size mismatch: header implies " +
                             std::to_string(want) + ", got " + std::to_string(len));
  d.indices.reserve(nnz);
  std::uint64_t prev = 0;
  for (std::uint64_t k = 0; k < nnz; ++k) {
    std::uint64_t i = h.iw == 4 ? get_le<std::uint32_t>(data, len, pos, "index")
                                : get_le<std::uint64_t>(data, len, pos, "index");
    if (k > 0 && i <= prev) throw PayloadFormatError("indices not strictly ascending");
    prev = i;
    d.indices.push_back(i);
  }
  d.values.assign(data + pos, data + len);
  return DecodedPayload{std::move(d)};
}

}  // namespace coserve::transfer
