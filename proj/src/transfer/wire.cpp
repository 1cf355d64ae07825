#include "coserve/transfer/wire.hpp"

#include <zlib.h>

#include <cstring>

namespace coserve::transfer {

std::uint32_t frame_crc32(const std::uint8_t* data, std::size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, data, static_cast<uInt>(len));
  return static_cast<std::uint32_t>(crc);
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const std::size_t at = out.size();
  out.resize(at + 4);
  std::memcpy(out.data() + at, &v, 4);
}

std::uint32_t read_u32(const std::uint8_t* data, std::size_t len, std::size_t& pos,
                       const char* what) {
  if (pos + 4 > len)
    throw PayloadFormatError(std::string("frame truncated reading ") + what);
  std::uint32_t v;
  std::memcpy(&v, data + pos, 4);
  pos += 4;
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_bucket_frame(
    const std::string& key, const std::vector<std::uint8_t>& payload) {
  if (key.size() > kMaxKeyLen) throw PayloadFormatError("key too long");
  if (payload.size() > kMaxPayloadLen) throw PayloadFormatError("payload too long");
  std::vector<std::uint8_t> out;
  out.reserve(12 + key.size() + payload.size());
  put_u32(out, static_cast<std::uint32_t>(key.size()));
  out.insert(out.end(), key.begin(), key.end());
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32(out, frame_crc32(out.data(), out.size()));
  return out;
}

BucketFrame decode_bucket_frame(const std::uint8_t* data, std::size_t len,
                                std::size_t& consumed) {
  std::size_t pos = 0;
  const std::uint32_t key_len = read_u32(data, len, pos, "key length");
  if (key_len > kMaxKeyLen) throw PayloadFormatError("key length out of range");
  if (pos + key_len > len) throw PayloadFormatError("frame truncated reading key");
  BucketFrame f;
  f.key.assign(reinterpret_cast<const char*>(data + pos), key_len);
  pos += key_len;
  const std::uint32_t payload_len = read_u32(data, len, pos, "payload length");
  if (payload_len > kMaxPayloadLen)
    throw PayloadFormatError("payload length out of range");
  if (pos + payload_len > len)
    throw PayloadFormatError("frame truncated reading payload");
  f.payload.assign(data + pos, data + pos + payload_len);
  pos += payload_len;
  const std::uint32_t want = frame_crc32(data, pos);
  const std::uint32_t got = read_u32(data, len, pos, "crc");
  if (want != got)
    throw IntegrityError("bucket frame crc mismatch for key '" + f.key + "'");
  consumed = pos;
  return f;
}

}  // namespace coserve::transfer
