#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coserve/transfer/relay.hpp"

namespace coserve::transfer {

// Bucket frame, all integers little-endian:
//   [key_len u32][key bytes][payload_len u32][payload bytes][crc32 u32]
// The CRC (zlib polynomial) covers every preceding byte of the frame, so a
// flipped bit in either key or payload is caught on receipt.
struct BucketFrame {
  std::string key;
  std::vector<std::uint8_t> payload;
};

constexpr std::uint32_t kMaxKeyLen = 64u * 1024u;
constexpr std::uint32_t kMaxPayloadLen = 1u << 30;

std::vector<std::uint8_t> encode_bucket_frame(const std::string& key,
                                              const std::vector<std::uint8_t>& payload);

// Decodes one frame from the front of [data, data+len); sets `consumed`.
// Throws PayloadFormatError on malformed lengths, IntegrityError on CRC
// mismatch.
BucketFrame decode_bucket_frame(const std::uint8_t* data, std::size_t len,
                                std::size_t& consumed);

std::uint32_t frame_crc32(const std::uint8_t* data, std::size_t len);

}  // namespace coserve::transfer
