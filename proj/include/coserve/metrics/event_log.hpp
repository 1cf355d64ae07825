#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coserve/sim/time.hpp"

namespace coserve::metrics {

// Append-only log of semantic simulation records. Every metric the simulator
// reports can be recomputed from this log alone (the `verify` subcommand does
// exactly that), and two runs with the same seed must produce byte-identical
// logs.
//
// Row format: t_us,type,key=value,key=value,...
class EventLog {
 public:
  static constexpr const char* kSchemaHeader = "schema,coserve-eventlog,1";

  void append(sim::SimTime t, const std::string& type, const std::string& fields) {
    std::string row = std::to_string(t);
    row += ',';
    row += type;
    if (!fields.empty()) {
      row += ',';
      row += fields;
    }
    fold(row);
    rows_.push_back(std::move(row));
  }

  const std::vector<std::string>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  // FNV-1a over all row bytes (newline separated); the scenario digest.
  std::uint64_t digest() const { return digest_; }

  void write_to(const std::string& path) const;

 private:
  void fold(const std::string& row) {
    for (unsigned char c : row) {
      digest_ ^= c;
      digest_ *= 0x100000001b3ULL;
    }
    digest_ ^= '\n';
    digest_ *= 0x100000001b3ULL;
  }

  std::vector<std::string> rows_;
  std::uint64_t digest_ = 0xcbf29ce484222325ULL;
};

}  // namespace coserve::metrics
