#include "coserve/metrics/event_log.hpp"

#include <cstdio>
#include <fstream>

#include "coserve/metrics/percentile.hpp"

namespace coserve::metrics {

void EventLog::write_to(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw MetricsError(path + ": cannot open for writing");
  f << kSchemaHeader << "\n";
  for (const auto& row : rows_) f << row << "\n";
  char buf[32];
  std::snprintf(buf, sizeof buf, "digest,%016llx",
                static_cast<unsigned long long>(digest_));
  f << buf << "\n";
  if (!f) throw MetricsError(path + ": write failed");
}

}  // namespace coserve::metrics
