#include "cape/format.hpp"

#include <cmath>
#include <cstdio>

namespace cape {

std::string fmt_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string mean_se_compact(double mean, double se, MetricKind kind) {
  const double limit = kind == MetricKind::auc ? 0.01 : 1.0;
  if (!(se < limit)) return fmt_fixed(mean, 3) + "(*)";
  const long long scaled = std::llround(se * 1e4);
  return fmt_fixed(mean, 3) + "(0" + std::to_string(scaled) + ")";
}

} // namespace cape
