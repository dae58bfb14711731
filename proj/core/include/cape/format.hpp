#pragma once

#include <string>

namespace cape {

enum class MetricKind { mae_years, auc };

/// Compact mean(SE) notation: mean to three decimals, SE as its digits at
/// 1e-4 resolution with one leading zero kept, e.g. mean 7.880 with SE
/// 0.0028 -> "7.880(028)", AUC 0.939 with SE 0.0006 -> "0.939(06)".
/// Out-of-range spreads (SE >= 1.0 for MAE, >= 0.01 for AUC) render as
/// "mean(*)".
std::string mean_se_compact(double mean, double se, MetricKind kind);

/// Fixed-precision decimal; stable output for reports and CSV.
std::string fmt_fixed(double v, int decimals);

/// Shortest-ish general format used for CSV payloads (up to 9 significant
/// digits, no locale).
std::string fmt_g(double v);

} // namespace cape
