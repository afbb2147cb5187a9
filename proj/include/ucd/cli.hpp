#pragma once

#include <string>
#include <vector>

#include "ucd/evaluation.hpp"
#include "ucd/gp.hpp"
#include "ucd/ingestion.hpp"
#include "ucd/metrics.hpp"

namespace ucd {

inline constexpr const char* kVersion = "1.0.0";

enum class MetricKind { ttc, drac, psd, unified };

std::string to_string(MetricKind m);
MetricKind metric_from_string(const std::string& s);
// TTC and PSD warn below a threshold; DRAC and the unified intensity above.
Direction default_direction(MetricKind m);

struct UnifiedFrame {
  double time = 0.0;
  double s = 0.0;  // centre distance, m
  LognormalParams phi;
};

// Per aligned frame of the event: proximity and predicted lognormal parameters.
std::vector<UnifiedFrame> unified_frames(const GPModel& model, const InteractionEvent& event);

// Per aligned frame metric values. The unified metric is n_max and needs a
// model. DRAC on overlapping boxes and PSD at rest are undefined samples.
std::vector<MetricSample> metric_series(const InteractionEvent& event, MetricKind metric,
                                        const GPModel* model = nullptr);

// Command-line entry point; `args` excludes the program name. Usage errors
// return 2, IO and data errors 1, both with a JSON error document on stderr.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace ucd
