#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ucd/ingestion.hpp"
#include "ucd/metrics.hpp"

namespace ucd {

// Which side of the threshold raises a warning. warn_below: value <= threshold;
// warn_above: value >= threshold. Undefined samples never warn.
enum class Direction { warn_below, warn_above };

std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

bool is_warning(const MetricSample& sample, double threshold, Direction d);

// Time interval with optionally open ends; membership tolerates 1e-9 s.
struct Window {
  double begin = 0.0;
  double end = 0.0;
  bool open_begin = false;
  bool open_end = false;

  bool contains(double t) const;
  double length() const { return end - begin; }
};

inline constexpr double kSafeWindow = 3.0;    // s from the event start
inline constexpr double kDangerWindow = 3.0;  // s before the critical moment

struct LabeledEvent {
  InteractionEvent event;
  double critical_time = 0.0;
  Window safe_window;    // [t_start, t_start + 3)
  Window danger_window;  // (critical - 3, critical], clipped to the event
  // Externally annotated conflict period; the danger window stands in when absent.
  std::optional<Window> annotated_period;
};

// Critical moment at the minimum bounding-box gap over aligned frames, the
// earliest frame on ties.
LabeledEvent label_event(const InteractionEvent& event);
LabeledEvent label_event_at(const InteractionEvent& event, double critical_time);

struct EventMetric {
  LabeledEvent label;
  std::vector<MetricSample> samples;  // per frame, ascending time
};

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  Direction direction = Direction::warn_below;
  std::vector<RocPoint> points;  // ascending threshold, including -inf and +inf
  double auc = 0.0;
  bool degenerate = false;  // every observed value identical
  double optimal_threshold = 0.0;
  double optimal_fpr = 0.0;
  double optimal_tpr = 0.0;
  std::size_t positives = 0;  // events with a danger window
  std::size_t negatives = 0;  // events with a safe window
};

// Event-level ROC: an event is a true positive at a threshold when any danger
// window frame warns and a false positive when any safe window frame warns.
// Throws DataError for fewer than 2 events.
RocResult sweep_roc(std::span<const EventMetric> events, Direction direction);

// Point nearest (0, 1); ties prefer lower fpr, then higher tpr, then the
// smallest warning region. Throws DataError for a degenerate curve.
RocPoint optimal_threshold(const RocResult& roc);

struct WarningOutcome {
  std::string event_id;
  bool warned = false;
  double warning_period_pct = 0.0;
  std::optional<double> timeliness;  // s, undefined when never warned
  bool annotated_period_used = false;
};

// `warned` is true when any frame up to the critical moment warns. Timeliness
// runs from the last unwarned-to-warned shift at or before the critical moment;
// a warning already active at the first frame counts as a shift there.
WarningOutcome warning_stats(const EventMetric& event, double threshold, Direction direction);

struct WarningSummary {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
  double mean_warning_period_pct = 0.0;  // over warned events
  double mean_timeliness = 0.0;          // over warned events
  std::size_t warned_events = 0;
  std::vector<WarningOutcome> outcomes;
};

WarningSummary summarize_warnings(std::span<const EventMetric> events, double threshold,
                                  Direction direction);

// ---------------------------------------------------------------------------
// Intensity distributions

struct Histogram {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> centre;   // geometric bin centre
  std::vector<std::size_t> count;
  std::vector<double> density;  // count / (N * width)
  std::size_t total = 0;        // values binned
  std::size_t dropped = 0;      // non-positive or non-finite values
};

inline constexpr int kBinsPerDecade = 20;

Histogram log_histogram(std::span<const double> values, int bins_per_decade = kBinsPerDecade);

struct PowerLawFit {
  double slope = 0.0;
  double intercept = 0.0;  // log10 scale
  double r2 = 0.0;
  std::size_t points = 0;
};

// Least squares of log10(y) on log10(x) over points with x, y > 0. Throws
// DataError for fewer than 2 usable points.
PowerLawFit fit_log_log(std::span<const double> x, std::span<const double> y);

// Log-binned density, then fit_log_log over nonempty bins.
PowerLawFit fit_power_law(std::span<const double> values, int bins_per_decade = kBinsPerDecade);

struct Episode {
  std::size_t first = 0;  // frame indices, inclusive
  std::size_t last = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  double duration = 0.0;  // frame count / frame rate
};

// Maximal runs of warning frames lasting at least min_duration.
std::vector<Episode> conflict_episodes(std::span<const MetricSample> samples, double frame_rate,
                                       double threshold, Direction direction,
                                       double min_duration = 1.0);

// Per interaction event: whether TTC and the unified metric flag a conflict.
struct ConflictVerdict {
  std::string event_id;
  std::string lane_change_id;
  bool ttc_conflict = false;
  bool unified_conflict = false;
};

struct ConflictPartition {
  std::size_t lane_changes = 0;              // all lane changes considered
  std::size_t conflicting_lane_changes = 0;  // with at least one conflict
  std::size_t conflicts = 0;                 // events flagged by either metric
  std::size_t both = 0;
  std::size_t ttc_only = 0;
  std::size_t unified_only = 0;
  // Conflicting targets per conflicting lane change -> number of lane changes.
  std::map<std::size_t, std::size_t> multiplicity;
};

ConflictPartition partition_conflicts(std::span<const ConflictVerdict> verdicts,
                                      std::size_t total_lane_changes);

}  // namespace ucd
