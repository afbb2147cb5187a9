#include "ucd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "ucd/error.hpp"

namespace ucd {

namespace {

constexpr double kTimeTol = 1e-9;

}  // namespace

std::string to_string(Direction d) {
  return d == Direction::warn_below ? "warn_below" : "warn_above";
}

Direction direction_from_string(const std::string& s) {
  if (s == "warn_below") return Direction::warn_below;
  if (s == "warn_above") return Direction::warn_above;
  throw ParseError("unknown warning direction '" + s + "'");
}

bool is_warning(const MetricSample& sample, double threshold, Direction d) {
  if (!sample.defined || std::isnan(sample.value)) return false;
  return d == Direction::warn_below ? sample.value <= threshold : sample.value >= threshold;
}

bool Window::contains(double t) const {
  const bool after = open_begin ? t > begin + kTimeTol : t >= begin - kTimeTol;
  const bool before = open_end ? t < end - kTimeTol : t <= end + kTimeTol;
  return after && before;
}

LabeledEvent label_event_at(const InteractionEvent& event, double critical_time) {
  if (critical_time < event.t_start - kTimeTol || critical_time > event.t_end + kTimeTol)
    throw DataError("critical time lies outside event " + event.id);
  LabeledEvent out;
  out.event = event;
  out.critical_time = critical_time;
  out.safe_window = {event.t_start, std::min(event.t_start + kSafeWindow, event.t_end), false, true};
  const double begin = critical_time - kDangerWindow;
  if (begin >= event.t_start)
    out.danger_window = {begin, critical_time, true, false};
  else
    out.danger_window = {event.t_start, critical_time, false, false};
  return out;
}

LabeledEvent label_event(const InteractionEvent& event) {
  const auto frames = aligned_states(event);
  if (frames.empty()) throw DataError("event " + event.id + " has no aligned frames");
  double best = std::numeric_limits<double>::infinity();
  double t_best = frames.front().first.time;
  for (const auto& [ego, target] : frames) {
    const double g = bounding_box_gap(ego, target);
    if (g < best) {
      best = g;
      t_best = ego.time;
    }
  }
  return label_event_at(event, t_best);
}

namespace {

struct EventScores {
  std::optional<double> safe;    // most warning-prone value in the safe window
  std::optional<double> danger;  // same in the danger window
  bool has_safe = false;
  bool has_danger = false;
};

EventScores score_event(const EventMetric& em, Direction d) {
  EventScores sc;
  auto better = [d](double a, double b) { return d == Direction::warn_below ? a < b : a > b; };
  for (const auto& s : em.samples) {
    const bool in_safe = em.label.safe_window.contains(s.time);
    const bool in_danger = em.label.danger_window.contains(s.time);
    sc.has_safe = sc.has_safe || in_safe;
    sc.has_danger = sc.has_danger || in_danger;
    if (!s.defined || std::isnan(s.value)) continue;
    if (in_safe && (!sc.safe || better(s.value, *sc.safe))) sc.safe = s.value;
    if (in_danger && (!sc.danger || better(s.value, *sc.danger))) sc.danger = s.value;
  }
  return sc;
}

bool warns(const std::optional<double>& score, double threshold, Direction d) {
  if (!score) return false;
  return d == Direction::warn_below ? *score <= threshold : *score >= threshold;
}

double euclid_to_ideal(const RocPoint& p) { return std::hypot(p.fpr, 1.0 - p.tpr); }

}  // namespace

RocResult sweep_roc(std::span<const EventMetric> events, Direction direction) {
  if (events.size() < 2) throw DataError("ROC sweep needs at least 2 events");
  RocResult roc;
  roc.direction = direction;

  std::vector<EventScores> scores;
  std::vector<double> thresholds;
  scores.reserve(events.size());
  for (const auto& em : events) {
    scores.push_back(score_event(em, direction));
    for (const auto& s : em.samples) {
      if (!s.defined || std::isnan(s.value)) continue;
      if (em.label.safe_window.contains(s.time) || em.label.danger_window.contains(s.time))
        thresholds.push_back(s.value);
    }
    if (scores.back().has_danger) ++roc.positives;
    if (scores.back().has_safe) ++roc.negatives;
  }
  if (roc.positives == 0 || roc.negatives == 0)
    throw DataError("ROC sweep needs events with both safe and danger windows");
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  roc.degenerate = thresholds.size() <= 1;
  const double inf = std::numeric_limits<double>::infinity();
  if (thresholds.empty() || thresholds.front() != -inf) thresholds.insert(thresholds.begin(), -inf);
  if (thresholds.back() != inf) thresholds.push_back(inf);

  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (const auto& sc : scores) {
      if (sc.has_danger && warns(sc.danger, t, direction)) ++tp;
      if (sc.has_safe && warns(sc.safe, t, direction)) ++fp;
    }
    roc.points.push_back({t, static_cast<double>(fp) / static_cast<double>(roc.negatives),
                          static_cast<double>(tp) / static_cast<double>(roc.positives)});
  }

  std::vector<std::pair<double, double>> path;
  path.reserve(roc.points.size() + 2);
  path.emplace_back(0.0, 0.0);
  for (const auto& p : roc.points) path.emplace_back(p.fpr, p.tpr);
  path.emplace_back(1.0, 1.0);
  std::sort(path.begin(), path.end());
  double auc = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i)
    auc += (path[i].first - path[i - 1].first) * 0.5 * (path[i].second + path[i - 1].second);
  roc.auc = std::clamp(auc, 0.0, 1.0);

  if (roc.degenerate) {
    roc.optimal_threshold = std::numeric_limits<double>::quiet_NaN();
    roc.optimal_fpr = roc.optimal_tpr = std::numeric_limits<double>::quiet_NaN();
  } else {
    const RocPoint best = optimal_threshold(roc);
    roc.optimal_threshold = best.threshold;
    roc.optimal_fpr = best.fpr;
    roc.optimal_tpr = best.tpr;
  }
  return roc;
}

RocPoint optimal_threshold(const RocResult& roc) {
  if (roc.degenerate || roc.points.empty())
    throw DataError("optimal threshold undefined for a degenerate ROC curve");
  constexpr double tie = 1e-12;
  const RocPoint* best = &roc.points.front();
  for (const auto& p : roc.points) {
    const double dp = euclid_to_ideal(p), db = euclid_to_ideal(*best);
    if (dp < db - tie) {
      best = &p;
      continue;
    }
    if (dp > db + tie) continue;
    if (p.fpr < best->fpr - tie) {
      best = &p;
    } else if (std::abs(p.fpr - best->fpr) <= tie) {
      if (p.tpr > best->tpr + tie) {
        best = &p;
      } else if (std::abs(p.tpr - best->tpr) <= tie) {
        const bool smaller = roc.direction == Direction::warn_below ? p.threshold < best->threshold
                                                                    : p.threshold > best->threshold;
        if (smaller) best = &p;
      }
    }
  }
  return *best;
}

WarningOutcome warning_stats(const EventMetric& em, double threshold, Direction direction) {
  WarningOutcome out;
  out.event_id = em.label.event.id;
  const double crit = em.label.critical_time;
  const Window period = em.label.annotated_period.value_or(em.label.danger_window);
  out.annotated_period_used = em.label.annotated_period.has_value();

  std::size_t in_period = 0, warned_in_period = 0;
  bool prev = false;
  std::optional<double> last_shift;
  for (const auto& s : em.samples) {
    const bool w = is_warning(s, threshold, direction);
    if (period.contains(s.time)) {
      ++in_period;
      if (w) ++warned_in_period;
    }
    if (s.time <= crit + kTimeTol) {
      if (w && !prev) last_shift = s.time;
      prev = w;
    }
  }
  out.warning_period_pct =
      in_period == 0 ? 0.0 : 100.0 * static_cast<double>(warned_in_period) / static_cast<double>(in_period);
  out.warned = last_shift.has_value();
  if (last_shift) out.timeliness = crit - *last_shift;
  return out;
}

WarningSummary summarize_warnings(std::span<const EventMetric> events, double threshold,
                                  Direction direction) {
  WarningSummary sum;
  sum.threshold = threshold;
  std::size_t pos = 0, neg = 0, tp = 0, fp = 0;
  double period = 0.0, timely = 0.0;
  for (const auto& em : events) {
    const auto sc = score_event(em, direction);
    if (sc.has_danger) {
      ++pos;
      if (warns(sc.danger, threshold, direction)) ++tp;
    }
    if (sc.has_safe) {
      ++neg;
      if (warns(sc.safe, threshold, direction)) ++fp;
    }
    auto o = warning_stats(em, threshold, direction);
    if (o.warned) {
      ++sum.warned_events;
      period += o.warning_period_pct;
      timely += *o.timeliness;
    }
    sum.outcomes.push_back(std::move(o));
  }
  sum.tpr = pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0;
  sum.fpr = neg ? static_cast<double>(fp) / static_cast<double>(neg) : 0.0;
  if (sum.warned_events) {
    sum.mean_warning_period_pct = period / static_cast<double>(sum.warned_events);
    sum.mean_timeliness = timely / static_cast<double>(sum.warned_events);
  }
  return sum;
}

// ---------------------------------------------------------------------------

Histogram log_histogram(std::span<const double> values, int bins_per_decade) {
  if (bins_per_decade <= 0) throw DataError("bins per decade must be positive");
  Histogram h;
  std::vector<double> logs;
  logs.reserve(values.size());
  for (double v : values) {
    if (v > 0.0 && std::isfinite(v))
      logs.push_back(std::log10(v));
    else
      ++h.dropped;
  }
  h.total = logs.size();
  if (logs.empty()) return h;
  const double bpd = bins_per_decade;
  auto bin_of = [bpd](double lg) { return static_cast<long>(std::floor(lg * bpd)); };
  const auto [mn, mx] = std::minmax_element(logs.begin(), logs.end());
  const long lo = bin_of(*mn), hi = bin_of(*mx);
  const auto nbins = static_cast<std::size_t>(hi - lo + 1);
  h.count.assign(nbins, 0);
  for (double lg : logs) {
    const long b = std::clamp(bin_of(lg), lo, hi);
    ++h.count[static_cast<std::size_t>(b - lo)];
  }
  for (std::size_t i = 0; i < nbins; ++i) {
    const double k = static_cast<double>(lo + static_cast<long>(i));
    const double a = std::pow(10.0, k / bpd), b = std::pow(10.0, (k + 1.0) / bpd);
    h.lower.push_back(a);
    h.upper.push_back(b);
    h.centre.push_back(std::sqrt(a * b));
    h.density.push_back(static_cast<double>(h.count[i]) / (static_cast<double>(h.total) * (b - a)));
  }
  return h;
}

PowerLawFit fit_log_log(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("log-log fit needs paired x and y");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0 && y[i] > 0.0 && std::isfinite(x[i]) && std::isfinite(y[i])) {
      lx.push_back(std::log10(x[i]));
      ly.push_back(std::log10(y[i]));
    }
  }
  const std::size_t n = lx.size();
  if (n < 2) throw DataError("log-log fit needs at least 2 nonempty bins, got " + std::to_string(n));
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw DataError("log-log fit needs at least 2 distinct x values");
  PowerLawFit fit;
  fit.points = n;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
    ss_res += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return fit;
}

PowerLawFit fit_power_law(std::span<const double> values, int bins_per_decade) {
  const Histogram h = log_histogram(values, bins_per_decade);
  return fit_log_log(h.centre, h.density);
}

std::vector<Episode> conflict_episodes(std::span<const MetricSample> samples, double frame_rate,
                                       double threshold, Direction direction, double min_duration) {
  if (!(frame_rate > 0.0)) throw DataError("frame rate must be positive");
  const double dt = 1.0 / frame_rate;
  std::vector<Episode> out;
  auto close = [&](std::size_t first, std::size_t last) {
    Episode e;
    e.first = first;
    e.last = last;
    e.t_start = samples[first].time;
    e.t_end = samples[last].time;
    e.duration = static_cast<double>(last - first + 1) * dt;
    if (e.duration >= min_duration - kTimeTol) out.push_back(e);
  };
  std::optional<std::size_t> start;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool w = is_warning(samples[i], threshold, direction);
    // A missing frame breaks a run.
    if (start && i > 0 && samples[i].time - samples[i - 1].time > 1.5 * dt) {
      close(*start, i - 1);
      start.reset();
    }
    if (w && !start) start = i;
    if (!w && start) {
      close(*start, i - 1);
      start.reset();
    }
  }
  if (start) close(*start, samples.size() - 1);
  return out;
}

ConflictPartition partition_conflicts(std::span<const ConflictVerdict> verdicts,
                                      std::size_t total_lane_changes) {
  ConflictPartition p;
  std::map<std::string, std::size_t> per_lane_change;
  for (const auto& v : verdicts) {
    if (!v.ttc_conflict && !v.unified_conflict) continue;
    ++p.conflicts;
    if (v.ttc_conflict && v.unified_conflict)
      ++p.both;
    else if (v.ttc_conflict)
      ++p.ttc_only;
    else
      ++p.unified_only;
    ++per_lane_change[v.lane_change_id];
  }
  p.conflicting_lane_changes = per_lane_change.size();
  p.lane_changes = std::max(total_lane_changes, p.conflicting_lane_changes);
  for (const auto& [id, k] : per_lane_change) ++p.multiplicity[k];
  return p;
}

}  // namespace ucd
