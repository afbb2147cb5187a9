#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ucd/context.hpp"
#include "ucd/ingestion.hpp"
#include "ucd/metrics.hpp"
#include "ucd/proximity.hpp"
#include "ucd/rng.hpp"

namespace ucd {

// Analytic forms over a feature vector theta (0-based components):
//   constant:   c0
//   linear:     c0 + sum_i c_{i+1} theta_i
//   sinusoidal: c0 sin(2 pi c1 theta_0) + c2 theta_1 + c3
//   radial:     c0 + c1 cos(theta_0) + c2 sin(theta_0) + c3 theta_1   (theta_0 = rho)
enum class FormKind { constant, linear, sinusoidal, radial };

struct AnalyticForm {
  FormKind kind = FormKind::constant;
  std::vector<double> coeffs{0.0};

  double operator()(std::span<const double> theta) const;
};

struct EncounterSpec {
  enum class Scenario { car_following, cut_in };
  Scenario scenario = Scenario::car_following;
  std::size_t events = 200;
  double frame_rate = 10.0;
  // Ranges sampled uniformly per event; set lo == hi to fix a value.
  double gap_lo = 50.0, gap_hi = 80.0;            // m, bumper to bumper at t = 0
  double ego_speed_lo = 18.0, ego_speed_hi = 26.0;  // m/s
  double closing_lo = 3.0, closing_hi = 6.0;        // m/s
  double decel_lo = 4.0, decel_hi = 7.0;            // m/s^2 during evasion
  double min_clearance = 2.0;  // m, bumper gap left at the critical moment
  double min_critical = 6.5;   // s after the start
  double post_critical = 2.0;  // s simulated after the critical moment
  double lateral_amplitude = 3.75;  // m, cut-in initial lateral offset
  double cut_in_duration = 4.0;     // s
  int lateral_side = 1;             // +1 left, -1 right
  double ego_length = 4.5, ego_width = 1.8;
  double target_length = 4.5, target_width = 1.8;
};

struct GeneratorSpec {
  std::string preset = "custom";
  std::uint64_t seed = 0;
  std::size_t dimension = 3;
  std::size_t samples = 2000;
  std::vector<double> domain_lo{0.0, 0.0, 0.0};
  std::vector<double> domain_hi{1.0, 1.0, 1.0};
  AnalyticForm mu;
  AnalyticForm sigma{FormKind::constant, {0.3}};
  EncounterSpec encounter;

  // Throws DataError when dimensions disagree or sigma is negative on a
  // domain corner or the domain centre.
  void validate() const;
};

// "linear", "sinusoidal" or "radial". Throws DataError otherwise.
GeneratorSpec preset(const std::string& name, std::uint64_t seed = 0);
std::vector<std::string> preset_names();

// theta ~ U(domain), ln s = mu(theta) + sigma(theta) z with z ~ N(0, 1).
std::vector<TrainingSample> gen_context_corpus(const GeneratorSpec& spec);
SampleSet gen_context_set(const GeneratorSpec& spec);

struct SyntheticEncounter {
  InteractionEvent event;
  double critical_time = 0.0;
  std::vector<bool> danger;  // per ego frame: inside (critical - 3, critical]
  double initial_gap = 0.0;
  double closing_speed = 0.0;
  double evasive_onset = 0.0;  // s after the start, +inf without evasion
  double deceleration = 0.0;
};

// Deterministic encounter from fixed parameters. decel == 0 means no evasion:
// the event ends at contact, gap / closing_speed after the start. Throws
// DataError for a negative initial gap or closing speed <= 0.
SyntheticEncounter simulate_encounter(const EncounterSpec& spec, const std::string& id,
                                      double initial_gap, double ego_speed, double closing_speed,
                                      double evasive_onset, double deceleration);

// `spec.encounter.events` encounters with randomised parameters drawn so that
// the warning filter passes and the safe and danger windows are disjoint.
std::vector<SyntheticEncounter> gen_encounters(const GeneratorSpec& spec);

// Per-frame oracle metric: 1 on danger frames, 0 elsewhere (warn_above).
std::vector<MetricSample> oracle_metric(const SyntheticEncounter& enc);

struct HighwayScene {
  std::vector<Trajectory> trajectories;
  LaneLayout layout;
  std::vector<double> lower_markings;
  std::size_t lane_changes = 0;
};

// Three-lane carriageway at 25 Hz with constant-speed lanes and cosine lane
// changes that keep every pair of vehicles apart. duration >= 12 s.
HighwayScene gen_highway(std::uint64_t seed, std::size_t vehicles_per_lane = 6,
                         double duration = 30.0);

struct McEstimate {
  double p = 0.0;
  double standard_error = 0.0;
  std::size_t trials = 0;
};

// Fraction of trials in which all n lognormal(phi) draws are >= s. Requires
// n >= 1 and trials >= 1e4 (DataError otherwise).
McEstimate mc_extreme_oracle(const LognormalParams& phi, std::size_t n, double s,
                             std::size_t trials, std::uint64_t seed);

// Standard normal deviate by Box-Muller on the counter generator; one
// deviate per two draws.
double standard_normal(CounterRng& rng);

}  // namespace ucd
