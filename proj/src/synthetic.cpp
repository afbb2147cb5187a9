#include "ucd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>
#include <thread>

#include "ucd/error.hpp"
#include "ucd/evaluation.hpp"

namespace ucd {

namespace {

double coeff(const std::vector<double>& c, std::size_t i) { return i < c.size() ? c[i] : 0.0; }

double uniform_in(CounterRng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

// Stream ids separate independent uses of one seed.
constexpr std::uint64_t kCorpusStream = 1;
constexpr std::uint64_t kEncounterStream = 2;
constexpr std::uint64_t kHighwayStream = 3;
constexpr std::uint64_t kOracleStreamBase = 1000;

}  // namespace

double AnalyticForm::operator()(std::span<const double> theta) const {
  auto th = [&theta](std::size_t i) { return i < theta.size() ? theta[i] : 0.0; };
  switch (kind) {
    case FormKind::constant:
      return coeff(coeffs, 0);
    case FormKind::linear: {
      double v = coeff(coeffs, 0);
      for (std::size_t i = 0; i < theta.size(); ++i) v += coeff(coeffs, i + 1) * theta[i];
      return v;
    }
    case FormKind::sinusoidal:
      return coeff(coeffs, 0) * std::sin(2.0 * std::numbers::pi * coeff(coeffs, 1) * th(0)) +
             coeff(coeffs, 2) * th(1) + coeff(coeffs, 3);
    case FormKind::radial:
      return coeff(coeffs, 0) + coeff(coeffs, 1) * std::cos(th(0)) + coeff(coeffs, 2) * std::sin(th(0)) +
             coeff(coeffs, 3) * th(1);
  }
  return 0.0;
}

void GeneratorSpec::validate() const {
  if (dimension == 0) throw DataError("generator dimension must be positive");
  if (domain_lo.size() != dimension || domain_hi.size() != dimension)
    throw DataError("generator domain bounds must have " + std::to_string(dimension) + " entries");
  for (std::size_t i = 0; i < dimension; ++i)
    if (!(domain_hi[i] >= domain_lo[i])) throw DataError("generator domain upper bound below lower bound");
  std::vector<double> theta(dimension);
  const std::size_t corners = dimension <= 16 ? (std::size_t{1} << dimension) : 0;
  for (std::size_t m = 0; m <= corners; ++m) {
    for (std::size_t i = 0; i < dimension; ++i) {
      theta[i] = m == corners ? 0.5 * (domain_lo[i] + domain_hi[i])
                              : ((m >> i) & 1u ? domain_hi[i] : domain_lo[i]);
    }
    if (sigma(theta) < 0.0) throw DataError("sigma form is negative inside the generator domain");
  }
}

GeneratorSpec preset(const std::string& name, std::uint64_t seed) {
  GeneratorSpec g;
  g.preset = name;
  g.seed = seed;
  g.dimension = 3;
  g.samples = 2000;
  g.domain_lo = {0.0, 0.0, 0.0};
  g.domain_hi = {1.0, 1.0, 1.0};
  if (name == "linear") {
    g.mu = {FormKind::linear, {1.0, 0.8, -0.5, 0.3}};
    g.sigma = {FormKind::linear, {0.2, 0.1, 0.0, 0.0}};
  } else if (name == "sinusoidal") {
    g.mu = {FormKind::sinusoidal, {1.0, 1.0, 1.0, 0.0}};
    g.sigma = {FormKind::constant, {0.3}};
  } else if (name == "radial") {
    g.domain_lo = {-std::numbers::pi, 0.0, 0.0};
    g.domain_hi = {std::numbers::pi, 1.0, 1.0};
    g.mu = {FormKind::radial, {2.5, 0.6, 0.2, 0.4}};
    g.sigma = {FormKind::radial, {0.35, 0.1, 0.0, 0.0}};
  } else {
    throw DataError("unknown preset '" + name + "' (expected linear, sinusoidal or radial)");
  }
  return g;
}

std::vector<std::string> preset_names() { return {"linear", "sinusoidal", "radial"}; }

double standard_normal(CounterRng& rng) {
  const double u1 = 1.0 - rng.uniform();  // (0, 1]
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<TrainingSample> gen_context_corpus(const GeneratorSpec& spec) {
  spec.validate();
  CounterRng rng(spec.seed, kCorpusStream);
  std::vector<TrainingSample> out;
  out.reserve(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    TrainingSample s;
    s.features.resize(spec.dimension);
    for (std::size_t j = 0; j < spec.dimension; ++j)
      s.features[j] = uniform_in(rng, spec.domain_lo[j], spec.domain_hi[j]);
    const double z = standard_normal(rng);
    const double sd = spec.sigma(s.features);
    if (sd < 0.0) throw DataError("sigma form is negative at a sampled point");
    s.log_s = spec.mu(s.features) + sd * z;
    out.push_back(std::move(s));
  }
  return out;
}

SampleSet gen_context_set(const GeneratorSpec& spec) {
  return make_sample_set(generic_schema(spec.dimension), gen_context_corpus(spec));
}

// ---------------------------------------------------------------------------
// Encounters

SyntheticEncounter simulate_encounter(const EncounterSpec& spec, const std::string& id,
                                      double initial_gap, double ego_speed, double closing_speed,
                                      double evasive_onset, double deceleration) {
  if (initial_gap < 0.0) throw DataError("infeasible kinematics: negative initial gap");
  if (!(closing_speed > 0.0)) throw DataError("infeasible kinematics: closing speed must be positive");
  if (!(spec.frame_rate > 0.0)) throw DataError("frame rate must be positive");
  if (deceleration < 0.0) throw DataError("deceleration must be non-negative");
  const double target_speed = ego_speed - closing_speed;
  if (target_speed < 0.0) throw DataError("infeasible kinematics: target would move backwards");

  const double dt = 1.0 / spec.frame_rate;
  const bool cut_in = spec.scenario == EncounterSpec::Scenario::cut_in;
  const double half_lengths = 0.5 * (spec.ego_length + spec.target_length);
  const double side = spec.lateral_side >= 0 ? 1.0 : -1.0;
  const double lat0 = cut_in ? side * spec.lateral_amplitude : 0.0;
  const double cut_start = 0.5;
  const bool evasive = deceleration > 0.0;
  const double release_speed = std::max(0.0, target_speed - 1.0);

  SyntheticEncounter enc;
  enc.initial_gap = initial_gap;
  enc.closing_speed = closing_speed;
  enc.deceleration = deceleration;
  enc.evasive_onset = evasive ? evasive_onset : std::numeric_limits<double>::infinity();

  Trajectory ego, target;
  ego.vehicle_id = 1;
  target.vehicle_id = 2;
  ego.frame_rate = target.frame_rate = spec.frame_rate;

  Vec2 pe{0.0, 0.0}, pt{initial_gap + half_lengths, lat0};
  double ve = ego_speed;
  std::optional<std::size_t> critical;
  std::size_t end_frame = std::numeric_limits<std::size_t>::max();
  for (std::size_t k = 0; k <= end_frame; ++k) {
    const double t = static_cast<double>(k) / spec.frame_rate;
    double a = 0.0;
    if (evasive && t >= evasive_onset - 1e-9 && ve > release_speed)
      a = std::max(-deceleration, (release_speed - ve) / dt);
    double vy = 0.0;
    if (cut_in && t >= cut_start && t < cut_start + spec.cut_in_duration) {
      const double w = std::numbers::pi / spec.cut_in_duration;
      vy = -lat0 * 0.5 * w * std::sin(w * (t - cut_start));
    }

    VehicleState se;
    se.time = t;
    se.position = pe;
    se.velocity = {ve, 0.0};
    se.acceleration_long = a;
    se.heading = {1.0, 0.0};
    se.length = spec.ego_length;
    se.width = spec.ego_width;
    VehicleState st;
    st.time = t;
    st.position = pt;
    st.velocity = {target_speed, vy};
    st.heading = heading_from_velocity(st.velocity, Vec2{1.0, 0.0});
    st.acceleration_long = 0.0;
    st.length = spec.target_length;
    st.width = spec.target_width;
    ego.states.push_back(se);
    target.states.push_back(st);

    if (!critical) {
      const double bumper = pt.x - pe.x - half_lengths;
      const bool contact = boxes_overlap(footprint(se), footprint(st));
      if (contact || bumper <= 0.0) {
        critical = k;
        end_frame = k;
      } else if (ve <= target_speed && t > 0.0) {
        critical = k;
        end_frame = k + static_cast<std::size_t>(std::llround(spec.post_critical * spec.frame_rate));
      }
    }
    if (k > 1000000) throw DataError("encounter did not reach a critical moment");

    pe += Vec2{ve, 0.0} * dt;
    pt += st.velocity * dt;
    ve += a * dt;
  }

  enc.event = make_event(id, ego, target, 0.0, static_cast<double>(end_frame) / spec.frame_rate, EventKind::near_crash);
  enc.critical_time = cut_in ? label_event(enc.event).critical_time
                             : static_cast<double>(*critical) / spec.frame_rate;
  enc.danger.reserve(enc.event.ego.states.size());
  for (const auto& s : enc.event.ego.states)
    enc.danger.push_back(s.time > enc.critical_time - kDangerWindow + 1e-9 &&
                         s.time <= enc.critical_time + 1e-9);
  return enc;
}

std::vector<SyntheticEncounter> gen_encounters(const GeneratorSpec& spec) {
  const EncounterSpec& es = spec.encounter;
  CounterRng rng(spec.seed, kEncounterStream);
  const double dt = 1.0 / es.frame_rate;
  const double onset_floor = WarningFilter{}.braking_window + dt;
  std::vector<SyntheticEncounter> out;
  out.reserve(es.events);
  for (std::size_t i = 0; i < es.events; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const double gap = uniform_in(rng, es.gap_lo, es.gap_hi);
      const double speed = uniform_in(rng, es.ego_speed_lo, es.ego_speed_hi);
      const double dv = uniform_in(rng, es.closing_lo, es.closing_hi);
      const double dec = uniform_in(rng, es.decel_lo, es.decel_hi);
      const double u = rng.uniform();
      if (!(dec > 0.0)) throw DataError("random encounters need positive deceleration");
      // Onset bounds: reach the critical moment late enough, stop short of contact.
      const double lo = std::max(onset_floor, es.min_critical - dv / dec);
      const double hi = (gap - es.min_clearance - dv * dv / (2.0 * dec)) / dv - 2.0 * dt;
      if (hi < lo) continue;
      const double onset = std::ceil((lo + (hi - lo) * u) / dt - 1e-9) * dt;
      char name[32];
      std::snprintf(name, sizeof name, "enc-%04zu", i);
      auto enc = simulate_encounter(es, name, gap, speed, dv, onset, dec);
      enc.event.ego.vehicle_id = static_cast<std::int64_t>(2 * i + 1);
      enc.event.target.vehicle_id = static_cast<std::int64_t>(2 * i + 2);
      out.push_back(std::move(enc));
      placed = true;
    }
    if (!placed) throw DataError("encounter parameter ranges admit no feasible scenario");
  }
  return out;
}

std::vector<MetricSample> oracle_metric(const SyntheticEncounter& enc) {
  std::vector<MetricSample> out;
  out.reserve(enc.danger.size());
  for (std::size_t i = 0; i < enc.danger.size(); ++i)
    out.push_back({enc.event.ego.states[i].time, enc.danger[i] ? 1.0 : 0.0, true});
  return out;
}

// ---------------------------------------------------------------------------
// Highway scene

namespace {

struct LaneChangePlan {
  double t0 = 0.0;
  double duration = 0.0;
  double y_from = 0.0, y_to = 0.0;
  double v_from = 0.0, v_to = 0.0;
};

Trajectory drive(std::int64_t id, double x0, double y0, double speed, double duration, double rate,
                 const std::optional<LaneChangePlan>& plan) {
  Trajectory tr;
  tr.vehicle_id = id;
  tr.frame_rate = rate;
  const double dt = 1.0 / rate;
  const auto frames = static_cast<std::size_t>(std::llround(duration * rate));
  Vec2 p{x0, y0};
  Vec2 v{speed, 0.0};
  for (std::size_t k = 0; k <= frames; ++k) {
    const double t = static_cast<double>(k) / rate;
    Vec2 acc{0.0, 0.0};
    if (plan && t >= plan->t0 && t < plan->t0 + plan->duration) {
      const double w = std::numbers::pi / plan->duration;
      const double amp = plan->y_to - plan->y_from;
      // Target velocity at the next frame follows the cosine lateral profile.
      const double next = std::min(t + dt, plan->t0 + plan->duration);
      const double vy_next = next >= plan->t0 + plan->duration
                                 ? 0.0
                                 : 0.5 * amp * w * std::sin(w * (next - plan->t0));
      const double vx_next = plan->v_from + (plan->v_to - plan->v_from) * std::min(1.0, (next - plan->t0) / plan->duration);
      acc = Vec2{(vx_next - v.x) / dt, (vy_next - v.y) / dt};
    }
    VehicleState s;
    s.time = t;
    s.position = p;
    s.velocity = v;
    s.heading = heading_from_velocity(v, Vec2{1.0, 0.0});
    s.acceleration_long = dot(acc, s.heading);
    s.length = 4.5;
    s.width = 1.9;
    tr.states.push_back(s);
    p += v * dt;
    v += acc * dt;
  }
  return tr;
}

bool keeps_clear(const Trajectory& a, const Trajectory& b) {
  for (std::size_t k = 0; k < a.states.size() && k < b.states.size(); ++k) {
    const auto& sa = a.states[k];
    const auto& sb = b.states[k];
    const double lat = std::abs(sa.position.y - sb.position.y);
    const double lon = std::abs(sa.position.x - sb.position.x);
    if (lat < 0.5 * (sa.width + sb.width) + 0.5 && lon < 0.5 * (sa.length + sb.length) + 3.0) return false;
  }
  return true;
}

}  // namespace

HighwayScene gen_highway(std::uint64_t seed, std::size_t vehicles_per_lane, double duration) {
  constexpr double rate = 25.0;
  if (!(duration >= 12.0)) throw DataError("highway scenes need a duration of at least 12 s");
  HighwayScene scene;
  scene.lower_markings = {0.0, 3.75, 7.5, 11.25};
  scene.layout = layout_from_markings({}, scene.lower_markings);
  const std::vector<double> lane_speed{24.0, 29.0, 34.0};
  CounterRng rng(seed, kHighwayStream);

  struct Vehicle {
    std::size_t lane;
    double x0;
  };
  std::vector<Vehicle> vehicles;
  for (std::size_t l = 0; l < scene.layout.lanes.size(); ++l) {
    double x = uniform_in(rng, 0.0, 30.0);
    for (std::size_t i = 0; i < vehicles_per_lane; ++i) {
      vehicles.push_back({l, x});
      x += uniform_in(rng, 30.0, 60.0);
    }
  }
  std::int64_t next_id = 1;
  for (const auto& v : vehicles)
    scene.trajectories.push_back(drive(next_id++, v.x0, scene.layout.lanes[v.lane].centre,
                                       lane_speed[v.lane], duration, rate, std::nullopt));

  // About half of the vehicles attempt one lane change, with up to four
  // placements tried before giving up.
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    if (rng.uniform() > 0.5) continue;
    const std::size_t lane = vehicles[i].lane;
    for (int attempt = 0; attempt < 4; ++attempt) {
      const double side_u = rng.uniform();
      const double t0 = std::round(uniform_in(rng, 3.0, duration - 9.0) * rate) / rate;
      const double len = std::round(uniform_in(rng, 4.0, 6.0) * rate) / rate;
      std::size_t to;
      if (lane == 0)
        to = 1;
      else if (lane + 1 == scene.layout.lanes.size())
        to = lane - 1;
      else
        to = side_u < 0.5 ? lane - 1 : lane + 1;
      LaneChangePlan plan{t0, len, scene.layout.lanes[lane].centre, scene.layout.lanes[to].centre,
                          lane_speed[lane], lane_speed[to]};
      Trajectory candidate = drive(scene.trajectories[i].vehicle_id, vehicles[i].x0, plan.y_from,
                                   plan.v_from, duration, rate, plan);
      bool clear = true;
      for (std::size_t j = 0; j < scene.trajectories.size() && clear; ++j)
        if (j != i) clear = keeps_clear(candidate, scene.trajectories[j]);
      if (!clear) continue;
      scene.trajectories[i] = std::move(candidate);
      ++scene.lane_changes;
      break;
    }
  }

  for (auto& tr : scene.trajectories) {
    tr.lanes.clear();
    const auto idx = assign_lanes(tr, scene.layout);
    for (int k : idx) tr.lanes.push_back(k < 0 ? -1 : scene.layout.lanes[static_cast<std::size_t>(k)].id);
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Monte Carlo oracle

McEstimate mc_extreme_oracle(const LognormalParams& phi, std::size_t n, double s, std::size_t trials,
                             std::uint64_t seed) {
  if (n < 1) throw DataError("Monte Carlo oracle needs n >= 1");
  if (trials < 10000) throw DataError("Monte Carlo oracle needs at least 1e4 trials");
  if (!(phi.sigma > 0.0)) throw DataError("sigma must be positive");
  McEstimate est;
  est.trials = trials;
  if (s <= 0.0) {
    est.p = 1.0;
    return est;
  }
  if (std::isinf(s)) return est;
  // All draws >= s  <=>  every standard normal deviate >= z_s.
  const double z_s = (std::log(s) - phi.mu) / phi.sigma;
  constexpr std::size_t shard = 1 << 16;
  const std::size_t shards = (trials + shard - 1) / shard;
  auto run = [&](std::size_t first, std::size_t last) {
    std::size_t hits = 0;
    for (std::size_t sh = first; sh < last; ++sh) {
      CounterRng rng(seed, kOracleStreamBase + sh);
      const std::size_t count = std::min(shard, trials - sh * shard);
      for (std::size_t t = 0; t < count; ++t) {
        bool all = true;
        for (std::size_t k = 0; k < n && all; ++k) all = standard_normal(rng) >= z_s;
        hits += all ? 1 : 0;
      }
    }
    return hits;
  };
  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::min<std::size_t>(shards, 16));
  std::vector<std::future<std::size_t>> futs;
  const std::size_t per = (shards + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t a = w * per, b = std::min(shards, a + per);
    if (a >= b) break;
    futs.push_back(std::async(std::launch::async, run, a, b));
  }
  std::size_t hits = 0;
  for (auto& f : futs) hits += f.get();
  est.p = static_cast<double>(hits) / static_cast<double>(trials);
  est.standard_error = std::sqrt(est.p * (1.0 - est.p) / static_cast<double>(trials));
  return est;
}

}  // namespace ucd
