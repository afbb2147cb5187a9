#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "ucd/error.hpp"
#include "ucd/evaluation.hpp"
#include "ucd/proximity.hpp"
#include "ucd/synthetic.hpp"

using namespace ucd;

namespace {

EncounterSpec follow_spec() {
  EncounterSpec s;
  s.frame_rate = 10.0;
  return s;
}

}  // namespace

TEST(AnalyticForm, Evaluates) {
  const std::vector<double> th{0.25, 0.5, 0.75};
  EXPECT_DOUBLE_EQ((AnalyticForm{FormKind::constant, {1.5}})(th), 1.5);
  EXPECT_DOUBLE_EQ((AnalyticForm{FormKind::linear, {1.0, 2.0, -1.0, 4.0}})(th), 1.0 + 0.5 - 0.5 + 3.0);
  EXPECT_NEAR((AnalyticForm{FormKind::sinusoidal, {1.0, 1.0, 1.0, 0.0}})(th), 1.0 + 0.5, 1e-15);
  EXPECT_NEAR((AnalyticForm{FormKind::radial, {1.0, 2.0, 3.0, 4.0}})(th),
              1.0 + 2.0 * std::cos(0.25) + 3.0 * std::sin(0.25) + 2.0, 1e-15);
}

TEST(Presets, ValidateAndRejectUnknown) {
  for (const auto& name : preset_names()) EXPECT_NO_THROW(preset(name).validate()) << name;
  EXPECT_THROW(preset("cubic"), DataError);
  auto g = preset("linear");
  g.sigma = {FormKind::linear, {0.1, -1.0}};
  EXPECT_THROW(g.validate(), DataError);
  g = preset("linear");
  g.domain_hi.pop_back();
  EXPECT_THROW(g.validate(), DataError);
}

TEST(ContextCorpus, ZeroSigmaIsExactMean) {
  auto g = preset("sinusoidal", 5);
  g.sigma = {FormKind::constant, {0.0}};
  g.samples = 300;
  for (const auto& s : gen_context_corpus(g)) EXPECT_EQ(s.log_s, g.mu(s.features));
}

TEST(ContextCorpus, InsideDomain) {
  const auto g = preset("radial", 2);
  for (const auto& s : gen_context_corpus(g))
    for (std::size_t j = 0; j < g.dimension; ++j) {
      EXPECT_GE(s.features[j], g.domain_lo[j]);
      EXPECT_LE(s.features[j], g.domain_hi[j]);
    }
}

TEST(ContextCorpus, SeedDeterminism) {
  const auto a = gen_context_corpus(preset("linear", 11));
  const auto b = gen_context_corpus(preset("linear", 11));
  const auto c = gen_context_corpus(preset("linear", 12));
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].features, b[i].features);
    EXPECT_EQ(a[i].log_s, b[i].log_s);
    differs = differs || a[i].log_s != c[i].log_s;
  }
  EXPECT_TRUE(differs);
}

TEST(ContextCorpus, ResidualsAreStandardNormal) {
  auto g = preset("linear", 9);
  g.samples = 40000;
  const auto corpus = gen_context_corpus(g);
  double m1 = 0.0, m2 = 0.0;
  for (const auto& s : corpus) {
    const double z = (s.log_s - g.mu(s.features)) / g.sigma(s.features);
    m1 += z;
    m2 += z * z;
  }
  const double n = static_cast<double>(corpus.size());
  m1 /= n;
  m2 /= n;
  // Standard errors: 1/sqrt(n) for the mean, sqrt(2/n) for the second moment.
  EXPECT_LT(std::abs(m1), 4.0 / std::sqrt(n));
  EXPECT_LT(std::abs(m2 - 1.0), 4.0 * std::sqrt(2.0 / n));
}

TEST(ContextCorpus, SampleSetShape) {
  const auto set = gen_context_set(preset("sinusoidal", 1));
  EXPECT_EQ(set.size(), 2000u);
  EXPECT_EQ(set.schema.dimension(), 3u);
}

TEST(SimulateEncounter, NoEvasionEndsAtContact) {
  const auto spec = follow_spec();
  const double gap = 30.0, dv = 5.0;
  const auto enc = simulate_encounter(spec, "e", gap, 20.0, dv, 0.0, 0.0);
  EXPECT_NEAR(enc.critical_time, gap / dv, 1.0 / spec.frame_rate + 1e-9);
  EXPECT_NEAR(enc.event.t_end, enc.critical_time, 1e-9);
  EXPECT_TRUE(std::isinf(enc.evasive_onset));
}

TEST(SimulateEncounter, KinematicallyConsistent) {
  const auto spec = follow_spec();
  const auto enc = simulate_encounter(spec, "e", 60.0, 22.0, 5.0, 4.0, 5.0);
  const double dt = 1.0 / spec.frame_rate;
  for (const auto* tr : {&enc.event.ego, &enc.event.target}) {
    for (std::size_t k = 1; k < tr->states.size(); ++k) {
      const auto& p = tr->states[k - 1];
      const auto& c = tr->states[k];
      EXPECT_NEAR(c.position.x - p.position.x, p.velocity.x * dt, 1e-6);
      EXPECT_NEAR(c.position.y - p.position.y, p.velocity.y * dt, 1e-6);
    }
  }
  const auto& ego = enc.event.ego.states;
  for (std::size_t k = 1; k < ego.size(); ++k)
    EXPECT_NEAR(ego[k].velocity.x - ego[k - 1].velocity.x, ego[k - 1].acceleration_long * dt, 1e-6);
}

TEST(SimulateEncounter, EvasionStopsShortOfContact) {
  const auto spec = follow_spec();
  const auto enc = simulate_encounter(spec, "e", 60.0, 22.0, 5.0, 4.0, 5.0);
  for (const auto& [e, t] : aligned_states(enc.event))
    EXPECT_GT(t.position.x - e.position.x - 0.5 * (e.length + t.length), 0.0);
  EXPECT_NEAR(enc.event.t_end - enc.critical_time, spec.post_critical, 1e-9);
}

TEST(SimulateEncounter, DangerFramesMatchWindow) {
  const auto enc = simulate_encounter(follow_spec(), "e", 60.0, 22.0, 5.0, 4.0, 5.0);
  ASSERT_EQ(enc.danger.size(), enc.event.ego.states.size());
  std::size_t count = 0;
  for (std::size_t i = 0; i < enc.danger.size(); ++i) {
    const double t = enc.event.ego.states[i].time;
    EXPECT_EQ(enc.danger[i], t > enc.critical_time - 3.0 + 1e-9 && t <= enc.critical_time + 1e-9);
    count += enc.danger[i];
  }
  EXPECT_EQ(count, 30u);
}

TEST(SimulateEncounter, MirroredCutInHasSameSpacing) {
  auto left = follow_spec();
  left.scenario = EncounterSpec::Scenario::cut_in;
  left.lateral_side = 1;
  auto right = left;
  right.lateral_side = -1;
  const auto a = simulate_encounter(left, "l", 40.0, 22.0, 4.0, 5.0, 5.0);
  const auto b = simulate_encounter(right, "r", 40.0, 22.0, 4.0, 5.0, 5.0);
  const auto pa = aligned_states(a.event);
  const auto pb = aligned_states(b.event);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_NEAR(centre_distance(pa[i].first, pa[i].second),
                centre_distance(pb[i].first, pb[i].second), 1e-9);
    EXPECT_NEAR(pa[i].second.position.y, -pb[i].second.position.y, 1e-12);
  }
  EXPECT_NEAR(a.critical_time, b.critical_time, 1e-12);
}

TEST(SimulateEncounter, RejectsInfeasibleKinematics) {
  const auto spec = follow_spec();
  EXPECT_THROW(simulate_encounter(spec, "e", -1.0, 20.0, 5.0, 0.0, 0.0), DataError);
  EXPECT_THROW(simulate_encounter(spec, "e", 30.0, 20.0, 0.0, 0.0, 0.0), DataError);
  EXPECT_THROW(simulate_encounter(spec, "e", 30.0, 3.0, 5.0, 0.0, 0.0), DataError);
}

TEST(GenEncounters, PassFilterAndSeparateWindows) {
  auto g = preset("linear", 4);
  g.encounter.events = 60;
  const auto encs = gen_encounters(g);
  ASSERT_EQ(encs.size(), 60u);
  for (const auto& enc : encs) {
    EXPECT_TRUE(passes_warning_filter(enc.event)) << enc.event.id;
    EXPECT_GE(enc.critical_time - 3.0, enc.event.t_start + 3.0 - 1e-9) << enc.event.id;
  }
}

TEST(GenEncounters, OracleMetricIsPerfect) {
  auto g = preset("linear", 6);
  g.encounter.events = 40;
  std::vector<EventMetric> events;
  for (const auto& enc : gen_encounters(g))
    events.push_back({label_event_at(enc.event, enc.critical_time), oracle_metric(enc)});
  const auto roc = sweep_roc(events, Direction::warn_above);
  EXPECT_DOUBLE_EQ(roc.auc, 1.0);
  EXPECT_EQ(roc.optimal_fpr, 0.0);
  EXPECT_EQ(roc.optimal_tpr, 1.0);
}

TEST(GenEncounters, Deterministic) {
  auto g = preset("linear", 8);
  g.encounter.events = 10;
  const auto a = gen_encounters(g);
  const auto b = gen_encounters(g);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].critical_time, b[i].critical_time);
    EXPECT_EQ(a[i].initial_gap, b[i].initial_gap);
    EXPECT_EQ(a[i].event.ego.states.size(), b[i].event.ego.states.size());
  }
}

TEST(GenEncounters, InfeasibleRangesThrow) {
  auto g = preset("linear", 1);
  g.encounter.gap_lo = g.encounter.gap_hi = 3.0;
  EXPECT_THROW(gen_encounters(g), DataError);
}

TEST(Highway, LaneChangesWithoutContact) {
  const auto scene = gen_highway(3);
  EXPECT_EQ(scene.trajectories.size(), 18u);
  EXPECT_GE(scene.lane_changes, 3u);
  std::size_t extracted = 0;
  for (const auto& tr : scene.trajectories) extracted += extract_lane_changes(tr, scene.layout).size();
  EXPECT_EQ(extracted, scene.lane_changes);
  for (std::size_t i = 0; i < scene.trajectories.size(); ++i)
    for (std::size_t j = i + 1; j < scene.trajectories.size(); ++j) {
      const auto& a = scene.trajectories[i].states;
      const auto& b = scene.trajectories[j].states;
      for (std::size_t k = 0; k < a.size(); ++k)
        EXPECT_FALSE(boxes_overlap(footprint(a[k]), footprint(b[k])));
    }
  EXPECT_FALSE(pair_interactions(scene.trajectories, scene.layout).empty());
  EXPECT_THROW(gen_highway(3, 6, 5.0), DataError);
}

TEST(MonteCarlo, AgreesWithClosedForm) {
  const LognormalParams phi{0.0, 1.0};
  for (double s : {0.5, 1.0, 2.0}) {
    for (std::size_t n : {1u, 5u}) {
      const auto est = mc_extreme_oracle(phi, n, s, 200000, 17);
      const double c = conflict_probability(static_cast<double>(n), s, phi);
      EXPECT_LT(std::abs(est.p - c), 4.0 * std::max(est.standard_error, 1e-4)) << s << " " << n;
    }
  }
}

TEST(MonteCarlo, DeterministicAndValidated) {
  const LognormalParams phi{0.5, 0.7};
  EXPECT_EQ(mc_extreme_oracle(phi, 3, 1.2, 20000, 5).p, mc_extreme_oracle(phi, 3, 1.2, 20000, 5).p);
  EXPECT_THROW(mc_extreme_oracle(phi, 0, 1.0, 20000, 1), DataError);
  EXPECT_THROW(mc_extreme_oracle(phi, 1, 1.0, 100, 1), DataError);
  EXPECT_EQ(mc_extreme_oracle(phi, 4, 0.0, 20000, 1).p, 1.0);
}

TEST(StandardNormal, Moments) {
  CounterRng rng(21, 0);
  const int n = 100000;
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = standard_normal(rng);
    m1 += z;
    m2 += z * z;
  }
  EXPECT_LT(std::abs(m1 / n), 4.0 / std::sqrt(n));
  EXPECT_LT(std::abs(m2 / n - 1.0), 4.0 * std::sqrt(2.0 / n));
}
