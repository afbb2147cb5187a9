#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ucd/geometry.hpp"

namespace ucd {

// Ordered feature names plus a version tag. Trained models carry their schema
// and refuse inputs built against a different one.
struct FeatureSchema {
  std::string version;
  std::vector<std::string> names;

  std::size_t dimension() const { return names.size(); }
  // FNV-1a over the version and names, as 16 hex digits.
  std::string hash() const;
  bool operator==(const FeatureSchema&) const = default;
};

// Generic schema "x0..x{d-1}" used for synthetic corpora.
FeatureSchema generic_schema(std::size_t dimension);

// Interaction-context representation theta for one ego/target pair at one
// instant. Angles enter as (sin, cos) pairs.
struct ContextVector {
  double v_ego_sq = 0.0;
  double v_target_sq = 0.0;
  double delta_v_sq = 0.0;
  double delta_v = 0.0;
  double a_ego = 0.0;
  double rel_heading_sin = 0.0;
  double rel_heading_cos = 1.0;
  double len_ego = 0.0;
  double len_target = 0.0;
  double rho_sin = 0.0;
  double rho_cos = 1.0;

  static constexpr std::size_t kDimension = 11;
  std::array<double, kDimension> to_features() const;
};

const FeatureSchema& context_schema();

ContextVector build_context(const VehicleState& ego, const VehicleState& target);

// Same context with the target relocated to the ego-frame offset (x, y); the
// target's kinematics are kept. Used for spatial heatmaps.
ContextVector context_at_offset(const ContextVector& base, double x, double y);

struct TrainingSample {
  std::vector<double> features;
  double log_s = 0.0;
};

// Row-major sample matrix: features is N x d, log_s has N entries.
struct SampleSet {
  FeatureSchema schema;
  Eigen::MatrixXd features;
  Eigen::VectorXd log_s;

  std::size_t size() const { return static_cast<std::size_t>(log_s.size()); }
  std::size_t dimension() const { return static_cast<std::size_t>(features.cols()); }
  SampleSet subset(const std::vector<std::size_t>& rows) const;
};

SampleSet make_sample_set(FeatureSchema schema, const std::vector<TrainingSample>& samples);

// Sample for the pair with log_s = ln(centre-to-centre distance). Throws
// DataError when the centres coincide.
TrainingSample traffic_sample(const VehicleState& ego, const VehicleState& target);

// Per-feature affine map to zero mean and unit (population) variance.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> scale;
  std::vector<bool> degenerate;  // zero-variance features, mapped to 0

  std::vector<double> apply(const std::vector<double>& raw) const;
  Eigen::MatrixXd apply(const Eigen::MatrixXd& raw) const;
  // Degenerate features map back to their training mean.
  Eigen::MatrixXd invert(const Eigen::MatrixXd& standardized) const;
};

FeatureStats fit_feature_stats(const Eigen::MatrixXd& features);

// Standardised copy of the samples and the fitted statistics. Requires at
// least two samples.
std::pair<SampleSet, FeatureStats> standardize(const SampleSet& samples);

SampleSet destandardize(const SampleSet& standardized, const FeatureStats& stats);

}  // namespace ucd
