#include "ucd/context.hpp"

#include <cmath>
#include <cstdio>

#include "ucd/error.hpp"

namespace ucd {

std::string FeatureSchema::hash() const {
  std::uint64_t h = 14695981039346656037ull;
  auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0x1f;  // field separator
    h *= 1099511628211ull;
  };
  feed(version);
  for (const auto& n : names) feed(n);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

FeatureSchema generic_schema(std::size_t dimension) {
  FeatureSchema schema{"generic-v1", {}};
  for (std::size_t i = 0; i < dimension; ++i) schema.names.push_back("x" + std::to_string(i));
  return schema;
}

std::array<double, ContextVector::kDimension> ContextVector::to_features() const {
  return {v_ego_sq, v_target_sq, delta_v_sq, delta_v,  a_ego,  rel_heading_sin,
          rel_heading_cos, len_ego, len_target, rho_sin, rho_cos};
}

const FeatureSchema& context_schema() {
  static const FeatureSchema schema{
      "traffic-context-v1",
      {"v_ego_sq", "v_target_sq", "delta_v_sq", "delta_v", "a_ego", "rel_heading_sin",
       "rel_heading_cos", "len_ego", "len_target", "rho_sin", "rho_cos"}};
  return schema;
}

namespace {

void set_rho(ContextVector& c, Vec2 offset) {
  const RelativeSpacing sp = spacing_polar(offset);
  c.rho_sin = std::sin(sp.rho);
  c.rho_cos = std::cos(sp.rho);
}

Vec2 unit(Vec2 v) {
  const double n = v.norm();
  if (!(n > 1e-12)) throw GeometryError("undefined heading");
  return v * (1.0 / n);
}

}  // namespace

ContextVector build_context(const VehicleState& ego, const VehicleState& target) {
  ContextVector c;
  c.v_ego_sq = ego.velocity.squared_norm();
  c.v_target_sq = target.velocity.squared_norm();
  const Vec2 dv = target.velocity - ego.velocity;
  c.delta_v = dv.norm();
  c.delta_v_sq = c.delta_v * c.delta_v;
  c.a_ego = ego.acceleration_long;
  const Vec2 he = unit(ego.heading);
  const Vec2 ht = unit(target.heading);
  c.rel_heading_sin = cross(he, ht);
  c.rel_heading_cos = dot(he, ht);
  c.len_ego = ego.length;
  c.len_target = target.length;
  set_rho(c, to_ego_frame(ego, target));
  return c;
}

ContextVector context_at_offset(const ContextVector& base, double x, double y) {
  ContextVector c = base;
  set_rho(c, Vec2{x, y});
  return c;
}

SampleSet SampleSet::subset(const std::vector<std::size_t>& rows) const {
  SampleSet out;
  out.schema = schema;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.log_s.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(r);
    out.log_s(static_cast<Eigen::Index>(i)) = log_s(r);
  }
  return out;
}

SampleSet make_sample_set(FeatureSchema schema, const std::vector<TrainingSample>& samples) {
  SampleSet set;
  const auto d = static_cast<Eigen::Index>(schema.dimension());
  set.schema = std::move(schema);
  set.features.resize(static_cast<Eigen::Index>(samples.size()), d);
  set.log_s.resize(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (static_cast<Eigen::Index>(s.features.size()) != d)
      throw SchemaError("sample " + std::to_string(i) + " has " +
                        std::to_string(s.features.size()) + " features, schema expects " +
                        std::to_string(d));
    if (!std::isfinite(s.log_s)) throw DataError("sample " + std::to_string(i) + " has non-finite log_s");
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < d; ++j) set.features(row, j) = s.features[static_cast<std::size_t>(j)];
    set.log_s(row) = s.log_s;
  }
  return set;
}

TrainingSample traffic_sample(const VehicleState& ego, const VehicleState& target) {
  const double s = centre_distance(ego, target);
  if (!(s > 0.0)) throw DataError("coincident vehicle centres at t=" + std::to_string(ego.time));
  const auto f = build_context(ego, target).to_features();
  return {std::vector<double>(f.begin(), f.end()), std::log(s)};
}

std::vector<double> FeatureStats::apply(const std::vector<double>& raw) const {
  if (raw.size() != mean.size())
    throw SchemaError("feature vector has " + std::to_string(raw.size()) + " entries, expected " +
                      std::to_string(mean.size()));
  std::vector<double> out(raw.size());
  for (std::size_t j = 0; j < raw.size(); ++j)
    out[j] = degenerate[j] ? 0.0 : (raw[j] - mean[j]) / scale[j];
  return out;
}

Eigen::MatrixXd FeatureStats::apply(const Eigen::MatrixXd& raw) const {
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    if (degenerate[k])
      out.col(j).setZero();
    else
      out.col(j) = (raw.col(j).array() - mean[k]) / scale[k];
  }
  return out;
}

Eigen::MatrixXd FeatureStats::invert(const Eigen::MatrixXd& standardized) const {
  Eigen::MatrixXd out(standardized.rows(), standardized.cols());
  for (Eigen::Index j = 0; j < standardized.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    out.col(j) = standardized.col(j).array() * (degenerate[k] ? 0.0 : scale[k]) + mean[k];
  }
  return out;
}

FeatureStats fit_feature_stats(const Eigen::MatrixXd& features) {
  FeatureStats st;
  const auto n = static_cast<double>(features.rows());
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    const double m = features.col(j).mean();
    const double var = (features.col(j).array() - m).square().sum() / n;
    const double sd = std::sqrt(var);
    const bool flat = !(sd > 1e-12 * std::max(1.0, std::abs(m)));
    st.mean.push_back(m);
    st.scale.push_back(flat ? 1.0 : sd);
    st.degenerate.push_back(flat);
  }
  return st;
}

std::pair<SampleSet, FeatureStats> standardize(const SampleSet& samples) {
  if (samples.size() < 2) throw DataError("standardize requires at least 2 samples");
  FeatureStats st = fit_feature_stats(samples.features);
  SampleSet out = samples;
  out.features = st.apply(samples.features);
  return {std::move(out), std::move(st)};
}

SampleSet destandardize(const SampleSet& standardized, const FeatureStats& stats) {
  SampleSet out = standardized;
  out.features = stats.invert(standardized.features);
  return out;
}

}  // namespace ucd
