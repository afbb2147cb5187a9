#include "ucd/proximity.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace ucd {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_sigma(const LognormalParams& phi) {
  if (!(phi.sigma > 0.0)) throw std::domain_error("lognormal sigma must be positive");
}

// Standardised log-proximity (ln s - mu) / (sigma sqrt 2).
double erf_argument(double s, const LognormalParams& phi) {
  return (std::log(s) - phi.mu) / (phi.sigma * std::numbers::sqrt2);
}

}  // namespace

double lognormal_pdf(double s, const LognormalParams& phi) {
  require_sigma(phi);
  if (!(s > 0.0)) throw std::domain_error("lognormal density requires s > 0");
  const double z = (std::log(s) - phi.mu) / phi.sigma;
  return std::exp(-0.5 * z * z) / (s * phi.sigma * std::sqrt(2.0 * std::numbers::pi));
}

double conflict_function(double s, const LognormalParams& phi) {
  require_sigma(phi);
  if (!(s > 0.0)) return 0.0;
  if (std::isinf(s)) return 1.0;
  // erfc keeps relative accuracy in the lower tail where 1 + erf cancels.
  return 0.5 * std::erfc(-erf_argument(s, phi));
}

double exceedance(double s, const LognormalParams& phi) {
  require_sigma(phi);
  if (!(s > 0.0)) return 1.0;
  if (std::isinf(s)) return 0.0;
  return 0.5 * std::erfc(erf_argument(s, phi));
}

double log_exceedance(double s, const LognormalParams& phi) {
  const double f = conflict_function(s, phi);
  if (f < 0.5) return std::log1p(-f);
  return std::log(exceedance(s, phi));
}

double conflict_probability(double n, double s, const LognormalParams& phi) {
  const double log_q = log_exceedance(s, phi);
  if (log_q == 0.0) return 1.0;
  return std::exp(n * log_q);
}

double invert_intensity(double p, double s, const LognormalParams& phi) {
  if (!(p > 0.5 && p < 1.0)) throw std::domain_error("intensity inversion requires 0.5 < p < 1");
  const double log_q = log_exceedance(s, phi);
  if (log_q == 0.0) return kInf;
  if (std::isinf(log_q)) return 0.0;
  return std::log(p) / log_q;
}

double max_intensity(double s, const LognormalParams& phi) {
  const double log_q = log_exceedance(s, phi);
  if (log_q == 0.0) return kInf;
  if (std::isinf(log_q)) return 0.0;
  return -std::numbers::ln2 / log_q;
}

ConflictAssessment assess_conflict(double s, const LognormalParams& phi,
                                   std::span<const double> n_values) {
  ConflictAssessment a;
  a.s = s;
  a.phi = phi;
  a.exceedance = exceedance(s, phi);
  a.n_values.assign(n_values.begin(), n_values.end());
  a.p_at_n.reserve(n_values.size());
  for (double n : n_values) a.p_at_n.push_back(conflict_probability(n, s, phi));
  a.n_max = max_intensity(s, phi);
  a.n_max_below_one = a.n_max < 1.0;
  return a;
}

}  // namespace ucd
