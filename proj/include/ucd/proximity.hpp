#pragma once

#include <span>
#include <vector>

namespace ucd {

// Parameters of the conditional lognormal proximity distribution: ln(s) is
// Gaussian with mean mu and standard deviation sigma.
struct LognormalParams {
  double mu = 0.0;
  double sigma = 1.0;
};

// Density of the proximity distribution at s > 0 (1/m). Throws
// std::domain_error for s <= 0 or sigma <= 0.
double lognormal_pdf(double s, const LognormalParams& phi);

// Conflict function F(s) = P(S <= s) = 1/2 + 1/2 erf((ln s - mu) / (sigma sqrt 2)).
// F(0) = 0 and F(+inf) = 1.
double conflict_function(double s, const LognormalParams& phi);

// 1 - F(s), evaluated without cancellation in the upper tail.
double exceedance(double s, const LognormalParams& phi);

// ln(1 - F(s)), accurate when F(s) is tiny.
double log_exceedance(double s, const LognormalParams& phi);

// Conflict probability C(n; s, phi) = (1 - F(s))^n: the probability that s is
// the minimum proximity over n interactions in the same context. n >= 1 and
// may be fractional.
double conflict_probability(double n, double s, const LognormalParams& phi);

// Warning-facing alias of conflict_probability.
inline double estimate_probability(double n, double s, const LognormalParams& phi) {
  return conflict_probability(n, s, phi);
}

// Intensity n such that C(n; s, phi) = p, for 0.5 < p < 1:
//   n = ln p / ln(1 - F(s)).
// F(s) = 0 yields +infinity and F(s) = 1 yields 0. Throws std::domain_error
// for p outside (0.5, 1).
double invert_intensity(double p, double s, const LognormalParams& phi);

// Supremum of intensities whose conflict probability exceeds 0.5:
//   ln 0.5 / ln(1 - F(s)).
double max_intensity(double s, const LognormalParams& phi);

// Per-moment summary of the probability/intensity evaluation.
struct ConflictAssessment {
  double s = 0.0;
  LognormalParams phi;
  double exceedance = 0.0;
  std::vector<double> n_values;
  std::vector<double> p_at_n;
  double n_max = 0.0;
  bool n_max_below_one = false;
};

ConflictAssessment assess_conflict(double s, const LognormalParams& phi,
                                   std::span<const double> n_values);

}  // namespace ucd
