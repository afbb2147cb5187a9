#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/multiprecision/cpp_dec_float.hpp>
#include <gtest/gtest.h>

#include "ucd/proximity.hpp"

using namespace ucd;
using Big = boost::multiprecision::cpp_dec_float_50;

namespace {

// s at which F(s) = f, from Boost's normal quantile.
double s_at(double f, const LognormalParams& phi) {
  boost::math::normal_distribution<double> z;
  return std::exp(phi.mu + phi.sigma * boost::math::quantile(z, f));
}

double quadrature_cdf(double s, const LognormalParams& phi) {
  // Integrate the lognormal density in u = ln x, where it is a plain Gaussian.
  auto g = [&](double u) {
    const double z = (u - phi.mu) / phi.sigma;
    return std::exp(-0.5 * z * z) / (phi.sigma * std::sqrt(2.0 * std::numbers::pi));
  };
  const double lo = phi.mu - 40.0 * phi.sigma;
  const double hi = std::log(s);
  if (hi <= lo) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(g, lo, hi, 15, 1e-14);
}

Big big_exceedance(double s, const LognormalParams& phi) {
  const Big z = (boost::multiprecision::log(Big(s)) - Big(phi.mu)) /
                (Big(phi.sigma) * boost::multiprecision::sqrt(Big(2)));
  return boost::math::erfc(z) / 2;
}

}  // namespace

TEST(LognormalPdf, ExponentVanishes) {
  EXPECT_NEAR(lognormal_pdf(1.0, {0.0, 1.0}), 1.0 / std::sqrt(2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(lognormal_pdf(1.0, {0.0, 1.0}), 0.39894, 5e-6);
}

TEST(LognormalPdf, DomainErrors) {
  EXPECT_THROW(lognormal_pdf(0.0, {0.0, 1.0}), std::domain_error);
  EXPECT_THROW(lognormal_pdf(-1.0, {0.0, 1.0}), std::domain_error);
  EXPECT_THROW(lognormal_pdf(1.0, {0.0, 0.0}), std::domain_error);
}

TEST(LognormalPdf, IntegratesToOne) {
  const LognormalParams phi{0.7, 0.4};
  auto f = [&](double s) { return lognormal_pdf(s, phi); };
  const double total =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 1e-9, 200.0, 20, 1e-12);
  EXPECT_NEAR(total, 1.0, 1e-8);
}

TEST(ConflictFunction, MedianAndLimits) {
  const LognormalParams phi{1.3, 0.6};
  EXPECT_NEAR(conflict_function(std::exp(phi.mu), phi), 0.5, 1e-15);
  EXPECT_EQ(conflict_function(0.0, phi), 0.0);
  EXPECT_EQ(conflict_function(std::numeric_limits<double>::infinity(), phi), 1.0);
  EXPECT_LT(conflict_function(1e-12, phi), 1e-9);
  EXPECT_GT(conflict_function(1e12, phi), 1.0 - 1e-9);
}

TEST(ConflictFunction, MatchesQuadrature) {
  EXPECT_NEAR(conflict_function(2.0, {0.0, 1.0}), quadrature_cdf(2.0, {0.0, 1.0}), 1e-10);
  EXPECT_NEAR(conflict_function(2.0, {0.0, 1.0}), 0.7559, 1e-4);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> mu(-2, 3), sig(0.05, 2.5), ls(-6, 6);
  for (int i = 0; i < 300; ++i) {
    const LognormalParams phi{mu(rng), sig(rng)};
    const double s = std::exp(phi.mu + phi.sigma * ls(rng));
    EXPECT_NEAR(conflict_function(s, phi), quadrature_cdf(s, phi), 1e-9);
  }
}

TEST(Exceedance, AccurateInUpperTail) {
  const LognormalParams phi{0.0, 1.0};
  for (double z : {3.0, 6.0, 10.0, 20.0}) {
    const double s = std::exp(z);
    const double want = static_cast<double>(big_exceedance(s, phi));
    EXPECT_NEAR(exceedance(s, phi) / want, 1.0, 1e-12) << z;
    EXPECT_NEAR(log_exceedance(s, phi), std::log(want), 1e-10 * std::abs(std::log(want)));
  }
}

TEST(ConflictProbability, Examples) {
  const LognormalParams phi{0.5, 0.8};
  EXPECT_NEAR(conflict_probability(1.0, std::exp(phi.mu), phi), 0.5, 1e-15);
  EXPECT_NEAR(conflict_probability(2.0, s_at(0.1, phi), phi), 0.81, 1e-12);
  EXPECT_NEAR(estimate_probability(2.0, s_at(0.1, phi), phi), 0.81, 1e-12);
}

TEST(ConflictProbability, Limits) {
  const LognormalParams phi{0.0, 1.0};
  EXPECT_EQ(conflict_probability(5.0, 0.0, phi), 1.0);
  EXPECT_EQ(conflict_probability(5.0, std::numeric_limits<double>::infinity(), phi), 0.0);
}

TEST(ConflictProbability, MonotoneInSAndN) {
  const LognormalParams phi{1.0, 0.5};
  double prev = 2.0;
  for (double ls = -1.0; ls <= 3.0; ls += 0.01) {
    const double c = conflict_probability(10.0, std::exp(ls), phi);
    EXPECT_LT(c, prev);
    prev = c;
  }
  const double s = std::exp(1.0);
  prev = 2.0;
  for (double n = 1.0; n <= 200.0; n += 0.5) {
    const double c = conflict_probability(n, s, phi);
    EXPECT_LT(c, prev);
    prev = c;
  }
}

TEST(InvertIntensity, Example) {
  const LognormalParams phi{0.0, 1.0};
  EXPECT_NEAR(invert_intensity(0.81, s_at(0.1, phi), phi), 2.0, 1e-12);
}

TEST(InvertIntensity, Sentinels) {
  const LognormalParams phi{0.0, 1.0};
  EXPECT_EQ(invert_intensity(0.9, 0.0, phi), std::numeric_limits<double>::infinity());
  EXPECT_EQ(invert_intensity(0.9, std::numeric_limits<double>::infinity(), phi), 0.0);
  EXPECT_THROW(invert_intensity(0.5, 1.0, phi), std::domain_error);
  EXPECT_THROW(invert_intensity(1.0, 1.0, phi), std::domain_error);
}

TEST(InvertIntensity, RoundTrip) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> mu(-1, 3), sig(0.1, 2), p(0.5, 1.0), f(0.001, 0.999);
  for (int i = 0; i < 2000; ++i) {
    const LognormalParams phi{mu(rng), sig(rng)};
    const double pp = p(rng);
    if (pp <= 0.5 || pp >= 1.0) continue;
    const double s = s_at(f(rng), phi);
    const double n = invert_intensity(pp, s, phi);
    EXPECT_NEAR(estimate_probability(n, s, phi) / pp, 1.0, 1e-12);
  }
}

TEST(MaxIntensity, ArbitraryPrecisionOracle) {
  const LognormalParams phi{0.0, 1.0};
  const double s = s_at(0.1, phi);
  const Big want = boost::multiprecision::log(Big(0.5)) /
                   boost::multiprecision::log(big_exceedance(s, phi));
  EXPECT_NEAR(max_intensity(s, phi), static_cast<double>(want), 1e-11);
  EXPECT_NEAR(max_intensity(s, phi), 6.5788, 5e-5);
}

TEST(MaxIntensity, MedianGivesOne) {
  const LognormalParams phi{2.0, 0.3};
  EXPECT_NEAR(max_intensity(std::exp(2.0), phi), 1.0, 1e-15);
}

TEST(MaxIntensity, Sentinels) {
  const LognormalParams phi{0.0, 1.0};
  EXPECT_EQ(max_intensity(0.0, phi), std::numeric_limits<double>::infinity());
  EXPECT_EQ(max_intensity(std::numeric_limits<double>::infinity(), phi), 0.0);
  EXPECT_GT(max_intensity(1e-30, phi), 1e50);
}

TEST(MaxIntensity, StrictlyDecreasingInS) {
  const LognormalParams phi{1.0, 0.7};
  double prev = std::numeric_limits<double>::infinity();
  for (double ls = -2.0; ls <= 4.0; ls += 0.01) {
    const double n = max_intensity(std::exp(ls), phi);
    EXPECT_LT(n, prev);
    prev = n;
  }
}

TEST(MaxIntensity, AgreesWithArbitraryPrecisionOnGrid) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> mu(-1, 3), sig(0.1, 2), z(-5, 5);
  for (int i = 0; i < 200; ++i) {
    const LognormalParams phi{mu(rng), sig(rng)};
    const double s = std::exp(phi.mu + phi.sigma * z(rng));
    const Big want = boost::multiprecision::log(Big(0.5)) /
                     boost::multiprecision::log(big_exceedance(s, phi));
    const double w = static_cast<double>(want);
    EXPECT_NEAR(max_intensity(s, phi) / w, 1.0, 1e-11);
  }
}

TEST(AssessConflict, Summary) {
  const LognormalParams phi{0.0, 1.0};
  const std::vector<double> ns{1, 10, 17};
  const double s = s_at(0.1, phi);
  const auto a = assess_conflict(s, phi, ns);
  ASSERT_EQ(a.p_at_n.size(), 3u);
  EXPECT_NEAR(a.exceedance, 0.9, 1e-12);
  EXPECT_NEAR(a.p_at_n[1], std::pow(0.9, 10), 1e-12);
  EXPECT_NEAR(a.n_max, std::log(0.5) / std::log(0.9), 1e-9);
  EXPECT_FALSE(a.n_max_below_one);
  EXPECT_TRUE(assess_conflict(std::exp(2.0), phi, ns).n_max_below_one);
}
