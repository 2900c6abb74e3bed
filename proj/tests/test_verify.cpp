#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "klrobust/verify.hpp"

using namespace klrobust;
using Catch::Approx;

namespace {

const Tolerances kTol;

double ks_statistic(std::vector<double> samples, const TabulatedSampler& s) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = s.cdf(samples[i]);
    d = std::max(d, std::abs((i + 1.0) / n - f));
    d = std::max(d, std::abs(i / n - f));
  }
  return d;
}

}  // namespace

TEST_CASE("location_shift_for_kl: Gaussian closed form", "[verify]") {
  const NominalPair pair = gaussian_pair(1.0);
  // D(f0(. - s) | f0) = s^2 / (2 sigma^2) so s = sqrt(2 eps)
  const double s = location_shift_for_kl(pair.f0(), 0.1, +1.0, kTol);
  REQUIRE(s == Approx(std::sqrt(0.2)).margin(1e-6));
  const double s_back = location_shift_for_kl(pair.f0(), 0.1, -1.0, kTol);
  REQUIRE(s_back == Approx(std::sqrt(0.2)).margin(1e-6));
}

TEST_CASE("geodesic_weight_for_kl: Gaussian closed form", "[verify]") {
  const NominalPair pair = gaussian_pair(1.0);
  // D(f_u | f0) = 2 u^2 for the unit Gaussian pair
  const double u = geodesic_weight_for_kl(pair, 0, 0.1, kTol);
  REQUIRE(u == Approx(std::sqrt(0.05)).margin(1e-6));
  const double u1 = geodesic_weight_for_kl(pair, 1, 0.1, kTol);
  REQUIRE(u1 == Approx(1.0 - std::sqrt(0.05)).margin(1e-6));
}

TEST_CASE("mix_density: endpoints are exact", "[verify]") {
  const SaddlePoint sp = solve(gaussian_pair(1.0), 0.1);
  const Density full = mix_density(sp.pair.f0(), sp.lf0, 1.0);
  const Density none = mix_density(sp.pair.f0(), sp.lf0, 0.0);
  for (double y : {-3.0, -1.0, 0.0, 0.4, 2.5}) {
    REQUIRE(full.pdf(y) == Approx(sp.lf0.pdf(y)).margin(1e-12));
    REQUIRE(none.pdf(y) == Approx(sp.pair.f0().pdf(y)).margin(1e-12));
  }
  const Density half = mix_density(sp.pair.f0(), sp.lf0, 0.5);
  REQUIRE(half.pdf(0.3) ==
          Approx(0.5 * sp.pair.f0().pdf(0.3) + 0.5 * sp.lf0.pdf(0.3))
              .epsilon(1e-12));
  REQUIRE_THROWS_AS(mix_density(sp.pair.f0(), sp.lf0, 1.5), InvalidParameter);
}

TEST_CASE("probe_density_ball: every probe stays inside its ball", "[verify]") {
  const SaddlePoint sp = solve(gaussian_pair(1.0), 0.1);
  for (int hyp : {0, 1}) {
    const Density& nominal = hyp == 0 ? sp.pair.f0() : sp.pair.f1();
    const auto probes = probe_density_ball(sp, hyp, 12, 99, kTol);
    REQUIRE(probes.size() == 12);
    for (const auto& g : probes) {
      const double d = kl_divergence(g, nominal, kTol);
      REQUIRE(d <= sp.epsilon + 1e-8);
      REQUIRE(d >= -1e-10);
      REQUIRE(normalization(g, kTol) == Approx(1.0).margin(1e-7));
    }
  }
  REQUIRE_THROWS_AS(probe_density_ball(sp, 2, 4, 1, kTol), InvalidParameter);
  REQUIRE_THROWS_AS(probe_density_ball(sp, 0, 0, 1, kTol), InvalidParameter);
}

TEST_CASE("probe_density_ball: pair-level overload solves internally",
          "[verify]") {
  const auto probes =
      probe_density_ball(gaussian_pair(1.0), 0, 0.05, 3, 7, kTol);
  REQUIRE(probes.size() == 3);
  const NominalPair pair = gaussian_pair(1.0);
  for (const auto& g : probes)
    REQUIRE(kl_divergence(g, pair.f0(), kTol) <= 0.05 + 1e-8);
}

TEST_CASE("check_saddle: certificate passes for both worked examples",
          "[verify]") {
  SECTION("gaussian") {
    const SaddlePoint sp = solve(gaussian_pair(1.0), 0.1);
    const SaddleCertificate cert = check_saddle(sp, 12, 4242, kTol);
    INFO("kkt0=" << cert.kkt_gap0 << " kkt1=" << cert.kkt_gap1
                 << " rhs=" << cert.max_rhs_violation
                 << " lhs=" << cert.min_lhs_gap);
    REQUIRE(cert.passes());
    REQUIRE(cert.min_lhs_gap <= 1e-10);  // delta_R itself contributes zero
    REQUIRE(cert.pe_saddle ==
            Approx(worst_case_error(sp, kTol)).margin(1e-6));
    REQUIRE(cert.n_probes == 12);
    REQUIRE(cert.n_rule_probes >= 12);
  }
  SECTION("asymmetric laplace") {
    const SaddlePoint sp = solve(asymmetric_laplace_pair(2.0, 4.0), 0.1);
    const SaddleCertificate cert = check_saddle(sp, 10, 7, kTol);
    INFO("kkt0=" << cert.kkt_gap0 << " kkt1=" << cert.kkt_gap1
                 << " rhs=" << cert.max_rhs_violation
                 << " lhs=" << cert.min_lhs_gap);
    REQUIRE(cert.passes());
  }
}

TEST_CASE("TabulatedSampler: moments, KS distance, determinism", "[verify]") {
  const NominalPair pair = gaussian_pair(1.0);
  const TabulatedSampler sampler(pair.f0(), kTol);

  SECTION("sample mean of N(-1,1)") {
    const auto xs = sampler.sample(1000000, 2025);
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    REQUIRE(mean == Approx(-1.0).margin(0.005));
  }

  SECTION("Kolmogorov-Smirnov band against the tabulated CDF") {
    const auto xs = sampler.sample(100000, 31337);
    REQUIRE(ks_statistic(xs, sampler) <= 1.95 / std::sqrt(100000.0));
  }

  SECTION("same seed, same samples") {
    REQUIRE(sampler.sample(500, 77) == sampler.sample(500, 77));
    REQUIRE(sample_density(pair.f0(), 100, 5, kTol) ==
            sample_density(pair.f0(), 100, 5, kTol));
  }

  SECTION("quantile and cdf invert each other") {
    for (double u : {0.001, 0.1, 0.5, 0.9, 0.999}) {
      REQUIRE(sampler.cdf(sampler.quantile(u)) == Approx(u).margin(2e-4));
    }
  }
}

TEST_CASE("TabulatedSampler: works on the kinked LF Laplace density",
          "[verify]") {
  const SaddlePoint sp = solve(asymmetric_laplace_pair(2.0, 4.0), 0.1);
  const TabulatedSampler sampler(sp.lf0, kTol);
  const auto xs = sampler.sample(100000, 11);
  REQUIRE(ks_statistic(xs, sampler) <= 1.95 / std::sqrt(100000.0));
}

TEST_CASE("TabulatedSampler: TabulationFailure when the envelope lies",
          "[verify]") {
  // a unit Gaussian whose claimed support covers only its right half
  const Density half_covered(
      [](double y) {
        return -0.5 * y * y - 0.5 * std::log(2.0 * std::numbers::pi);
      },
      [](double) { return Interval(0.0, 9.0); });
  REQUIRE_THROWS_AS(TabulatedSampler(half_covered, kTol), TabulationFailure);
}

TEST_CASE("monte_carlo_error: exact constants and oracle agreement",
          "[verify]") {
  const NominalPair pair = gaussian_pair(1.0);

  SECTION("rule identically one") {
    const auto mc = monte_carlo_error([](double) { return 1.0; }, pair.f0(),
                                      pair.f1(), 20000, 9, kTol);
    REQUIRE(mc.pe_hat == 0.5);
    REQUIRE(mc.std_error == 0.0);
  }

  SECTION("nominal ML detector reproduces Q(1)") {
    const auto mc = monte_carlo_error(RandomizedRule::ml_threshold(),
                                      pair.f0(), pair.f1(), 1000000, 12, kTol);
    REQUIRE(mc.std_error > 0.0);
    REQUIRE(mc.std_error < 1e-3);
    REQUIRE(std::abs(mc.pe_hat - gaussian_tail_q(1.0)) <= 3.0 * mc.std_error);
  }

  SECTION("robust rule on the LF pair matches the quadrature value") {
    const SaddlePoint sp = solve(pair, 0.1);
    const auto mc =
        monte_carlo_error(sp.rule, sp.lf0, sp.lf1, 1000000, 2718, kTol);
    REQUIRE(std::abs(mc.pe_hat - worst_case_error(sp, kTol)) <=
            3.0 * mc.std_error);
  }

  SECTION("sample-size precondition") {
    REQUIRE_THROWS_AS(monte_carlo_error([](double) { return 1.0; }, pair.f0(),
                                        pair.f1(), 100, 1, kTol),
                      InvalidParameter);
  }
}
