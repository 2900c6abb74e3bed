#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "klrobust/saddle.hpp"

using namespace klrobust;
using Catch::Approx;

namespace {

const Tolerances kTol;

double normal_pdf(double y, double mean) {
  return std::exp(-0.5 * (y - mean) * (y - mean)) /
         std::sqrt(2.0 * std::numbers::pi);
}

// Independent brute-force oracle for the normalizer at sigma = 1: composite
// trapezoid on a 10^6-point grid, Gaussian pdfs written out directly.
double trapezoid_normalizer_oracle(double y_u) {
  const double ell = std::exp(2.0 * y_u);
  const double sqrt_ell = std::exp(y_u);
  auto integrand = [&](double y) {
    if (y < -y_u) return normal_pdf(y, -1.0);
    if (y > y_u) return ell * normal_pdf(y, -1.0);
    return sqrt_ell * std::sqrt(normal_pdf(y, 1.0) * normal_pdf(y, -1.0));
  };
  const int n = 1000000;
  const double lo = -40.0, hi = 40.0;
  const double h = (hi - lo) / n;
  double acc = 0.5 * (integrand(lo) + integrand(hi));
  for (int i = 1; i < n; ++i) acc += integrand(lo + i * h);
  return acc * h;
}

}  // namespace

TEST_CASE("divergence_at: endpoints and the paper operating point",
          "[saddle]") {
  const NominalPair pair = gaussian_pair(1.0);
  REQUIRE(divergence_at(pair, 0.0, kTol) == Approx(0.0).margin(1e-10));
  // D(y_u -> inf) = D(f_1/2 | f0) = 1/(2 sigma^2)
  REQUIRE(divergence_at(pair, 50.0, kTol) == Approx(0.5).margin(1e-6));
  REQUIRE(divergence_at(pair, 0.6080, kTol) == Approx(0.1).margin(1e-3));
}

TEST_CASE("divergence_at: strictly increasing for every family", "[saddle]") {
  const NominalPair families[] = {gaussian_pair(1.0),
                                  generalized_gaussian_pair(1.5, 1.0),
                                  asymmetric_laplace_pair(2.0, 4.0)};
  for (const auto& pair : families) {
    double prev = divergence_at(pair, 0.0, kTol);
    for (double y : linspace(0.02, 4.0, 200)) {
      const double cur = divergence_at(pair, y, kTol);
      REQUIRE(cur > prev);
      prev = cur;
    }
  }
}

TEST_CASE("normalizer: unit at zero, oracle value, always above one",
          "[saddle]") {
  const NominalPair pair = gaussian_pair(1.0);
  REQUIRE(normalizer(pair, 0.0, kTol) == Approx(1.0).margin(1e-10));

  const double z_oracle = trapezoid_normalizer_oracle(0.6080);
  REQUIRE(normalizer(pair, 0.6080, kTol) == Approx(z_oracle).margin(1e-6));

  const NominalPair lap = asymmetric_laplace_pair(2.0, 4.0);
  for (double y : linspace(0.05, 3.0, 40)) {
    REQUIRE(normalizer(pair, y, kTol) > 1.0);
    REQUIRE(normalizer(lap, y, kTol) > 1.0);
  }
}

TEST_CASE("solve: published band edges", "[saddle]") {
  const SaddlePoint g = solve(gaussian_pair(1.0), 0.1);
  REQUIRE(g.y_u == Approx(0.6080).margin(5e-3));
  REQUIRE(g.ell_u == Approx(std::exp(2.0 * g.y_u)).epsilon(1e-10));

  const SaddlePoint l = solve(asymmetric_laplace_pair(2.0, 4.0), 0.1);
  REQUIRE(l.y_u == Approx(0.3640).margin(5e-3));
}

TEST_CASE("solve: rejects infeasible tolerances and unvalidated pairs",
          "[saddle]") {
  // D(f_1/2|f0) = 0.5 for the unit-variance Gaussian pair
  REQUIRE_THROWS_AS(solve(gaussian_pair(1.0), 0.6), InfeasibleTolerance);
  REQUIRE_THROWS_AS(solve(gaussian_pair(1.0), 0.5), InfeasibleTolerance);
  REQUIRE_THROWS_AS(solve(cauchy_pair(1.0), 0.1), UnvalidatedPair);
  REQUIRE_THROWS_AS(solve(gaussian_pair(1.0), 0.0), InvalidParameter);
  REQUIRE_THROWS_AS(solve(gaussian_pair(1.0), -0.1), InvalidParameter);
  REQUIRE_THROWS_AS(divergence_at(cauchy_pair(1.0), 0.5, kTol),
                    UnvalidatedPair);
}

TEST_CASE("solve: KKT boundary conditions across families and tolerances",
          "[saddle]") {
  const NominalPair families[] = {gaussian_pair(1.0),
                                  generalized_gaussian_pair(1.5, 1.0),
                                  asymmetric_laplace_pair(2.0, 4.0)};
  for (const auto& pair : families) {
    for (double eps : {0.01, 0.05, 0.1}) {
      const SaddlePoint sp = solve(pair, eps);
      REQUIRE(kl_divergence(sp.lf0, pair.f0(), kTol) ==
              Approx(eps).margin(1e-6));
      REQUIRE(kl_divergence(sp.lf1, pair.f1(), kTol) ==
              Approx(eps).margin(1e-6));
      REQUIRE(normalization(sp.lf0, kTol) == Approx(1.0).margin(1e-8));
      REQUIRE(normalization(sp.lf1, kTol) == Approx(1.0).margin(1e-8));
    }
  }
}

TEST_CASE("least-favorable densities: continuity, mirror symmetry, tilt",
          "[saddle]") {
  const SaddlePoint sp = solve(gaussian_pair(1.0), 0.1);

  SECTION("continuous across the band edges") {
    const double h = 1e-6;
    for (double edge : {sp.y_u, -sp.y_u}) {
      REQUIRE(std::abs(sp.lf0.pdf(edge - h) - sp.lf0.pdf(edge + h)) <= 1e-5);
      REQUIRE(std::abs(sp.lf1.pdf(edge - h) - sp.lf1.pdf(edge + h)) <= 1e-5);
    }
  }

  SECTION("g1(y) = g0(-y) on the validation grid") {
    const Interval iv = sp.pair.validation_interval();
    const double half = std::min(std::abs(iv.lo), iv.hi);
    for (double y : linspace(-half, half, 500)) {
      REQUIRE(sp.lf1.log_pdf(y) == Approx(sp.lf0.log_pdf(-y)).margin(1e-10));
    }
  }

  SECTION("mass moved toward the competing hypothesis") {
    // lf0 is no longer symmetric about -1: the right side now carries more.
    const double right = integrate(
        [&](double y) { return sp.lf0.pdf(y); }, Interval(-1.0, 12.0), kTol);
    const double left = integrate(
        [&](double y) { return sp.lf0.pdf(y); }, Interval(-12.0, -1.0), kTol);
    REQUIRE(right > left);
  }

  SECTION("exponential-tilt structure lf0 = e^{ln(ell) delta} f0 / Z") {
    const double log_ell = std::log(sp.ell_u);
    const double log_z = std::log(sp.z);
    for (double y : linspace(-7.0, 7.0, 1000)) {
      const double lhs = sp.lf0.log_pdf(y) - sp.pair.f0().log_pdf(y);
      REQUIRE(lhs ==
              Approx(log_ell * sp.rule.evaluate(y) - log_z).margin(1e-8));
      const double rhs1 = sp.lf1.log_pdf(y) - sp.pair.f1().log_pdf(y);
      REQUIRE(rhs1 ==
              Approx(log_ell * (1.0 - sp.rule.evaluate(y)) - log_z).margin(1e-8));
    }
  }
}

TEST_CASE("divergence_at agrees with the direct KL of the LF density",
          "[saddle]") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> yd(0.05, 2.5);
  const NominalPair families[] = {gaussian_pair(1.0),
                                  generalized_gaussian_pair(2.5, 1.0),
                                  asymmetric_laplace_pair(2.0, 4.0)};
  for (int trial = 0; trial < 20; ++trial) {
    const NominalPair& pair = families[trial % 3];
    const double y_u = yd(rng);
    const auto seg = detail::saddle_segments(pair, y_u, kTol);
    const Density lf0 =
        detail::lf_density(pair, 0, y_u, seg.log_ell, seg.log_z);
    REQUIRE(divergence_at(pair, y_u, kTol) ==
            Approx(kl_divergence(lf0, pair.f0(), kTol)).margin(1e-8));
  }
}

TEST_CASE("robust rule: values, symmetry, degeneracy", "[saddle]") {
  const SaddlePoint sp = solve(gaussian_pair(1.0), 0.1);
  const RandomizedRule& rule = sp.rule;

  REQUIRE(rule.evaluate(0.0) == Approx(0.5).margin(1e-12));
  REQUIRE(rule.evaluate(sp.y_u) == Approx(1.0).margin(1e-12));
  REQUIRE(rule.evaluate(-sp.y_u) == Approx(0.0).margin(1e-12));
  // Gaussian log-LR is linear, so the band interpolation is linear too.
  REQUIRE(rule.evaluate(sp.y_u / 2.0) == Approx(0.75).margin(1e-10));

  for (double y : linspace(-6.0, 6.0, 500)) {
    const double d = rule.evaluate(y);
    REQUIRE(d >= 0.0);
    REQUIRE(d <= 1.0);
    REQUIRE(1.0 - d == Approx(rule.evaluate(-y)).margin(1e-10));
  }

  REQUIRE_THROWS_AS(
      RandomizedRule(0.5, [](double y) { return y; }, std::log1p(1e-13)),
      DegenerateRule);
  REQUIRE_THROWS_AS(
      RandomizedRule(0.0, [](double y) { return y; }, 1.0), InvalidParameter);
}

TEST_CASE("q_transform: branches and identities", "[saddle]") {
  REQUIRE(q_transform(1.0, 7.0) == 1.0);
  REQUIRE(q_transform(2.0 * 7.0, 7.0) == Approx(2.0).epsilon(1e-14));
  REQUIRE(q_transform(0.01, 5.0) == Approx(0.05).epsilon(1e-14));

  // reciprocal symmetry and monotonicity on a log grid
  double prev = 0.0;
  for (double t : linspace(-3.0, 3.0, 301)) {
    const double ell = std::pow(10.0, t);
    const double q = q_transform(ell, 3.0);
    REQUIRE(q_transform(1.0 / ell, 3.0) == Approx(1.0 / q).margin(1e-12));
    REQUIRE(q >= prev);
    prev = q;
  }

  REQUIRE_THROWS_AS(q_transform(-1.0, 3.0), InvalidParameter);
  REQUIRE_THROWS_AS(q_transform(1.0, 1.0), InvalidParameter);
}

TEST_CASE("lf_likelihood_ratio: flattened band and tails", "[saddle]") {
  const SaddlePoint sp = solve(gaussian_pair(1.0), 0.1);

  REQUIRE(lf_likelihood_ratio(sp, 0.0) == 1.0);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> inside(-sp.y_u, sp.y_u);
  for (int i = 0; i < 50; ++i) {
    REQUIRE(lf_likelihood_ratio(sp, inside(rng)) == Approx(1.0).margin(1e-12));
  }

  // upper branch at y = 2: L(y) = e^{2y} => ratio e^4 / ell_u
  REQUIRE(lf_likelihood_ratio(sp, 2.0) ==
          Approx(std::exp(4.0) / sp.ell_u).epsilon(1e-8));

  SECTION("matches q(L(y)) everywhere") {
    for (double y : linspace(-6.0, 6.0, 1000)) {
      const double nominal = std::exp(sp.pair.log_likelihood_ratio(y));
      REQUIRE(lf_likelihood_ratio(sp, y) ==
              Approx(q_transform(nominal, sp.ell_u)).epsilon(1e-10));
    }
  }

  SECTION("ratio of the LF pdfs reproduces the same function") {
    for (double y : linspace(-4.0, 4.0, 101)) {
      REQUIRE(lf_likelihood_ratio(sp, y) ==
              Approx(std::exp(sp.lf1.log_pdf(y) - sp.lf0.log_pdf(y)))
                  .epsilon(1e-9));
    }
  }
}

TEST_CASE("worst_case_error: limits, range, consistency, monotonicity",
          "[saddle]") {
  const NominalPair pair = gaussian_pair(1.0);

  SECTION("epsilon -> 0 recovers the nominal ML error Q(1)") {
    const SaddlePoint sp = solve(pair, 1e-6);
    REQUIRE(worst_case_error(sp, kTol) == Approx(0.158655).margin(1e-3));
  }

  SECTION("agrees with the quadrature of P_E(delta_R, lf0, lf1)") {
    const SaddlePoint sp = solve(pair, 0.1);
    const double wc = worst_case_error(sp, kTol);
    REQUIRE(wc > 0.0);
    REQUIRE(wc < 0.5);
    const ErrorProbs ep = error_prob(sp.rule, sp.lf0, sp.lf1, kTol);
    REQUIRE(wc == Approx(ep.error).margin(1e-6));
    // worst-case P_F = P_M = P_E under the symmetry of the construction
    REQUIRE(ep.false_alarm == Approx(ep.miss).margin(1e-6));
    REQUIRE(ep.false_alarm == Approx(wc).margin(1e-6));
  }

  SECTION("nondecreasing in epsilon") {
    double prev = 0.0;
    for (double eps : {0.001, 0.01, 0.05, 0.1, 0.2}) {
      const double wc = worst_case_error(solve(pair, eps), kTol);
      REQUIRE(wc >= prev);
      prev = wc;
    }
  }
}

TEST_CASE("error_prob: degenerate rules and the nominal ML detector",
          "[saddle]") {
  const NominalPair pair = gaussian_pair(1.0);

  const ErrorProbs always1 = error_prob([](double) { return 1.0; }, {},
                                        pair.f0(), pair.f1(), kTol);
  REQUIRE(always1.false_alarm == Approx(1.0).margin(1e-10));
  REQUIRE(always1.miss == Approx(0.0).margin(1e-10));
  REQUIRE(always1.error == Approx(0.5).margin(1e-10));

  const ErrorProbs always0 = error_prob([](double) { return 0.0; }, {},
                                        pair.f0(), pair.f1(), kTol);
  REQUIRE(always0.false_alarm == Approx(0.0).margin(1e-10));
  REQUIRE(always0.miss == Approx(1.0).margin(1e-10));
  REQUIRE(always0.error == Approx(0.5).margin(1e-10));

  const ErrorProbs ml = error_prob(RandomizedRule::ml_threshold(), pair.f0(),
                                   pair.f1(), kTol);
  REQUIRE(ml.error == Approx(gaussian_tail_q(1.0)).margin(1e-6));
}
