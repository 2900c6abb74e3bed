#pragma once

#include <random>

#include "klrobust/saddle.hpp"

namespace klrobust {

struct TabulationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Gap threshold of the certificate, one order above quadrature accuracy so
/// numerical noise cannot raise false alarms.
inline constexpr double kCertificateGapTol = 1e-6;
/// Probes aim this far inside the ball boundary, so that the root-finding
/// error of the boundary solve can never push them outside.
inline constexpr double kProbeBackoff = 1e-7;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Reproducible per-task seed regardless of execution order.
inline std::uint64_t task_seed(std::uint64_t master, std::uint64_t task) {
  return splitmix64(master ^ splitmix64(task + 1));
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

// Fritsch-Carlson slopes: the cubic Hermite interpolant with these slopes is
// monotone whenever the data are.
inline std::vector<double> pchip_slopes(std::span<const double> x,
                                        std::span<const double> v) {
  const std::size_t n = x.size();
  std::vector<double> m(n, 0.0);
  if (n < 2) return m;
  std::vector<double> h(n - 1), d(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = x[i + 1] - x[i];
    d[i] = (v[i + 1] - v[i]) / h[i];
  }
  if (n == 2) {
    m[0] = m[1] = d[0];
    return m;
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (d[i - 1] * d[i] <= 0.0) {
      m[i] = 0.0;
    } else {
      const double w1 = 2.0 * h[i] + h[i - 1];
      const double w2 = h[i] + 2.0 * h[i - 1];
      m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
    }
  }
  auto end_slope = [](double h0, double h1, double d0, double d1) {
    double s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (s * d0 <= 0.0) return 0.0;
    if (d0 * d1 < 0.0 && std::abs(s) > 3.0 * std::abs(d0))
      return 3.0 * d0;
    return s;
  };
  m[0] = end_slope(h[0], h[1], d[0], d[1]);
  m[n - 1] = end_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
  return m;
}

inline double hermite(double x, double x0, double x1, double v0, double v1,
                      double m0, double m1) {
  const double h = x1 - x0;
  const double t = (x - x0) / h;
  const double t2 = t * t;
  const double t3 = t2 * t;
  return (2.0 * t3 - 3.0 * t2 + 1.0) * v0 + (t3 - 2.0 * t2 + t) * h * m0 +
         (-2.0 * t3 + 3.0 * t2) * v1 + (t3 - t2) * h * m1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Probe construction
// ---------------------------------------------------------------------------

/// d translated by s, envelope and breakpoints moved along.
inline Density shift_density(const Density& d, double s) {
  std::vector<double> breaks(d.breakpoints().begin(), d.breakpoints().end());
  for (double& b : breaks) b += s;
  return Density(
      [d, s](double y) { return d.log_pdf(y - s); },
      [d, s](double c) {
        const Interval iv = d.mass_interval(c);
        return Interval(iv.lo + s, iv.hi + s);
      },
      std::move(breaks));
}

/// Convex mixture (1-t) f + t g for t in [0, 1].
inline Density mix_density(const Density& f, const Density& g, double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw InvalidParameter("mix_density: t must lie in [0, 1]");
  if (t == 0.0) return f;
  if (t == 1.0) return g;
  const double log_f_weight = std::log1p(-t);
  const double log_g_weight = std::log(t);
  return Density(
      [f, g, log_f_weight, log_g_weight](double y) {
        return detail::log_add_exp(log_f_weight + f.log_pdf(y),
                                   log_g_weight + g.log_pdf(y));
      },
      [f, g](double c) {
        const double cc = std::clamp(0.5 * c, 1e-300, 0.5);
        return hull(f.mass_interval(cc), g.mass_interval(cc));
      },
      merge_breakpoints({f.breakpoints(), g.breakpoints()}));
}

/// Shift magnitude s with D(f(. - direction*s) | f) = target; the divergence
/// is monotone in the shift for the location families used here, so a
/// bracketed solve on s suffices.
inline double location_shift_for_kl(const Density& f, double target,
                                    double direction, const Tolerances& tol) {
  if (!(target > 0.0))
    throw InvalidParameter("location_shift_for_kl: target must be positive");
  const double dir = direction < 0.0 ? -1.0 : 1.0;
  auto kl_at = [&](double s) {
    return kl_divergence(shift_density(f, dir * s), f, tol) - target;
  };
  double hi = 0.25;
  while (kl_at(hi) < 0.0) {
    hi *= 2.0;
    if (hi > 1e6)
      throw NonConvergence("location_shift_for_kl: no bracketing shift");
  }
  return find_root(kl_at, Interval(0.0, hi), tol);
}

/// Geodesic weight u with D(f_u | f_hypothesis) = target. Moving away from
/// the hypothesis end of the geodesic increases the divergence monotonically
/// up to D(f_1/2|f_j) at u = 1/2, so targets below the feasibility bound
/// always bracket.
inline double geodesic_weight_for_kl(const NominalPair& pair, int hypothesis,
                                     double target, const Tolerances& tol) {
  const Density& base = hypothesis == 0 ? pair.f0() : pair.f1();
  auto gap = [&](double u) {
    return kl_divergence(geodesic_density(pair, u, tol), base, tol) - target;
  };
  const Interval bracket =
      hypothesis == 0 ? Interval(0.0, 0.5) : Interval(0.5, 1.0);
  return find_root(gap, bracket, tol);
}

/// n densities inside the KL ball of the given hypothesis, all within
/// `epsilon` of the nominal: the LF density itself, boundary-scaled geodesic
/// tilts and location shifts, and convex mixtures with the LF density.
inline std::vector<Density> probe_density_ball(const SaddlePoint& sp,
                                               int hypothesis, int n,
                                               std::uint64_t seed,
                                               const Tolerances& tol = {}) {
  tol.validate();
  if (n < 1)
    throw InvalidParameter("probe_density_ball: need at least one probe");
  if (hypothesis != 0 && hypothesis != 1)
    throw InvalidParameter("probe_density_ball: hypothesis must be 0 or 1");
  const Density& nominal = hypothesis == 0 ? sp.pair.f0() : sp.pair.f1();
  const Density& lf = hypothesis == 0 ? sp.lf0 : sp.lf1;
  const double target = std::max(sp.epsilon - kProbeBackoff, 0.5 * sp.epsilon);
  const double toward = hypothesis == 0 ? 1.0 : -1.0;

  const double u_star = geodesic_weight_for_kl(sp.pair, hypothesis, target, tol);
  const double s_toward = location_shift_for_kl(nominal, target, toward, tol);
  const double s_away = location_shift_for_kl(nominal, target, -toward, tol);
  auto geodesic_at_fraction = [&](double frac) {
    const double u = hypothesis == 0 ? frac * u_star
                                     : 1.0 - frac * (1.0 - u_star);
    return geodesic_density(sp.pair, u, tol);
  };

  std::vector<Density> probes;
  probes.reserve(static_cast<std::size_t>(n));
  probes.push_back(lf);
  if (std::ssize(probes) < n) probes.push_back(geodesic_at_fraction(1.0));
  if (std::ssize(probes) < n)
    probes.push_back(shift_density(nominal, toward * s_toward));
  if (std::ssize(probes) < n) probes.push_back(mix_density(nominal, lf, 0.5));

  std::mt19937_64 rng(detail::task_seed(seed, static_cast<std::uint64_t>(hypothesis)));
  int kind = 0;
  while (std::ssize(probes) < n) {
    const double frac = 0.05 + 0.95 * detail::uniform01(rng);
    switch (kind++ % 4) {
      case 0:
        probes.push_back(geodesic_at_fraction(frac));
        break;
      case 1:
        probes.push_back(shift_density(nominal, toward * frac * s_toward));
        break;
      case 2:
        probes.push_back(shift_density(nominal, -toward * frac * s_away));
        break;
      default:
        probes.push_back(mix_density(nominal, lf, frac));
        break;
    }
  }
  return probes;
}

inline std::vector<Density> probe_density_ball(const NominalPair& pair,
                                               int hypothesis, double epsilon,
                                               int n, std::uint64_t seed,
                                               const Tolerances& tol = {}) {
  return probe_density_ball(solve(pair, epsilon, tol), hypothesis, n, seed,
                            tol);
}

// ---------------------------------------------------------------------------
// Certificate
// ---------------------------------------------------------------------------

/// Numerical certificate of the two saddle inequalities plus the KKT
/// boundary conditions.
struct SaddleCertificate {
  double kkt_gap0;            // |D(lf0|f0) - epsilon|
  double kkt_gap1;            // |D(lf1|f1) - epsilon|
  double pe_saddle;           // P_E(delta_R, lf0, lf1)
  double max_rhs_violation;   // worst probe-pair P_E minus pe_saddle
  double min_lhs_gap;         // best rule-probe P_E minus pe_saddle
  int n_probes;               // density probes per hypothesis
  int n_rule_probes;
  std::uint64_t seed;

  bool passes() const {
    return kkt_gap0 <= kCertificateGapTol && kkt_gap1 <= kCertificateGapTol &&
           max_rhs_violation <= kCertificateGapTol &&
           min_lhs_gap >= -kCertificateGapTol;
  }
};

/// Probe both saddle inequalities: densities from the KL balls against the
/// robust rule (right inequality), and rule perturbations against the
/// least-favorable pair (left inequality).
inline SaddleCertificate check_saddle(const SaddlePoint& sp, int n_probes,
                                      std::uint64_t seed,
                                      const Tolerances& tol = {}) {
  tol.validate();
  if (n_probes < 1)
    throw InvalidParameter("check_saddle: need at least one probe");

  const double kkt0 =
      std::abs(kl_divergence(sp.lf0, sp.pair.f0(), tol) - sp.epsilon);
  const double kkt1 =
      std::abs(kl_divergence(sp.lf1, sp.pair.f1(), tol) - sp.epsilon);
  const double pe_saddle = error_prob(sp.rule, sp.lf0, sp.lf1, tol).error;

  auto weighted_mass = [&](auto&& weight, const Density& g) {
    const auto breaks =
        merge_breakpoints({g.breakpoints(), sp.rule.breakpoints()});
    return integrate_real_line(
        [&](double y) { return weight(y) * g.pdf(y); },
        [&g](double c) { return g.mass_interval(c); }, breaks, tol);
  };

  // P_E(delta_R, g0, g1) is separately linear in g0 and g1, so the maximum
  // over all probe pairs is attained at (argmax P_F, argmax P_M).
  const auto ball0 = probe_density_ball(sp, 0, n_probes,
                                        detail::task_seed(seed, 101), tol);
  const auto ball1 = probe_density_ball(sp, 1, n_probes,
                                        detail::task_seed(seed, 202), tol);
  double max_pf = 0.0;
  for (const auto& g : ball0)
    max_pf = std::max(
        max_pf, weighted_mass([&](double y) { return sp.rule.evaluate(y); }, g));
  double max_pm = 0.0;
  for (const auto& g : ball1)
    max_pm = std::max(max_pm, weighted_mass(
        [&](double y) { return 1.0 - sp.rule.evaluate(y); }, g));
  const double max_rhs_violation = 0.5 * (max_pf + max_pm) - pe_saddle;

  // Left inequality: the robust rule itself, threshold shifts, clipped
  // linear ramps and random piecewise-constant rules.
  const int n_rules = n_probes;
  double min_gap = std::numeric_limits<double>::infinity();
  auto consider = [&](auto&& rule, std::span<const double> breaks) {
    const double pe = error_prob(rule, breaks, sp.lf0, sp.lf1, tol).error;
    min_gap = std::min(min_gap, pe - pe_saddle);
  };
  consider([&](double y) { return sp.rule.evaluate(y); },
           sp.rule.breakpoints());

  const Interval iv = sp.pair.validation_interval();
  const double reach = 0.5 * std::max(std::abs(iv.lo), iv.hi);
  const int n_thresh = std::max(3, n_rules / 3);
  const int n_ramps = std::max(3, n_rules / 3);
  const int n_random = std::max(0, n_rules - 1 - n_thresh - n_ramps);

  for (double tau : linspace(-reach, reach, n_thresh)) {
    const double breaks[] = {tau};
    consider([tau](double y) { return y > tau ? 1.0 : (y < tau ? 0.0 : 0.5); },
             breaks);
  }

  const double centers[] = {0.0, sp.y_u, -sp.y_u, 0.5 * sp.y_u, -0.5 * sp.y_u};
  const double w_base = std::max(sp.y_u, 0.2);
  for (int k = 0; k < n_ramps; ++k) {
    const double c = centers[static_cast<std::size_t>(k) % 5];
    const double w = w_base * (0.5 + 0.5 * (k / 5 + 1));
    const double breaks[] = {c - w, c + w};
    consider(
        [c, w](double y) {
          return std::clamp(0.5 + (y - c) / (2.0 * w), 0.0, 1.0);
        },
        breaks);
  }

  std::mt19937_64 rng(detail::task_seed(seed, 303));
  for (int k = 0; k < n_random; ++k) {
    std::vector<double> cuts(5);
    for (double& c : cuts) c = reach * (2.0 * detail::uniform01(rng) - 1.0);
    std::sort(cuts.begin(), cuts.end());
    std::vector<double> levels(6);
    for (double& l : levels) l = detail::uniform01(rng);
    consider(
        [cuts, levels](double y) {
          const auto it = std::upper_bound(cuts.begin(), cuts.end(), y);
          return levels[static_cast<std::size_t>(it - cuts.begin())];
        },
        cuts);
  }

  return SaddleCertificate{kkt0,
                           kkt1,
                           pe_saddle,
                           max_rhs_violation,
                           min_gap,
                           n_probes,
                           1 + n_thresh + n_ramps + n_random,
                           seed};
}

// ---------------------------------------------------------------------------
// Sampling and Monte Carlo
// ---------------------------------------------------------------------------

/// Inverse-CDF sampler on a numerically tabulated CDF. The grid splits at
/// the density's breakpoints and is refined until no cell carries more than
/// 2e-4 of probability; both the CDF and its inverse are monotone cubic
/// (Fritsch-Carlson) interpolants of the table.
class TabulatedSampler {
 public:
  explicit TabulatedSampler(const Density& d, const Tolerances& tol = {}) {
    tol.validate();
    const Interval iv = d.mass_interval(tol.support_mass_cutoff);
    std::vector<double> edges;
    edges.push_back(iv.lo);
    for (double b : d.breakpoints())
      if (b > iv.lo && b < iv.hi) edges.push_back(b);
    for (double a : detail::dyadic_anchors(iv)) edges.push_back(a);
    edges.push_back(iv.hi);
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    auto pdf = [&d](double y) { return d.pdf(y); };
    y_.push_back(iv.lo);
    u_.push_back(0.0);
    double cum = 0.0;
    auto emit = [&](double b, double mass) {
      cum += mass;
      if (cum > u_.back()) {  // skip zero-mass cells, keep u strictly rising
        y_.push_back(b);
        u_.push_back(cum);
      }
    };
    // depth-first refinement keeps the cells in left-to-right order
    auto refine = [&](auto&& self, double a, double b, int depth) -> void {
      const auto est = detail::kronrod_panel(pdf, a, b);
      const bool good_enough =
          est.integral <= kMaxCellMass &&
          est.error <= std::max(1e-16, 1e-9 * est.integral);
      const double mid = 0.5 * (a + b);
      if (good_enough || depth >= 48 || !(a < mid && mid < b)) {
        emit(b, std::max(est.integral, 0.0));
        return;
      }
      self(self, a, mid, depth + 1);
      self(self, mid, b, depth + 1);
    };
    for (std::size_t i = 0; i + 1 < edges.size(); ++i)
      refine(refine, edges[i], edges[i + 1], 0);

    const double total = u_.back();
    if (!(std::abs(total - 1.0) <= 1e-6))
      throw TabulationFailure(
          "TabulatedSampler: tabulated CDF reaches " + std::to_string(total) +
          " instead of 1; the envelope does not cover the density");
    for (double& u : u_) u /= total;
    u_.back() = 1.0;

    quantile_slopes_ = detail::pchip_slopes(u_, y_);
    cdf_slopes_ = detail::pchip_slopes(y_, u_);
  }

  double quantile(double u) const {
    const double uu = std::clamp(u, 0.0, 1.0);
    const std::size_t i = cell_index(u_, uu);
    return detail::hermite(uu, u_[i], u_[i + 1], y_[i], y_[i + 1],
                           quantile_slopes_[i], quantile_slopes_[i + 1]);
  }

  double cdf(double y) const {
    if (y <= y_.front()) return 0.0;
    if (y >= y_.back()) return 1.0;
    const std::size_t i = cell_index(y_, y);
    return detail::hermite(y, y_[i], y_[i + 1], u_[i], u_[i + 1],
                           cdf_slopes_[i], cdf_slopes_[i + 1]);
  }

  /// i.i.d. samples, deterministic for a fixed seed.
  std::vector<double> sample(int n, std::uint64_t seed) const {
    if (n < 1) throw InvalidParameter("sample: n must be positive");
    std::vector<double> out(static_cast<std::size_t>(n));
    std::mt19937_64 rng(seed);
    for (double& y : out) y = quantile(detail::uniform01(rng));
    return out;
  }

  std::size_t table_size() const { return y_.size(); }

 private:
  static constexpr double kMaxCellMass = 2e-4;

  static std::size_t cell_index(const std::vector<double>& knots, double x) {
    const auto it = std::upper_bound(knots.begin(), knots.end(), x);
    const std::size_t i = static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(it - knots.begin() - 1, 0,
                                   static_cast<std::ptrdiff_t>(knots.size()) - 2));
    return i;
  }

  std::vector<double> y_;
  std::vector<double> u_;
  std::vector<double> quantile_slopes_;
  std::vector<double> cdf_slopes_;
};

inline std::vector<double> sample_density(const Density& d, int n,
                                          std::uint64_t seed,
                                          const Tolerances& tol = {}) {
  return TabulatedSampler(d, tol).sample(n, seed);
}

struct MonteCarloError {
  double pe_hat;
  double std_error;
};

/// Empirical error probability of a rule under (g0, g1). The randomization
/// of the rule enters through its expectation delta(y) rather than a coin
/// flip, which lowers the variance without moving the mean.
template <class RuleFn>
MonteCarloError monte_carlo_error(RuleFn&& rule, const Density& g0,
                                  const Density& g1, int n, std::uint64_t seed,
                                  const Tolerances& tol = {}) {
  if (n < 10000)
    throw InvalidParameter("monte_carlo_error: need at least 1e4 samples");
  const TabulatedSampler s0(g0, tol);
  const TabulatedSampler s1(g1, tol);
  const auto y0 = s0.sample(n, detail::task_seed(seed, 0));
  const auto y1 = s1.sample(n, detail::task_seed(seed, 1));
  double sum0 = 0.0, sq0 = 0.0, sum1 = 0.0, sq1 = 0.0;
  for (double y : y0) {
    const double v = rule(y);
    sum0 += v;
    sq0 += v * v;
  }
  for (double y : y1) {
    const double v = 1.0 - rule(y);
    sum1 += v;
    sq1 += v * v;
  }
  const double nn = static_cast<double>(n);
  const double m0 = sum0 / nn;
  const double m1 = sum1 / nn;
  const double v0 = std::max(0.0, (sq0 - nn * m0 * m0) / (nn - 1.0));
  const double v1 = std::max(0.0, (sq1 - nn * m1 * m1) / (nn - 1.0));
  return {0.5 * (m0 + m1), 0.5 * std::sqrt((v0 + v1) / nn)};
}

}  // namespace klrobust
