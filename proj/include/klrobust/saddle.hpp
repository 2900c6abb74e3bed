#pragma once

#include "klrobust/densities.hpp"

namespace klrobust {

struct InfeasibleTolerance : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnvalidatedPair : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateRule : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tolerances below this are treated as the epsilon -> 0 limit, where the
/// saddle point collapses onto the nominal Bayes test.
inline constexpr double kDegenerateEpsilon = 1e-10;
/// Rejection margin below D(f_1/2 | f0): at the bound itself y_u diverges
/// and both quadrature and root finding become ill-conditioned.
inline constexpr double kFeasibilityMargin = 1e-6;

inline void require_validated(const NominalPair& pair) {
  if (!pair.validated_symmetric())
    throw UnvalidatedPair("nominal pair failed the symmetry check");
  if (!pair.validated_monotone_lr())
    throw UnvalidatedPair(
        "nominal pair failed the monotone likelihood-ratio check");
}

/// Randomized decision rule y -> P(decide H1). Two shapes exist: the
/// log-LR interpolating rule with band edge y_u > 0, and the threshold
/// rule 1{y > 0} used for the nominal test and the epsilon -> 0 saddle.
class RandomizedRule {
 public:
  RandomizedRule(double y_u, std::function<double(double)> log_lr,
                 double log_ell_u)
      : y_u_(y_u),
        log_ell_u_(log_ell_u),
        log_lr_(std::move(log_lr)),
        breakpoints_{-y_u, y_u} {
    if (!(y_u > 0.0))
      throw InvalidParameter("RandomizedRule: y_u must be positive");
    if (!(log_ell_u_ > std::log1p(1e-12)))
      throw DegenerateRule(
          "RandomizedRule: ell_u is too close to 1 for the interpolating "
          "band to be defined");
  }

  static RandomizedRule ml_threshold() { return RandomizedRule(); }

  /// Probability of deciding H1 at y.
  double evaluate(double y) const {
    if (y > y_u_) return 1.0;
    if (y < -y_u_) return 0.0;
    if (!log_lr_) return 0.5;  // threshold rule, only reachable at y == 0
    return std::clamp(0.5 * (1.0 + log_lr_(y) / log_ell_u_), 0.0, 1.0);
  }
  double operator()(double y) const { return evaluate(y); }

  double y_u() const { return y_u_; }
  std::span<const double> breakpoints() const { return breakpoints_; }

 private:
  RandomizedRule() : y_u_(0.0), log_ell_u_(0.0), breakpoints_{0.0} {}

  double y_u_;
  double log_ell_u_;
  std::function<double(double)> log_lr_;
  std::vector<double> breakpoints_;
};

/// Solved saddle point: the band edge y_u with its likelihood-ratio value
/// ell_u = L(y_u), the normalizer z, the least-favorable pair (lf0, lf1)
/// and the randomized robust rule.
struct SaddlePoint {
  double y_u;
  double ell_u;
  double z;
  double epsilon;
  NominalPair pair;
  Density lf0;
  Density lf1;
  RandomizedRule rule;
};

namespace detail {

/// The four segment masses behind the least-favorable construction, kept in
/// the scaled form w = e^{-s}*lower + bridge + e^{s}*upper with s = ln(ell)/2,
/// so that z = e^{s} w never has to be formed when it would overflow.
struct SaddleSegments {
  double log_ell;      // ln L(y_u)
  double s;            // ln(ell)/2
  double lower;        // ∫_{-inf}^{-y_u} f0
  double bridge;       // ∫_{-y_u}^{y_u} (f0 f1)^{1/2}
  double bridge_half;  // ∫_{0}^{y_u} (f0 f1)^{1/2}
  double upper;        // ∫_{y_u}^{inf} f0
  double upper_scaled; // e^{s} * upper, formed in log space
  double w;
  double log_z;
};

template <class F>
double integrate_window(F&& f, double lo, double hi, const Interval& window,
                        std::span<const double> breaks, const Tolerances& tol) {
  const double a = std::max(lo, window.lo);
  const double b = std::min(hi, window.hi);
  if (!(a < b)) return 0.0;
  return integrate_split(std::forward<F>(f), Interval(a, b), breaks, tol);
}

inline SaddleSegments saddle_segments(const NominalPair& pair, double y_u,
                                      const Tolerances& tol) {
  if (!(y_u >= 0.0))
    throw InvalidParameter("saddle: y_u must be nonnegative");
  const Density& f0 = pair.f0();
  const Density& f1 = pair.f1();
  const double log_ell = pair.log_likelihood_ratio(y_u);
  const double s = 0.5 * log_ell;

  // The upper f0 tail is amplified by ell = e^{2s}; shrink its truncation
  // cutoff accordingly so the omitted mass stays below tolerance after
  // amplification.
  const double cut = tol.support_mass_cutoff;
  const double cut_upper =
      std::clamp(cut * std::exp(-std::min(s, 600.0)), 1e-300, 0.5);
  const Interval f0_iv = f0.mass_interval(cut);
  const Interval f0_iv_amp = f0.mass_interval(cut_upper);
  const Interval mid_iv = hull(f0.mass_interval(cut), f1.mass_interval(cut));
  const auto breaks = pair.breakpoints();

  auto f0_pdf = [&f0](double y) { return f0.pdf(y); };
  auto sqrt_f0f1 = [&f0, &f1](double y) {
    return std::exp(0.5 * (f0.log_pdf(y) + f1.log_pdf(y)));
  };

  SaddleSegments seg;
  seg.log_ell = log_ell;
  seg.s = s;
  seg.lower = integrate_window(f0_pdf, -std::numeric_limits<double>::max(),
                               -y_u, f0_iv, breaks, tol);
  seg.upper = integrate_window(f0_pdf, y_u, std::numeric_limits<double>::max(),
                               f0_iv_amp, breaks, tol);
  seg.bridge = y_u > 0.0 ? integrate_window(sqrt_f0f1, -y_u, y_u, mid_iv,
                                            breaks, tol)
                         : 0.0;
  seg.bridge_half = y_u > 0.0 ? integrate_window(sqrt_f0f1, 0.0, y_u, mid_iv,
                                                 breaks, tol)
                              : 0.0;
  seg.upper_scaled =
      seg.upper > 0.0 ? std::exp(s + std::log(seg.upper)) : 0.0;
  seg.w = seg.lower * std::exp(-s) + seg.bridge + seg.upper_scaled;
  seg.log_z = s + std::log(seg.w);
  return seg;
}

/// Three-segment least-favorable density of the given hypothesis.
inline Density lf_density(const NominalPair& pair, int hypothesis, double y_u,
                          double log_ell, double log_z) {
  const Density f0 = pair.f0();
  const Density f1 = pair.f1();
  const Density base = hypothesis == 0 ? f0 : f1;
  const bool amplify_upper = hypothesis == 0;
  auto breaks = merge_breakpoints({f0.breakpoints(), f1.breakpoints()});
  breaks.push_back(-y_u);
  breaks.push_back(y_u);

  return Density(
      [f0, f1, base, amplify_upper, y_u, log_ell, log_z](double y) {
        if (y > y_u)
          return (amplify_upper ? log_ell : 0.0) + base.log_pdf(y) - log_z;
        if (y < -y_u)
          return (amplify_upper ? 0.0 : log_ell) + base.log_pdf(y) - log_z;
        return 0.5 * (log_ell + f0.log_pdf(y) + f1.log_pdf(y)) - log_z;
      },
      // pointwise bound: g <= e^{log_ell - log_z} (f0 + f1)
      [f0, f1, log_ell, log_z](double c) {
        const double shrink = std::exp(
            std::clamp(log_z - std::max(log_ell, 0.0), -600.0, 0.0));
        const double cc = std::clamp(0.5 * c * shrink, 1e-300, 0.5);
        return hull(f0.mass_interval(cc), f1.mass_interval(cc));
      },
      std::move(breaks));
}

}  // namespace detail

/// Normalizer Z(y_u) of the least-favorable construction.
inline double normalizer(const NominalPair& pair, double y_u,
                         const Tolerances& tol) {
  require_validated(pair);
  return std::exp(detail::saddle_segments(pair, y_u, tol).log_z);
}

/// D(y_u) = D(g0_lf(.|y_u) | f0): relative entropy spent by the
/// least-favorable tilt at band edge y_u. Monotone increasing from 0 at
/// y_u = 0 to D(f_1/2|f0) as y_u -> inf.
inline double divergence_at(const NominalPair& pair, double y_u,
                            const Tolerances& tol) {
  require_validated(pair);
  const auto seg = detail::saddle_segments(pair, y_u, tol);
  return -seg.log_z +
         seg.log_ell * (seg.upper_scaled + seg.bridge_half) / seg.w;
}

/// Unique band edge with D(y_u) = epsilon, plus everything derived from it.
inline SaddlePoint solve(const NominalPair& pair, double epsilon,
                         const Tolerances& tol = {}) {
  tol.validate();
  require_validated(pair);
  if (!(epsilon > 0.0))
    throw InvalidParameter("solve: epsilon must be positive");

  const double d_midway =
      kl_divergence(geodesic_density(pair, 0.5, tol), pair.f0(), tol);
  if (!(epsilon < d_midway - kFeasibilityMargin))
    throw InfeasibleTolerance(
        "solve: epsilon = " + std::to_string(epsilon) +
        " must stay below D(f_1/2|f0) = " + std::to_string(d_midway) +
        ", otherwise the two uncertainty balls intersect");

  if (epsilon < kDegenerateEpsilon) {
    return SaddlePoint{0.0,     1.0,         1.0,
                       epsilon, pair,        pair.f0(),
                       pair.f1(), RandomizedRule::ml_threshold()};
  }

  double hi = 1.0;
  while (divergence_at(pair, hi, tol) < epsilon) {
    hi *= 2.0;
    if (hi > 1e6)
      throw NonConvergence("solve: could not bracket D(y_u) = epsilon");
  }
  const double y_u = find_root(
      [&](double y) { return divergence_at(pair, y, tol) - epsilon; },
      Interval(0.0, hi), tol);

  const auto seg = detail::saddle_segments(pair, y_u, tol);
  return SaddlePoint{
      y_u,
      std::exp(seg.log_ell),
      std::exp(seg.log_z),
      epsilon,
      pair,
      detail::lf_density(pair, 0, y_u, seg.log_ell, seg.log_z),
      detail::lf_density(pair, 1, y_u, seg.log_ell, seg.log_z),
      RandomizedRule(
          y_u, [pair](double y) { return pair.log_likelihood_ratio(y); },
          seg.log_ell)};
}

/// The LR-flattening nonlinearity: q(l) = l/ell_u above ell_u, 1 across
/// [1/ell_u, ell_u], and ell_u*l below 1/ell_u.
inline double q_transform(double ell, double ell_u) {
  if (!(ell > 0.0))
    throw InvalidParameter("q_transform: ell must be positive");
  if (!(ell_u > 1.0))
    throw InvalidParameter("q_transform: ell_u must exceed 1");
  if (ell > ell_u) return ell / ell_u;
  if (ell < 1.0 / ell_u) return ell_u * ell;
  return 1.0;
}

/// Least-favorable likelihood ratio lf1(y)/lf0(y); identically 1 on the
/// flattened band [-y_u, y_u] and q(L(y)) outside it.
inline double lf_likelihood_ratio(const SaddlePoint& sp, double y) {
  const double log_ell = std::log(sp.ell_u);
  if (y > sp.y_u)
    return std::exp(sp.pair.log_likelihood_ratio(y) - log_ell);
  if (y < -sp.y_u)
    return std::exp(sp.pair.log_likelihood_ratio(y) + log_ell);
  return 1.0;
}

/// Worst-case error probability of the robust rule, attained by the
/// least-favorable pair; equals both the worst-case false-alarm and miss
/// probabilities by symmetry.
inline double worst_case_error(const SaddlePoint& sp, const Tolerances& tol) {
  const auto seg = detail::saddle_segments(sp.pair, sp.y_u, tol);
  return (seg.bridge_half + seg.upper_scaled) / seg.w;
}

struct ErrorProbs {
  double false_alarm;  // P_F = ∫ delta g0
  double miss;         // P_M = ∫ (1 - delta) g1
  double error;        // equal priors: (P_F + P_M)/2
};

/// Error probabilities of an arbitrary [0,1]-valued rule against densities
/// (g0, g1); quadrature panels split at the rule's own breakpoints.
template <class RuleFn>
ErrorProbs error_prob(RuleFn&& rule, std::span<const double> rule_breakpoints,
                      const Density& g0, const Density& g1,
                      const Tolerances& tol) {
  const auto b0 = merge_breakpoints({g0.breakpoints(), rule_breakpoints});
  const double pf = integrate_real_line(
      [&](double y) { return rule(y) * g0.pdf(y); },
      [&g0](double c) { return g0.mass_interval(c); }, b0, tol);
  const auto b1 = merge_breakpoints({g1.breakpoints(), rule_breakpoints});
  const double pm = integrate_real_line(
      [&](double y) { return (1.0 - rule(y)) * g1.pdf(y); },
      [&g1](double c) { return g1.mass_interval(c); }, b1, tol);
  return {pf, pm, 0.5 * (pf + pm)};
}

inline ErrorProbs error_prob(const RandomizedRule& rule, const Density& g0,
                             const Density& g1, const Tolerances& tol) {
  return error_prob([&rule](double y) { return rule.evaluate(y); },
                    rule.breakpoints(), g0, g1, tol);
}

}  // namespace klrobust
