#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace klrobust {

struct NonConvergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TruncationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoSignChange : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidParameter : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Accuracy knobs shared by quadrature, root finding, truncation and the
/// Monte Carlo machinery. Quadrature targets must sit well below the 1e-6
/// verification gates, hence the quad_rel_err < 1e-3 requirement.
struct Tolerances {
  double quad_rel_err = 1e-10;
  double quad_abs_err = 1e-12;
  double root_abs_err = 1e-9;
  double support_mass_cutoff = 1e-14;
  std::uint64_t mc_seed = 1;

  void validate() const {
    if (!(quad_rel_err > 0.0) || !(quad_abs_err > 0.0) ||
        !(root_abs_err > 0.0) || !(support_mass_cutoff > 0.0))
      throw InvalidParameter(
          "Tolerances: all tolerance fields must be strictly positive");
    if (!(quad_rel_err < 1e-3))
      throw InvalidParameter("Tolerances: quad_rel_err must be below 1e-3");
  }
};

/// Finite integration range with lo < hi.
struct Interval {
  double lo;
  double hi;

  Interval(double lo_, double hi_) : lo(lo_), hi(hi_) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
      throw InvalidParameter("Interval: need finite lo < hi");
  }
  double width() const { return hi - lo; }
};

inline Interval hull(const Interval& a, const Interval& b) {
  return Interval(std::min(a.lo, b.lo), std::max(a.hi, b.hi));
}

/// n >= 2 evenly spaced points covering [lo, hi] inclusive.
inline std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 2) throw InvalidParameter("linspace: need at least two points");
  std::vector<double> out(static_cast<std::size_t>(n));
  const double step = (hi - lo) / (n - 1);
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = lo + i * step;
  out.back() = hi;
  return out;
}

namespace detail {

// 15-point Kronrod extension of the 7-point Gauss rule (positive abscissae,
// descending). Gauss nodes are the odd-indexed entries plus the midpoint.
inline constexpr double kKronrodNodes[8] = {
    0.99145537112081263920685469752633,
    0.94910791234275852452618968404785,
    0.86486442335976907278971278864093,
    0.74153118559939443986386477328079,
    0.58608723546769113029414483825873,
    0.40584515137739716690660641207696,
    0.20778495500789846760068940377324,
    0.0};
inline constexpr double kKronrodWeights[8] = {
    0.02293532201052922496373200805897,
    0.06309209262997855329070066318920,
    0.10479001032225018383987632254152,
    0.14065325971552591874518959051024,
    0.16900472663926790282658342659855,
    0.19035057806478540991325640242101,
    0.20443294007529889241416199923465,
    0.20948214108472782801299917489171};
inline constexpr double kGaussWeights[4] = {
    0.12948496616886969327061143267908,
    0.27970539148927666790146777142378,
    0.38183005050511894495036977548898,
    0.41795918367346938775510204081633};

struct PanelEstimate {
  double integral;
  double error;
};

template <class F>
PanelEstimate kronrod_panel(F&& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double fc = f(c);
  double kron = fc * kKronrodWeights[7];
  double gauss = fc * kGaussWeights[3];
  for (int i = 0; i < 7; ++i) {
    const double dx = h * kKronrodNodes[i];
    const double fsum = f(c - dx) + f(c + dx);
    kron += kKronrodWeights[i] * fsum;
    if (i % 2 == 1) gauss += kGaussWeights[i / 2] * fsum;
  }
  return {h * kron, std::abs(h * (kron - gauss))};
}

struct Panel {
  double a;
  double b;
  double integral;
  double error;
};

struct PanelErrorLess {
  bool operator()(const Panel& x, const Panel& y) const {
    return x.error < y.error;
  }
};

// Geometric grading anchors: 0 and the points ±2^k inside iv. A wide
// truncation interval (heavy-tailed envelope) would otherwise hide all of
// its mass between the nodes of one giant panel, where the error estimate
// cannot see it.
inline std::vector<double> dyadic_anchors(const Interval& iv) {
  std::vector<double> pts;
  if (iv.lo < 0.0 && iv.hi > 0.0) pts.push_back(0.0);
  const double reach = std::max(std::abs(iv.lo), std::abs(iv.hi));
  for (double r = 1.0; r < reach && std::isfinite(r); r *= 2.0) {
    if (r > iv.lo && r < iv.hi) pts.push_back(r);
    if (-r > iv.lo && -r < iv.hi) pts.push_back(-r);
  }
  return pts;
}

}  // namespace detail

/// Adaptive Gauss-Kronrod quadrature of f over iv, with panels pre-split at
/// the given interior breakpoints. The worst panel is bisected until the
/// summed error estimate drops below max(quad_abs_err, quad_rel_err*|I|).
template <class F>
double integrate_split(F&& f, const Interval& iv,
                       std::span<const double> breakpoints,
                       const Tolerances& tol) {
  tol.validate();
  std::vector<double> edges;
  edges.reserve(breakpoints.size() + 2);
  edges.push_back(iv.lo);
  for (double b : breakpoints)
    if (b > iv.lo && b < iv.hi) edges.push_back(b);
  edges.push_back(iv.hi);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  std::priority_queue<detail::Panel, std::vector<detail::Panel>,
                      detail::PanelErrorLess>
      panels;
  double total = 0.0;
  double err = 0.0;
  auto push_panel = [&](double a, double b) {
    const auto est = detail::kronrod_panel(f, a, b);
    total += est.integral;
    err += est.error;
    panels.push({a, b, est.integral, est.error});
  };
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    push_panel(edges[i], edges[i + 1]);

  constexpr int kMaxSplits = 20000;
  int splits = 0;
  while (err > std::max(tol.quad_abs_err, tol.quad_rel_err * std::abs(total))) {
    if (!std::isfinite(total) || !std::isfinite(err))
      throw NonConvergence("integrate: non-finite integrand value");
    if (++splits > kMaxSplits)
      throw NonConvergence("integrate: subdivision budget exhausted, error " +
                           std::to_string(err));
    const detail::Panel worst = panels.top();
    panels.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(worst.a < mid && mid < worst.b))
      throw NonConvergence(
          "integrate: panel width underflow before tolerance met");
    total -= worst.integral;
    err -= worst.error;
    push_panel(worst.a, mid);
    push_panel(mid, worst.b);
  }
  return total;
}

template <class F>
double integrate(F&& f, const Interval& iv, const Tolerances& tol) {
  return integrate_split(std::forward<F>(f), iv, {}, tol);
}

/// Integral of f over the real line, truncated to the interval on which a
/// caller-supplied envelope keeps all but `support_mass_cutoff` of its mass.
/// The envelope callback maps a mass cutoff to that interval.
template <class F, class EnvelopeFn>
double integrate_real_line(F&& f, EnvelopeFn&& envelope,
                           std::span<const double> breakpoints,
                           const Tolerances& tol) {
  tol.validate();
  const Interval iv = [&]() -> Interval {
    try {
      return envelope(tol.support_mass_cutoff);
    } catch (const InvalidParameter&) {
      throw TruncationFailure(
          "integrate_real_line: envelope cannot confine the requested tail "
          "mass to a finite interval");
    }
  }();
  auto anchors = detail::dyadic_anchors(iv);
  anchors.insert(anchors.end(), breakpoints.begin(), breakpoints.end());
  return integrate_split(std::forward<F>(f), iv, anchors, tol);
}

/// Bracketed root finding: Brent's inverse-quadratic/secant steps with a
/// bisection safeguard, never leaving [bracket.lo, bracket.hi]. Stops once
/// the bracket width is below root_abs_err.
template <class F>
double find_root(F&& f, const Interval& bracket, const Tolerances& tol) {
  tol.validate();
  double a = bracket.lo;
  double b = bracket.hi;
  double fa = f(a);
  double fb = f(b);
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if (!(fa * fb < 0.0))
    throw NoSignChange("find_root: f must change sign over the bracket");

  double c = a;
  double fc = fa;
  double d = b - a;
  double e = d;
  for (int it = 0; it < 200; ++it) {
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a;
      fc = fa;
      d = b - a;
      e = d;
    }
    if (std::abs(fc) < std::abs(fb)) {
      a = b;
      b = c;
      c = a;
      fa = fb;
      fb = fc;
      fc = fa;
    }
    const double tol1 =
        2.0 * std::numeric_limits<double>::epsilon() * std::abs(b) +
        0.5 * tol.root_abs_err;
    const double xm = 0.5 * (c - b);
    if (std::abs(xm) <= tol1 || fb == 0.0) return b;
    if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
      const double s = fb / fa;
      double p;
      double q;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        const double qq = fa / fc;
        const double r = fb / fc;
        p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
        q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::abs(p);
      if (2.0 * p < std::min(3.0 * xm * q - std::abs(tol1 * q),
                             std::abs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b;
    fa = fb;
    b += std::abs(d) > tol1 ? d : (xm > 0.0 ? tol1 : -tol1);
    fb = f(b);
  }
  throw NonConvergence("find_root: iteration budget exhausted");
}

/// Upper tail of the standard normal, Q(x) = P(N(0,1) > x).
inline double gaussian_tail_q(double x) {
  if (!std::isfinite(x))
    throw InvalidParameter("gaussian_tail_q: x must be finite");
  return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

}  // namespace klrobust
