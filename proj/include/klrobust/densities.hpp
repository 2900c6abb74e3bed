#pragma once

#include <functional>
#include <initializer_list>
#include <utility>

#include "klrobust/numerics.hpp"

namespace klrobust {

struct SupportMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Probability density on the real line, handled through its log-pdf.
///
/// `mass_interval(c)` must return an interval outside of which an analytic
/// envelope of the density carries at most mass c; it drives the truncation
/// of every real-line integral. `breakpoints()` lists the points where the
/// pdf is not smooth so quadrature panels can split there.
class Density {
 public:
  using LogPdfFn = std::function<double(double)>;
  using MassIntervalFn = std::function<Interval(double)>;

  Density(LogPdfFn log_pdf, MassIntervalFn mass_interval,
          std::vector<double> breakpoints = {})
      : log_pdf_(std::move(log_pdf)),
        mass_interval_(std::move(mass_interval)),
        breakpoints_(std::move(breakpoints)) {
    std::sort(breakpoints_.begin(), breakpoints_.end());
  }

  double log_pdf(double y) const { return log_pdf_(y); }
  double pdf(double y) const { return std::exp(log_pdf_(y)); }
  Interval mass_interval(double cutoff) const { return mass_interval_(cutoff); }
  std::span<const double> breakpoints() const { return breakpoints_; }

 private:
  LogPdfFn log_pdf_;
  MassIntervalFn mass_interval_;
  std::vector<double> breakpoints_;
};

inline std::vector<double> merge_breakpoints(
    std::initializer_list<std::span<const double>> lists) {
  std::vector<double> out;
  for (const auto& s : lists) out.insert(out.end(), s.begin(), s.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// ∫ f over the real line, truncated and panel-split by `envelope`.
template <class F>
double integrate_real_line(F&& f, const Density& envelope,
                           const Tolerances& tol) {
  return integrate_real_line(
      std::forward<F>(f),
      [&envelope](double c) { return envelope.mass_interval(c); },
      envelope.breakpoints(), tol);
}

inline double normalization(const Density& d, const Tolerances& tol) {
  return integrate_real_line([&d](double y) { return d.pdf(y); }, d, tol);
}

inline constexpr double kValidationMassCutoff = 1e-12;
inline constexpr double kSymmetryLogTol = 1e-10;
inline constexpr double kMonotoneTieTol = 1e-12;

/// True iff log f1(y) and log f0(-y) agree within 1e-10 on a grid spanning
/// all but 1e-12 of the nominal mass.
inline bool check_symmetry(const Density& f0, const Density& f1,
                           int grid_size = 512) {
  if (grid_size < 100)
    throw InvalidParameter("check_symmetry: grid_size must be at least 100");
  const Interval iv = hull(f0.mass_interval(kValidationMassCutoff),
                           f1.mass_interval(kValidationMassCutoff));
  for (double y : linspace(iv.lo, iv.hi, grid_size)) {
    if (!(std::abs(f1.log_pdf(y) - f0.log_pdf(-y)) <= kSymmetryLogTol))
      return false;
  }
  return true;
}

/// True iff ln L = ln f1 - ln f0 is strictly increasing across consecutive
/// grid points, tolerating machine-level ties of at most 1e-12.
inline bool check_monotone_lr(const Density& f0, const Density& f1,
                              int grid_size = 2048) {
  if (grid_size < 1000)
    throw InvalidParameter(
        "check_monotone_lr: grid_size must be at least 1000");
  const Interval iv = hull(f0.mass_interval(kValidationMassCutoff),
                           f1.mass_interval(kValidationMassCutoff));
  const auto grid = linspace(iv.lo, iv.hi, grid_size);
  double prev = f1.log_pdf(grid.front()) - f0.log_pdf(grid.front());
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double cur = f1.log_pdf(grid[i]) - f0.log_pdf(grid[i]);
    if (!(cur - prev > -kMonotoneTieTol)) return false;
    prev = cur;
  }
  return true;
}

/// Nominal pair (f0, f1) with its symmetry and monotone-likelihood-ratio
/// checks run once at construction. The saddle solver refuses pairs whose
/// flags are not both set.
class NominalPair {
 public:
  NominalPair(Density f0, Density f1, int symmetry_grid = 512,
              int lr_grid = 2048)
      : f0_(std::move(f0)),
        f1_(std::move(f1)),
        validated_symmetric_(check_symmetry(f0_, f1_, symmetry_grid)),
        validated_monotone_lr_(check_monotone_lr(f0_, f1_, lr_grid)) {}

  const Density& f0() const { return f0_; }
  const Density& f1() const { return f1_; }
  bool validated_symmetric() const { return validated_symmetric_; }
  bool validated_monotone_lr() const { return validated_monotone_lr_; }

  /// ln L(y) = ln f1(y) - ln f0(y); requires f0(y) > 0.
  double log_likelihood_ratio(double y) const {
    const double l0 = f0_.log_pdf(y);
    if (!(l0 > -std::numeric_limits<double>::infinity()))
      throw SupportMismatch("log_likelihood_ratio: f0 vanishes at y = " +
                            std::to_string(y));
    return f1_.log_pdf(y) - l0;
  }

  /// Interval carrying all but 1e-12 of the mass of either nominal.
  Interval validation_interval() const {
    return hull(f0_.mass_interval(kValidationMassCutoff),
                f1_.mass_interval(kValidationMassCutoff));
  }

  std::vector<double> breakpoints() const {
    return merge_breakpoints({f0_.breakpoints(), f1_.breakpoints()});
  }

 private:
  Density f0_;
  Density f1_;
  bool validated_symmetric_;
  bool validated_monotone_lr_;
};

inline bool check_symmetry(const NominalPair& pair, int grid_size = 512) {
  return check_symmetry(pair.f0(), pair.f1(), grid_size);
}

inline bool check_monotone_lr(const NominalPair& pair, int grid_size = 2048) {
  return check_monotone_lr(pair.f0(), pair.f1(), grid_size);
}

// ---------------------------------------------------------------------------
// Density families
// ---------------------------------------------------------------------------

/// N(-1, sigma^2) under H0 against N(+1, sigma^2) under H1.
inline NominalPair gaussian_pair(double sigma) {
  if (!(sigma > 0.0))
    throw InvalidParameter("gaussian_pair: sigma must be positive");
  auto shifted_normal = [sigma](double mean) {
    const double log_norm =
        -0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma);
    return Density(
        [mean, sigma, log_norm](double y) {
          const double t = (y - mean) / sigma;
          return log_norm - 0.5 * t * t;
        },
        [mean, sigma](double cutoff) {
          const double c = std::clamp(cutoff, 1e-300, 0.5);
          // two-tail mass beyond k*sigma is at most exp(-k^2/2)
          const double r = sigma * (std::sqrt(2.0 * std::log(1.0 / c)) + 0.5);
          return Interval(mean - r, mean + r);
        });
  };
  return NominalPair(shifted_normal(-1.0), shifted_normal(1.0));
}

/// Generalized Gaussian noise a*exp(-|n/b|^alpha) with variance sigma^2,
/// shifted to means -1/+1. The amplitude and scale are solved numerically
/// from the total-mass and second-moment conditions.
inline NominalPair generalized_gaussian_pair(double alpha, double sigma) {
  if (!(alpha > 1.0))
    throw InvalidParameter(
        "generalized_gaussian_pair: alpha must exceed 1 for a monotone "
        "likelihood ratio");
  if (!(sigma > 0.0))
    throw InvalidParameter("generalized_gaussian_pair: sigma must be positive");

  Tolerances ct;
  ct.quad_rel_err = 1e-13;
  ct.quad_abs_err = 1e-15;
  const double u_max = std::pow(45.0, 1.0 / alpha) + 3.0;
  const double mass = 2.0 * integrate(
      [alpha](double u) { return std::exp(-std::pow(u, alpha)); },
      Interval(0.0, u_max), ct);
  const double second = 2.0 * integrate(
      [alpha](double u) { return u * u * std::exp(-std::pow(u, alpha)); },
      Interval(0.0, u_max), ct);
  const double scale = sigma * std::sqrt(mass / second);
  const double log_amp = -std::log(scale * mass);

  auto shifted = [alpha, scale, log_amp](double mean) {
    return Density(
        [alpha, scale, log_amp, mean](double y) {
          return log_amp - std::pow(std::abs((y - mean) / scale), alpha);
        },
        [alpha, scale, log_amp, mean](double cutoff) {
          const double c = std::clamp(cutoff, 1e-300, 0.5);
          // one-tail mass beyond t >= scale is below amp*scale*e^{-(t/scale)^alpha}
          const double arg =
              std::max(std::log(2.0 * std::exp(log_amp) * scale / c), 1.0);
          const double r = scale * (std::pow(arg, 1.0 / alpha) + 1.0) + 0.5;
          return Interval(mean - r, mean + r);
        },
        {mean});
  };
  return NominalPair(shifted(-1.0), shifted(1.0));
}

/// Asymmetric Laplace noise, fat tail of rate a away from the competing
/// hypothesis: f1(y) = f_L(y-1), f0(y) = f_L(-(y+1)) with
/// f_L(n) = c e^{-an} (n >= 0), c e^{bn} (n <= 0), c = (1/a + 1/b)^{-1}.
inline NominalPair asymmetric_laplace_pair(double a, double b) {
  if (!(a > 0.0) || !(b > a))
    throw InvalidParameter("asymmetric_laplace_pair: need b > a > 0");
  const double log_c = -std::log(1.0 / a + 1.0 / b);
  const double amp = std::exp(log_c);
  auto tail = [amp](double rate, double cutoff) {
    return std::log(2.0 * amp / (rate * cutoff)) / rate + 0.5;
  };
  Density f1(
      [log_c, a, b](double y) {
        const double n = y - 1.0;
        return log_c + (n >= 0.0 ? -a * n : b * n);
      },
      [a, b, tail](double cutoff) {
        const double c = std::clamp(cutoff, 1e-300, 0.5);
        return Interval(1.0 - tail(b, c), 1.0 + tail(a, c));
      },
      {1.0});
  Density f0(
      [log_c, a, b](double y) {
        const double n = -(y + 1.0);
        return log_c + (n >= 0.0 ? -a * n : b * n);
      },
      [a, b, tail](double cutoff) {
        const double c = std::clamp(cutoff, 1e-300, 0.5);
        return Interval(-1.0 - tail(a, c), -1.0 + tail(b, c));
      },
      {-1.0});
  return NominalPair(std::move(f0), std::move(f1));
}

/// Cauchy noise shifted to means -1/+1. The pair is symmetric but its
/// likelihood ratio is not monotone, so construction succeeds with the
/// monotone-LR flag cleared and the saddle solver rejects it.
inline NominalPair cauchy_pair(double scale) {
  if (!(scale > 0.0))
    throw InvalidParameter("cauchy_pair: scale must be positive");
  const double log_norm = -std::log(std::numbers::pi * scale);
  auto shifted = [scale, log_norm](double mean) {
    return Density(
        [scale, log_norm, mean](double y) {
          const double t = (y - mean) / scale;
          return log_norm - std::log1p(t * t);
        },
        [scale, mean](double cutoff) {
          const double c = std::clamp(cutoff, 1e-300, 0.5);
          const double r = 2.0 * scale / (std::numbers::pi * c) + 2.0 * scale;
          return Interval(mean - r, mean + r);
        });
  };
  return NominalPair(shifted(-1.0), shifted(1.0));
}

// ---------------------------------------------------------------------------
// Divergence and the geodesic
// ---------------------------------------------------------------------------

/// Relative entropy D(g|f) = ∫ g ln(g/f), with the 0*ln(0) := 0 convention.
inline double kl_divergence(const Density& g, const Density& f,
                            const Tolerances& tol) {
  const auto breaks = merge_breakpoints({g.breakpoints(), f.breakpoints()});
  return integrate_real_line(
      [&g, &f](double y) {
        const double lg = g.log_pdf(y);
        const double w = std::exp(lg);
        if (w == 0.0) return 0.0;
        const double lf = f.log_pdf(y);
        if (!(lf > -std::numeric_limits<double>::infinity()))
          throw SupportMismatch("kl_divergence: g has mass where f vanishes");
        return w * (lg - lf);
      },
      [&g](double c) { return g.mass_interval(c); }, breaks, tol);
}

/// Z(u) = ∫ f1^u f0^{1-u}.
inline double geodesic_normalizer(const NominalPair& pair, double u,
                                  const Tolerances& tol) {
  if (!(u >= 0.0 && u <= 1.0))
    throw InvalidParameter("geodesic: u must lie in [0, 1]");
  if (u == 0.0 || u == 1.0) return 1.0;
  const Density& f0 = pair.f0();
  const Density& f1 = pair.f1();
  const auto breaks = pair.breakpoints();
  return integrate_real_line(
      [&f0, &f1, u](double y) {
        return std::exp(u * f1.log_pdf(y) + (1.0 - u) * f0.log_pdf(y));
      },
      [&f0, &f1](double c) {
        const double cc = std::clamp(0.25 * c, 1e-300, 0.5);
        return hull(f0.mass_interval(cc), f1.mass_interval(cc));
      },
      breaks, tol);
}

/// Normalized geodesic density f_u = f1^u f0^{1-u} / Z(u) linking the two
/// nominals; u = 1/2 gives the mid-way density equidistant in KL from both.
inline Density geodesic_density(const NominalPair& pair, double u,
                                const Tolerances& tol) {
  if (!(u >= 0.0 && u <= 1.0))
    throw InvalidParameter("geodesic: u must lie in [0, 1]");
  if (u == 0.0) return pair.f0();
  if (u == 1.0) return pair.f1();
  const double z = geodesic_normalizer(pair, u, tol);
  const double log_z = std::log(z);
  const Density f0 = pair.f0();
  const Density f1 = pair.f1();
  return Density(
      [f0, f1, u, log_z](double y) {
        return u * f1.log_pdf(y) + (1.0 - u) * f0.log_pdf(y) - log_z;
      },
      // f_u <= (u f1 + (1-u) f0)/Z(u) pointwise, so halve the cutoff and
      // rescale by Z(u) before delegating to the nominal envelopes.
      [f0, f1, z](double c) {
        const double cc = std::clamp(0.5 * c * z, 1e-300, 0.5);
        return hull(f0.mass_interval(cc), f1.mass_interval(cc));
      },
      pair.breakpoints());
}

}  // namespace klrobust
