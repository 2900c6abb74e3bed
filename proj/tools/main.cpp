// klrobust: minimax-robust binary hypothesis testing under relative-entropy
// uncertainty balls. Solves the least-favorable pair and randomized robust
// rule, dumps curve/density tables, sweeps SNR, and certifies the saddle
// inequalities numerically.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "klrobust/verify.hpp"

namespace kr = klrobust;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitUnvalidated = 3;
constexpr int kExitVerifyFailed = 4;

// Locale-independent decimal formatting with 12 significant digits.
std::string fmt(double v) {
  char buf[40];
  const auto res =
      std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 12);
  return std::string(buf, res.ptr);
}

struct GridSpec {
  double lo = 0.0;
  double hi = 0.0;
  double step = 0.0;

  std::vector<double> points() const {
    std::vector<double> out;
    for (double v = lo; v <= hi + 0.5 * step; v += step)
      out.push_back(std::min(v, hi));
    return out;
  }
};

GridSpec parse_grid(const std::string& text, const std::string& flag) {
  GridSpec g;
  const auto first = text.find(':');
  const auto second = text.find(':', first + 1);
  if (first == std::string::npos || second == std::string::npos)
    throw CLI::ValidationError(flag, "expected lo:hi:step");
  try {
    g.lo = std::stod(text.substr(0, first));
    g.hi = std::stod(text.substr(first + 1, second - first - 1));
    g.step = std::stod(text.substr(second + 1));
  } catch (const std::exception&) {
    throw CLI::ValidationError(flag, "expected numeric lo:hi:step");
  }
  if (!(g.step > 0.0) || !(g.hi >= g.lo))
    throw CLI::ValidationError(flag, "need hi >= lo and step > 0");
  return g;
}

struct Options {
  std::string family = "gaussian";
  double sigma = 1.0;
  double alpha = 2.0;
  double a = 2.0;
  double b = 4.0;
  double scale = 1.0;
  std::vector<double> epsilons;
  std::string grid;
  std::string snr_db;
  std::string format = "json";
  std::uint64_t seed = 1;
  int probes = 50;
  int mc_samples = 1000000;
  std::string out_path;
  kr::Tolerances tol;
};

kr::NominalPair make_pair(const Options& opt) {
  if (opt.family == "gaussian") return kr::gaussian_pair(opt.sigma);
  if (opt.family == "gen-gaussian")
    return kr::generalized_gaussian_pair(opt.alpha, opt.sigma);
  if (opt.family == "asym-laplace")
    return kr::asymmetric_laplace_pair(opt.a, opt.b);
  if (opt.family == "cauchy") return kr::cauchy_pair(opt.scale);
  throw kr::InvalidParameter("unknown family: " + opt.family);
}

double single_epsilon(const Options& opt) {
  if (opt.epsilons.size() != 1)
    throw kr::InvalidParameter(
        "this command takes exactly one --epsilon value");
  return opt.epsilons.front();
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_)
        throw kr::InvalidParameter("cannot open output file: " + path);
    }
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

void emit_json(std::ostream& os, const json& j) { os << j.dump(2) << "\n"; }

void emit_csv(std::ostream& os, const std::vector<std::string>& header,
              const std::vector<std::vector<std::string>>& rows) {
  for (std::size_t i = 0; i < header.size(); ++i)
    os << header[i] << (i + 1 < header.size() ? "," : "\n");
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      os << row[i] << (i + 1 < row.size() ? "," : "\n");
  }
}

void emit_table(Output& out, const Options& opt, const std::string& command,
                const std::vector<std::string>& columns,
                const std::vector<std::vector<double>>& rows) {
  if (opt.format == "csv") {
    std::vector<std::vector<std::string>> cells;
    cells.reserve(rows.size());
    for (const auto& row : rows) {
      std::vector<std::string> r;
      r.reserve(row.size());
      for (double v : row)
        r.push_back(std::isnan(v) ? std::string() : fmt(v));
      cells.push_back(std::move(r));
    }
    emit_csv(out.stream(), columns, cells);
  } else {
    json j;
    j["command"] = command;
    json jrows = json::array();
    for (const auto& row : rows) {
      json r;
      for (std::size_t i = 0; i < columns.size(); ++i) {
        if (std::isnan(row[i]))
          r[columns[i]] = nullptr;
        else
          r[columns[i]] = row[i];
      }
      jrows.push_back(std::move(r));
    }
    j["rows"] = std::move(jrows);
    emit_json(out.stream(), j);
  }
}

int cmd_solve(const Options& opt) {
  const kr::NominalPair pair = make_pair(opt);
  const double eps = single_epsilon(opt);
  const kr::SaddlePoint sp = kr::solve(pair, eps, opt.tol);
  const double pe = kr::worst_case_error(sp, opt.tol);
  const double d_mid = kr::kl_divergence(
      kr::geodesic_density(pair, 0.5, opt.tol), pair.f0(), opt.tol);

  Output out(opt.out_path);
  if (opt.format == "csv") {
    emit_csv(out.stream(),
             {"y_U", "ell_U", "Z", "epsilon", "worst_case_pe", "d_midway"},
             {{fmt(sp.y_u), fmt(sp.ell_u), fmt(sp.z), fmt(sp.epsilon), fmt(pe),
               fmt(d_mid)}});
  } else {
    json j;
    j["y_U"] = sp.y_u;
    j["ell_U"] = sp.ell_u;
    j["Z"] = sp.z;
    j["epsilon"] = sp.epsilon;
    j["worst_case_pe"] = pe;
    j["d_midway"] = d_mid;
    emit_json(out.stream(), j);
  }
  return kExitOk;
}

int cmd_divergence_curve(const Options& opt) {
  const kr::NominalPair pair = make_pair(opt);
  const GridSpec grid = parse_grid(opt.grid, "--grid");
  std::vector<std::vector<double>> rows;
  for (double y : grid.points())
    rows.push_back({y, kr::divergence_at(pair, y, opt.tol)});
  Output out(opt.out_path);
  emit_table(out, opt, "divergence-curve", {"y_U", "D"}, rows);
  return kExitOk;
}

int cmd_dump_densities(const Options& opt) {
  const kr::NominalPair pair = make_pair(opt);
  const double eps = single_epsilon(opt);
  const kr::SaddlePoint sp = kr::solve(pair, eps, opt.tol);
  const GridSpec grid = parse_grid(opt.grid, "--grid");
  std::vector<std::vector<double>> rows;
  for (double y : grid.points()) {
    const double nominal_lr = std::exp(pair.log_likelihood_ratio(y));
    rows.push_back({y, pair.f0().pdf(y), pair.f1().pdf(y), sp.lf0.pdf(y),
                    sp.lf1.pdf(y), sp.rule.evaluate(y), nominal_lr,
                    kr::lf_likelihood_ratio(sp, y)});
  }
  Output out(opt.out_path);
  emit_table(out, opt, "dump-densities",
             {"y", "f0", "f1", "g0L", "g1L", "delta_R", "L", "L_L"}, rows);
  return kExitOk;
}

int cmd_sweep_snr(const Options& opt) {
  if (opt.family != "gaussian")
    throw kr::InvalidParameter("sweep-snr supports only --family gaussian");
  if (opt.epsilons.empty())
    throw kr::InvalidParameter("sweep-snr needs at least one --epsilon");
  const GridSpec grid = parse_grid(opt.snr_db, "--snr-db");

  std::vector<std::string> columns = {"snr_db", "pe_ml"};
  for (double eps : opt.epsilons)
    columns.push_back("pe_worst_" + fmt(eps));

  std::vector<std::vector<double>> rows;
  for (double snr_db : grid.points()) {
    // SNR = 1/sigma^2, so sigma = 10^{-snr_db/20}
    const double sigma = std::pow(10.0, -snr_db / 20.0);
    const kr::NominalPair pair = kr::gaussian_pair(sigma);
    std::vector<double> row = {snr_db, kr::gaussian_tail_q(1.0 / sigma)};
    for (double eps : opt.epsilons) {
      try {
        row.push_back(
            kr::worst_case_error(kr::solve(pair, eps, opt.tol), opt.tol));
      } catch (const kr::InfeasibleTolerance&) {
        std::cerr << "warning: epsilon " << fmt(eps) << " infeasible at "
                  << fmt(snr_db) << " dB, skipping\n";
        row.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    rows.push_back(std::move(row));
  }
  Output out(opt.out_path);
  emit_table(out, opt, "sweep-snr", columns, rows);
  return kExitOk;
}

int cmd_verify(const Options& opt) {
  const kr::NominalPair pair = make_pair(opt);
  const double eps = single_epsilon(opt);
  const kr::SaddlePoint sp = kr::solve(pair, eps, opt.tol);
  const kr::SaddleCertificate cert =
      kr::check_saddle(sp, opt.probes, opt.seed, opt.tol);
  const double pe_quadrature = kr::worst_case_error(sp, opt.tol);
  const auto mc =
      kr::monte_carlo_error(sp.rule, sp.lf0, sp.lf1, opt.mc_samples,
                            kr::detail::task_seed(opt.seed, 404), opt.tol);
  const bool mc_agrees =
      std::abs(mc.pe_hat - pe_quadrature) <= 4.0 * mc.std_error;
  const bool passed = cert.passes() && mc_agrees;

  Output out(opt.out_path);
  if (opt.format == "csv") {
    emit_csv(
        out.stream(),
        {"family", "epsilon", "y_U", "pe_saddle", "kkt_gap0", "kkt_gap1",
         "max_rhs_violation", "min_lhs_gap", "n_probes", "n_rule_probes",
         "seed", "mc_pe_hat", "mc_std_error", "mc_samples", "mc_agrees_4se",
         "passed"},
        {{opt.family, fmt(eps), fmt(sp.y_u), fmt(cert.pe_saddle),
          fmt(cert.kkt_gap0), fmt(cert.kkt_gap1), fmt(cert.max_rhs_violation),
          fmt(cert.min_lhs_gap), std::to_string(cert.n_probes),
          std::to_string(cert.n_rule_probes), std::to_string(cert.seed),
          fmt(mc.pe_hat), fmt(mc.std_error), std::to_string(opt.mc_samples),
          mc_agrees ? "true" : "false", passed ? "true" : "false"}});
  } else {
    json j;
    j["command"] = "verify";
    j["family"] = opt.family;
    j["epsilon"] = eps;
    j["y_U"] = sp.y_u;
    j["pe_saddle"] = cert.pe_saddle;
    j["kkt_gap0"] = cert.kkt_gap0;
    j["kkt_gap1"] = cert.kkt_gap1;
    j["max_rhs_violation"] = cert.max_rhs_violation;
    j["min_lhs_gap"] = cert.min_lhs_gap;
    j["n_probes"] = cert.n_probes;
    j["n_rule_probes"] = cert.n_rule_probes;
    j["seed"] = cert.seed;
    j["monte_carlo"] = {{"pe_hat", mc.pe_hat},
                        {"std_error", mc.std_error},
                        {"n_samples", opt.mc_samples},
                        {"agrees_4se", mc_agrees}};
    j["passed"] = passed;
    emit_json(out.stream(), j);
  }
  return passed ? kExitOk : kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Minimax-robust binary hypothesis testing under relative-entropy "
      "(KL) uncertainty balls"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub, bool with_epsilon) {
    sub->add_option("--family", opt.family,
                    "gaussian | gen-gaussian | asym-laplace | cauchy")
        ->check(CLI::IsMember(
            {"gaussian", "gen-gaussian", "asym-laplace", "cauchy"}));
    sub->add_option("--sigma", opt.sigma, "noise std dev (gaussian families)");
    sub->add_option("--alpha", opt.alpha, "gen-gaussian exponent (> 1)");
    sub->add_option("--a", opt.a, "asym-laplace thin-tail rate");
    sub->add_option("--b", opt.b, "asym-laplace fat-tail rate (> a)");
    sub->add_option("--scale", opt.scale, "cauchy scale");
    if (with_epsilon)
      sub->add_option("--epsilon", opt.epsilons,
                      "relative-entropy tolerance (repeatable for sweeps)");
    sub->add_option("--format", opt.format, "json | csv")
        ->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--out", opt.out_path, "output path (default: stdout)");
    sub->add_option("--seed", opt.seed, "master seed");
    sub->add_option("--quad-rel", opt.tol.quad_rel_err, "quadrature rel err");
    sub->add_option("--quad-abs", opt.tol.quad_abs_err, "quadrature abs err");
    sub->add_option("--root-tol", opt.tol.root_abs_err, "root finder abs err");
    sub->add_option("--mass-cutoff", opt.tol.support_mass_cutoff,
                    "tail mass dropped by truncation");
  };

  CLI::App* solve = app.add_subcommand(
      "solve", "solve the saddle point for one (family, epsilon)");
  add_common(solve, true);

  CLI::App* curve = app.add_subcommand(
      "divergence-curve", "tabulate D(y_U) over a --grid of band edges");
  add_common(curve, false);
  curve->add_option("--grid", opt.grid, "y_U grid as lo:hi:step")->required();

  CLI::App* dump = app.add_subcommand(
      "dump-densities",
      "tabulate nominal/LF densities, rule and likelihood ratios on a --grid");
  add_common(dump, true);
  dump->add_option("--grid", opt.grid, "y grid as lo:hi:step")->required();

  CLI::App* sweep = app.add_subcommand(
      "sweep-snr", "worst-case vs nominal ML error over an SNR grid");
  add_common(sweep, true);
  sweep->add_option("--snr-db", opt.snr_db, "SNR grid in dB as lo:hi:step")
      ->required();

  CLI::App* verify = app.add_subcommand(
      "verify", "numerically certify the saddle inequalities");
  add_common(verify, true);
  verify->add_option("--probes", opt.probes, "density probes per hypothesis");
  verify->add_option("--mc-samples", opt.mc_samples,
                     "Monte Carlo sample count per hypothesis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (solve->parsed()) return cmd_solve(opt);
    if (curve->parsed()) return cmd_divergence_curve(opt);
    if (dump->parsed()) return cmd_dump_densities(opt);
    if (sweep->parsed()) return cmd_sweep_snr(opt);
    if (verify->parsed()) return cmd_verify(opt);
  } catch (const kr::InfeasibleTolerance& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const kr::UnvalidatedPair& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUnvalidated;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
