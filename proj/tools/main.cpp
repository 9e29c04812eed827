#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ergolq/acceptance.hpp"
#include "ergolq/ergodic.hpp"
#include "ergolq/oracle.hpp"
#include "ergolq/riccati.hpp"
#include "ergolq/scenario.hpp"

#ifndef ERGOLQ_VERSION
#define ERGOLQ_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ergolq;

namespace {

constexpr const char* kSummarySchema = "ergolq.summary/1";
constexpr const char* kManifestSchema = "ergolq.manifest/1";

// Flag values as given; unset flags fall back to the config file, then to defaults.
struct Flags {
  std::optional<std::string> scenario, config, out, feedback, mode, x0, gain, offset, eps,
      direction, criteria;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths, single_period_paths, export_paths;
  std::optional<int> steps, periods, record_stride;
  std::optional<double> tol;
};

struct RunConfig {
  std::string command;
  std::string scenario;
  std::string scenario_text;  // serialized set, enough to rebuild it without the catalog
  std::uint64_t seed = 7;
  std::size_t paths = 10000;
  int steps_per_period = 64;
  int periods = 1;
  double tol = 1e-6;
  std::string out;
  json options = json::object();

  json to_json() const {
    return {{"command", command},   {"scenario", scenario}, {"scenario_text", scenario_text},
            {"seed", seed},         {"paths", paths},       {"steps_per_period", steps_per_period},
            {"periods", periods},   {"tol", tol},           {"out", out},
            {"options", options}};
  }
};

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::kConfig, what); }

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    config_error("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) config_error("config file must hold a JSON object");
  // A manifest is itself a config.
  if (j.contains("config") && j["config"].is_object()) return j["config"];
  return j;
}

template <typename T>
T pick(const std::optional<T>& flag, const json& file, const char* key, T fallback) {
  if (flag) return *flag;
  if (file.contains(key)) {
    try {
      return file.at(key).get<T>();
    } catch (const json::exception&) {
      config_error(std::string("config key '") + key + "' has the wrong type");
    }
  }
  return fallback;
}

std::string default_out(const RunConfig& c) {
  fs::path root = ".";
  if (const char* env = std::getenv("ERGOLQ_OUT_ROOT"); env && *env) root = env;
  fs::path stem = c.scenario;
  return (root / "ergolq-out" /
          (c.command + "-" + stem.filename().replace_extension().string() + "-seed" +
           std::to_string(c.seed)))
      .string();
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> xs;
  std::string s = text;
  for (char& ch : s)
    if (ch == ',' || ch == '[' || ch == ']') ch = ' ';
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t used = 0;
      xs.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      config_error("not a number: '" + tok + "'");
    }
  }
  return xs;
}

Mat matrix_option(const std::string& text, Eigen::Index rows, Eigen::Index cols,
                  const char* what) {
  Mat m;
  try {
    m = parse_matrix(text.find('[') == std::string::npos ? "[" + text + "]" : text);
  } catch (const Error& e) {
    config_error(std::string(what) + ": " + e.what());
  }
  if (m.size() == 1 && rows * cols > 1) return Mat::Constant(rows, cols, m(0, 0));
  if (m.rows() * m.cols() == rows * cols && (m.rows() != rows || m.cols() != cols))
    m = Eigen::Map<Mat>(m.data(), rows, cols).eval();
  if (m.rows() != rows || m.cols() != cols)
    config_error(std::string(what) + " must be " + shape_str(rows, cols) + ", got " +
                 shape_str(m.rows(), m.cols()));
  return m;
}

RunConfig resolve(const std::string& command, const Flags& f, PeriodicCoefficientSet& set) {
  const json file = f.config ? read_config_file(*f.config) : json::object();
  if (file.contains("command") && file["command"].is_string() && file["command"] != command)
    config_error("config file was written for '" + file["command"].get<std::string>() +
                 "', not '" + command + "'");
  RunConfig c;
  c.command = command;
  c.seed = pick(f.seed, file, "seed", std::uint64_t{7});
  c.paths = pick(f.paths, file, "paths", std::size_t{10000});
  c.steps_per_period = pick(f.steps, file, "steps_per_period", 64);
  c.periods = pick(f.periods, file, "periods",
                   command == "ergodic-cost" ? 50 : command == "simulate" ? 10 : 1);
  c.tol = pick(f.tol, file, "tol", 1e-6);
  if (c.paths < 2) config_error("--paths must be at least 2");
  if (c.steps_per_period < 2) config_error("--steps-per-period must be at least 2");
  if (c.periods < 1) config_error("--periods must be at least 1");
  if (!(c.tol > 0.0)) config_error("--tol must be positive");

  if (f.scenario) {
    c.scenario = *f.scenario;
    set = resolve_scenario(c.scenario);
  } else if (file.contains("scenario_text") && file["scenario_text"].is_string() &&
             !file["scenario_text"].get<std::string>().empty()) {
    c.scenario = file.value("scenario", std::string{});
    set = parse_scenario(file["scenario_text"].get<std::string>());
  } else if (file.contains("scenario") && file["scenario"].is_string()) {
    c.scenario = file["scenario"].get<std::string>();
    if (!(command == "verify" && c.scenario == "all")) set = resolve_scenario(c.scenario);
  } else {
    config_error("no scenario given (--scenario or a config file)");
  }
  if (c.scenario == "all" && command != "verify") config_error("'all' is only valid for verify");
  if (c.scenario != "all") {
    set.validate_shapes();
    if (c.scenario.empty()) c.scenario = set.name;
    c.scenario_text = serialize_scenario(set);
  }
  c.out = f.out ? *f.out : file.value("out", std::string{});
  if (c.out.empty()) c.out = default_out(c);

  const json fo = file.value("options", json::object());
  auto opt_str = [&](const std::optional<std::string>& flag, const char* key, std::string dflt) {
    return pick(flag, fo, key, std::move(dflt));
  };
  json& o = c.options;
  if (command == "simulate") {
    o["feedback"] = opt_str(f.feedback, "feedback", "stabilizer");
    o["x0"] = opt_str(f.x0, "x0", "0");
    o["export_paths"] = pick(f.export_paths, fo, "export_paths", std::size_t{10});
    o["record_stride"] = pick(f.record_stride, fo, "record_stride", 1);
    if (o["record_stride"].get<int>() < 1) config_error("--record-stride must be at least 1");
  } else if (command == "solve-riccati") {
    o["mode"] = opt_str(f.mode, "mode", "auto");
  } else if (command == "ergodic-cost") {
    o["feedback"] = opt_str(f.feedback, "feedback", "optimal");
    o["gain"] = opt_str(f.gain, "gain", "");
    o["offset"] = opt_str(f.offset, "offset", "");
    o["single_period_paths"] = pick(f.single_period_paths, fo, "single_period_paths", c.paths);
  } else if (command == "scan") {
    o["eps"] = opt_str(f.eps, "eps", "-0.2,-0.1,0,0.1,0.2");
    o["direction"] = opt_str(f.direction, "direction", "1");
  } else if (command == "verify") {
    o["criteria"] = opt_str(f.criteria, "criteria", "");
  }

  // Early validation of option values so that nothing is written on bad input.
  if (o.contains("feedback")) {
    const std::string fb = o["feedback"];
    const bool ok = command == "simulate"
                        ? (fb == "zero" || fb == "stabilizer" || fb == "optimal")
                        : (fb == "stabilizer" || fb == "optimal" || fb == "custom");
    if (!ok) config_error("unknown feedback '" + fb + "'");
  }
  if (o.contains("mode")) {
    const std::string m = o["mode"];
    if (m != "auto" && m != "monte-carlo" && m != "deterministic")
      config_error("--mode must be auto, monte-carlo or deterministic");
  }
  if (command == "simulate") matrix_option(o["x0"], set.n, 1, "--x0");
  if (command == "ergodic-cost") {
    if (!o["gain"].get<std::string>().empty()) {
      matrix_option(o["gain"], set.m, set.n, "--gain");
      o["feedback"] = "custom";
    }
    if (!o["offset"].get<std::string>().empty()) matrix_option(o["offset"], set.m, 1, "--offset");
    if (o["feedback"] == "custom" && o["gain"].get<std::string>().empty())
      config_error("feedback 'custom' needs --gain");
  }
  if (command == "scan") {
    if (parse_list(o["eps"]).empty()) config_error("--eps is empty");
    matrix_option(o["direction"], set.m, set.n, "--direction");
  }
  if (command == "verify") {
    const auto ids = AcceptanceSuite::ids();
    std::istringstream is(o["criteria"].get<std::string>());
    std::string id;
    while (std::getline(is, id, ',')) {
      if (id.empty() || id == "agreement" || id == "contraction") continue;
      if (std::find(ids.begin(), ids.end(), id) == ids.end())
        config_error("unknown criterion '" + id + "'");
    }
  }
  return c;
}

struct Output {
  fs::path dir;
  json manifest;

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream os(dir / name);
    os << text;
    if (!os) throw Error(ErrorKind::kNumerical, "cannot write " + (dir / name).string());
    manifest["outputs"].push_back(name);
  }
  template <typename Fn>
  void write_with(const std::string& name, Fn&& fn) {
    std::ostringstream os;
    os.precision(17);
    fn(os);
    write_text(name, os.str());
  }
  void flush_manifest() { write_text_raw("manifest.json", manifest.dump(2) + "\n"); }

 private:
  void write_text_raw(const std::string& name, const std::string& text) {
    std::ofstream os(dir / name);
    os << text;
  }
};

Output open_output(const RunConfig& c) {
  Output out;
  out.dir = c.out;
  std::error_code ec;
  fs::create_directories(out.dir, ec);
  if (ec) config_error("cannot create output directory " + c.out + ": " + ec.message());
  out.manifest = {{"schema", kManifestSchema},
                  {"version", ERGOLQ_VERSION},
                  {"summary_schema", kSummarySchema},
                  {"seed", c.seed},
                  {"config", c.to_json()},
                  {"outputs", json::array()}};
  out.flush_manifest();
  return out;
}

json summary_header(const RunConfig& c) {
  return {{"schema", kSummarySchema},
          {"version", ERGOLQ_VERSION},
          {"command", c.command},
          {"scenario", c.scenario},
          {"seed", c.seed}};
}

PathBundle solve_bundle(const RunConfig& c, const PeriodicCoefficientSet& set, std::uint64_t tag,
                        int periods = 1) {
  return simulate_brownian(c.steps_per_period, periods, c.paths, derive_seed(c.seed, tag),
                           set.tau);
}

CoefficientFn stabilizer(const RunConfig& c, const PeriodicCoefficientSet& set) {
  return find_stabilizer(set, simulate_brownian(c.steps_per_period, 8, 2000,
                                                derive_seed(c.seed, 0x57ab), set.tau));
}

struct Solved {
  RiccatiSolution riccati;
  BsdeGridSolution eta;
  FeedbackLaw feedback;
};

Solved solve_optimum(const RunConfig& c, const PeriodicCoefficientSet& set,
                     SolveMode mode = SolveMode::kAuto) {
  Solved s;
  RiccatiOptions ro;
  ro.tol = c.tol;
  ro.bsde.mode = mode;
  const PathBundle b = solve_bundle(c, set, 0x50);
  s.riccati = solve_stochastic_riccati(set, stabilizer(c, set), b, ro);
  BsdeOptions eo;
  eo.mode = mode;
  s.eta = solve_eta(set, s.riccati, b, eo);
  s.feedback = optimal_feedback(s.riccati, s.eta, set);
  return s;
}

int cmd_simulate(const RunConfig& c, const PeriodicCoefficientSet& set) {
  const json& o = c.options;
  const std::string kind = o["feedback"];
  FeedbackLaw fb = FeedbackLaw::zero(set.m, set.n);
  if (kind == "stabilizer") {
    fb.Theta = stabilizer(c, set);
    fb.id = "stabilizer";
  } else if (kind == "optimal") {
    fb = solve_optimum(c, set).feedback;
  }
  const Mat x0 = matrix_option(o["x0"], set.n, 1, "--x0");
  SimulationOptions so;
  so.record_stride = o["record_stride"];
  const PathBundle b = solve_bundle(c, set, 0x51, c.periods);
  Output out = open_output(c);
  const StateTrajectory traj = simulate_closed_loop(set, fb, x0, b, so);
  const StateTrajectory phi = simulate_fundamental(set, &fb, b, so);
  const StabilityReport st = estimate_second_moment_decay(phi);
  out.write_with("trajectories.csv",
                 [&](std::ostream& os) { write_trajectory_csv(os, traj, o["export_paths"]); });
  out.write_with("moments.csv", [&](std::ostream& os) { write_moments_csv(os, traj); });
  out.write_with("fundamental_moments.csv", [&](std::ostream& os) { write_moments_csv(os, phi); });
  json s = summary_header(c);
  s["feedback"] = fb.id;
  s["stability"] = {{"beta_hat", st.beta_hat},
                    {"lambda_hat", st.lambda_hat},
                    {"lambda_stderr", st.lambda_se},
                    {"lambda_ci95", {st.lambda_lo(), st.lambda_hi()}},
                    {"stable", st.stable()},
                    {"r2", st.r2},
                    {"warnings", st.warnings}};
  s["overflow_count"] = traj.overflow_count;
  const auto rows = moment_table(traj);
  s["final_moments"] = {{"t", rows.back().t},
                        {"mean", rows.back().mean},
                        {"second_moment", rows.back().second_moment},
                        {"stderr", rows.back().stderr_}};
  s["ok"] = true;
  out.write_text("summary.json", s.dump(2) + "\n");
  out.flush_manifest();
  std::cout << "lambda_hat " << st.lambda_hat << " +- " << st.lambda_se
            << (st.stable() ? " (stable)" : " (not stable)") << "\n"
            << "outputs in " << out.dir.string() << "\n";
  return 0;
}

int cmd_solve_riccati(const RunConfig& c, const PeriodicCoefficientSet& set) {
  const std::string m = c.options["mode"];
  const SolveMode mode = m == "monte-carlo"     ? SolveMode::kMonteCarlo
                         : m == "deterministic" ? SolveMode::kDeterministic
                                                : SolveMode::kAuto;
  Output out = open_output(c);
  const Solved s = solve_optimum(c, set, mode);
  const RiccatiResidual res = riccati_residual(s.riccati, set, solve_bundle(c, set, 0x52));
  json s_json = summary_header(c);
  const json r = json::parse(riccati_json(s.riccati, &res));
  s_json["K0"] = r.value("K0", json());
  s_json["riccati"] = r;
  const Mat eta0 = s.eta.initial(), eta0_se = s.eta.fixed_point_se;
  s_json["eta0"] = {{"value", std::vector<double>(eta0.data(), eta0.data() + eta0.size())},
                    {"stderr", std::vector<double>(eta0_se.data(), eta0_se.data() + eta0_se.size())}};
  s_json["ok"] = s.riccati.converged;
  out.write_with("K.csv", [&](std::ostream& os) { write_solution_csv(os, s.riccati.KL); });
  out.write_with("eta.csv", [&](std::ostream& os) { write_solution_csv(os, s.eta); });
  out.write_with("gain.csv", [&](std::ostream& os) {
    write_gain_csv(os, s.riccati.Theta0, c.steps_per_period, set.tau);
  });
  out.write_text("summary.json", s_json.dump(2) + "\n");
  out.flush_manifest();
  std::cout << "K0 = " << format_matrix(s.riccati.K0()) << " after "
            << s.riccati.outer_iterations << " outer iterations\n"
            << "residual " << res.normalized << " (floor " << res.floor << ")\n"
            << "outputs in " << out.dir.string() << "\n";
  return s.riccati.converged ? 0 : 1;
}

int cmd_ergodic_cost(const RunConfig& c, const PeriodicCoefficientSet& set) {
  const json& o = c.options;
  const std::string kind = o["feedback"];
  Output out = open_output(c);
  std::optional<Solved> solved;
  FeedbackLaw fb;
  if (kind == "optimal") {
    solved = solve_optimum(c, set);
    fb = solved->feedback;
  } else if (kind == "stabilizer") {
    fb = {stabilizer(c, set), CoefficientFn::zeros(set.m, 1), "stabilizer"};
  } else {
    const Mat off = o["offset"].get<std::string>().empty()
                        ? Mat::Zero(set.m, 1)
                        : matrix_option(o["offset"], set.m, 1, "--offset");
    fb = {CoefficientFn::constant(matrix_option(o["gain"], set.m, set.n, "--gain")),
          CoefficientFn::constant(off), "custom"};
  }
  ErgodicOptions eo;
  eo.longrun_periods = c.periods;
  eo.single_period_paths = o["single_period_paths"];
  eo.longrun_paths = c.paths;
  const ErgodicReport rep =
      ergodic_report(set, fb, solve_bundle(c, set, 0x53), solved ? &solved->riccati : nullptr,
                     solved ? &solved->eta : nullptr, eo);
  json s = summary_header(c);
  s["report"] = json::parse(ergodic_report_json(rep));
  s["ok"] = rep.disagreements.empty();
  out.write_with("estimates.csv", [&](std::ostream& os) {
    os << "estimator,value,stderr\n";
    os << "longrun," << rep.longrun.estimate.value << "," << rep.longrun.estimate.se << "\n";
    os << "single_period," << rep.single_period.estimate.value << ","
       << rep.single_period.estimate.se << "\n";
    if (rep.value)
      os << "value," << rep.value->estimate.value << "," << rep.value->estimate.se << "\n";
  });
  out.write_text("summary.json", s.dump(2) + "\n");
  out.flush_manifest();
  std::cout << "long-run (" << c.periods << " periods) " << rep.longrun.estimate.value << " +- "
            << rep.longrun.estimate.se << "\nsingle-period " << rep.single_period.estimate.value
            << " +- " << rep.single_period.estimate.se << "\n";
  if (rep.value)
    std::cout << "value " << rep.value->estimate.value << " +- " << rep.value->estimate.se
              << "\n";
  for (const auto& d : rep.disagreements) std::cout << "disagreement: " << d << "\n";
  std::cout << "outputs in " << out.dir.string() << "\n";
  return 0;
}

int cmd_scan(const RunConfig& c, const PeriodicCoefficientSet& set) {
  const json& o = c.options;
  const std::vector<double> eps = parse_list(o["eps"]);
  const Mat dir = matrix_option(o["direction"], set.m, set.n, "--direction");
  Output out = open_output(c);
  const Solved s = solve_optimum(c, set);
  const ScanResult scan =
      optimality_scan(set, s.riccati, s.eta, gain_perturbations(dir, eps),
                      solve_bundle(c, set, 0x54), solve_bundle(c, set, 0x55));
  out.write_with("scan.csv", [&](std::ostream& os) { write_scan_csv(os, scan); });
  json rows = json::array();
  for (const auto& r : scan.rows)
    rows.push_back({{"epsilon", r.epsilon},
                    {"cost", r.cost.value},
                    {"stderr", r.cost.se},
                    {"stable", r.stable},
                    {"note", r.note}});
  json sj = summary_header(c);
  sj["rows"] = rows;
  sj["argmin_epsilon"] =
      scan.argmin >= 0 ? json(scan.rows[static_cast<std::size_t>(scan.argmin)].epsilon) : json();
  sj["min_at_zero"] = scan.min_at_zero;
  sj["kappa"] = {{"value", scan.kappa.value}, {"stderr", scan.kappa.se}};
  sj["value"] = {{"value", scan.value.value}, {"stderr", scan.value.se}};
  sj["ok"] = true;
  out.write_text("summary.json", sj.dump(2) + "\n");
  out.flush_manifest();
  for (const auto& r : scan.rows)
    std::cout << "eps " << r.epsilon << ": " << r.cost.value << " +- " << r.cost.se
              << (r.stable ? "" : " (not stabilizing)") << "\n";
  std::cout << "kappa " << scan.kappa.value << " +- " << scan.kappa.se << "\noutputs in "
            << out.dir.string() << "\n";
  return 0;
}

int cmd_verify(const RunConfig& c) {
  AcceptanceConfig ac;
  ac.seed = c.seed;
  ac.path_scale = static_cast<double>(c.paths) / 10000.0;
  std::vector<std::string> ids;
  {
    std::istringstream is(c.options["criteria"].get<std::string>());
    std::string id;
    while (std::getline(is, id, ','))
      if (!id.empty()) ids.push_back(id);
  }
  const bool explicit_ids = !ids.empty();
  std::vector<PeriodicCoefficientSet> sets;
  if (c.scenario == "all") {
    for (const auto& n : catalog_names()) sets.push_back(builtin_scenario(n));
  } else {
    sets.push_back(parse_scenario(c.scenario_text));
  }
  if (!explicit_ids) {
    ids = {"A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8"};
    bool random = false;
    for (const auto& s : sets) random = random || !s.deterministic();
    if (random) ids.push_back("A10");
  }
  Output out = open_output(c);
  AcceptanceSuite suite(ac);
  std::vector<CriterionResult> results;
  auto report = [&](CriterionResult r) {
    std::cout << format_result_line(r) << std::endl;
    results.push_back(std::move(r));
  };
  for (const auto& id : ids) {
    if (id == "agreement" || id == "contraction") continue;
    if (id == "A9") {
      for (const auto& s : sets) report(suite.contraction(s));
    } else {
      report(suite.run(id));
    }
  }
  const auto wants = [&](const char* id) {
    return !explicit_ids || std::find(ids.begin(), ids.end(), id) != ids.end();
  };
  for (const auto& s : sets) {
    if (!explicit_ids || wants("contraction")) report(suite.contraction(s));
    if (wants("agreement")) report(suite.agreement(s));
  }
  bool all = true;
  for (const auto& r : results) all = all && r.passed;
  json sj = summary_header(c);
  sj["suite"] = json::parse(suite_json(results, c.scenario, c.seed));
  sj["ok"] = all;
  out.write_with("criteria.csv", [&](std::ostream& os) {
    os << "id,title,passed,seconds\n";
    for (const auto& r : results)
      os << r.id << ",\"" << r.title << "\"," << (r.passed ? 1 : 0) << "," << r.seconds << "\n";
  });
  out.write_text("summary.json", sj.dump(2) + "\n");
  out.flush_manifest();
  std::cout << (all ? "all criteria passed" : "verification FAILED") << "\noutputs in "
            << out.dir.string() << "\n";
  return all ? 0 : 1;
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--scenario", f.scenario, "catalog name or scenario file");
  sub->add_option("--config", f.config, "JSON run config or manifest; flags override it");
  sub->add_option("--seed", f.seed, "RNG seed");
  sub->add_option("--paths", f.paths, "Monte Carlo paths");
  sub->add_option("--steps-per-period", f.steps, "time steps per period");
  sub->add_option("--periods", f.periods, "periods to simulate");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--tol", f.tol, "outer Riccati tolerance");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ergodic LQ control with random periodic coefficients"};
  app.set_version_flag("--version", ERGOLQ_VERSION);
  app.require_subcommand(1);
  Flags f;

  auto* sim = app.add_subcommand("simulate", "closed-loop trajectories and stability report");
  add_common(sim, f);
  sim->add_option("--feedback", f.feedback, "zero, stabilizer or optimal");
  sim->add_option("--x0", f.x0, "initial state, e.g. [1; 0]");
  sim->add_option("--export-paths", f.export_paths, "paths written to trajectories.csv");
  sim->add_option("--record-stride", f.record_stride, "record every k-th node");

  auto* ric = app.add_subcommand("solve-riccati", "Kleinman solve of the stochastic Riccati BSDE");
  add_common(ric, f);
  ric->add_option("--mode", f.mode, "auto, monte-carlo or deterministic");

  auto* erg = app.add_subcommand("ergodic-cost", "long-run, single-period and value estimates");
  add_common(erg, f);
  erg->add_option("--feedback", f.feedback, "optimal, stabilizer or custom");
  erg->add_option("--gain", f.gain, "constant gain Theta (m x n)");
  erg->add_option("--offset", f.offset, "constant offset v (m x 1)");
  erg->add_option("--single-period-paths", f.single_period_paths, "paths of the single-period estimate");

  auto* ver = app.add_subcommand("verify", "acceptance criteria; exit 0 iff all pass");
  add_common(ver, f);
  ver->add_option("--criteria", f.criteria, "comma list, e.g. A1,A3,A9,agreement");

  auto* scn = app.add_subcommand("scan", "single-period costs of perturbed optimal gains");
  add_common(scn, f);
  scn->add_option("--eps", f.eps, "perturbation sizes, e.g. -0.2,-0.1,0,0.1,0.2");
  scn->add_option("--direction", f.direction, "gain direction dTheta (m x n)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    PeriodicCoefficientSet set;
    const RunConfig c = resolve(command, f, set);
    if (command == "simulate") return cmd_simulate(c, set);
    if (command == "solve-riccati") return cmd_solve_riccati(c, set);
    if (command == "ergodic-cost") return cmd_ergodic_cost(c, set);
    if (command == "scan") return cmd_scan(c, set);
    return cmd_verify(c);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::kConfig ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
