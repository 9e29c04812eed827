#include "ergolq/acceptance.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "ergolq/ergodic.hpp"
#include "ergolq/oracle.hpp"
#include "ergolq/riccati.hpp"
#include "ergolq/scenario.hpp"

namespace ergolq {

namespace {

using json = nlohmann::json;

constexpr int kSteps = 64;

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

json est_json(const Estimate& e) { return {{"value", e.value}, {"stderr", e.se}}; }

const std::map<std::string, std::string>& titles() {
  static const std::map<std::string, std::string> t = {
      {"A1", "moment decay of the fundamental solution"},
      {"A2", "linear matrix BSDE vs periodic Lyapunov ODE"},
      {"A3", "Riccati K0, constant scalar case"},
      {"A4", "Riccati K0, noisy scalar case"},
      {"A5", "optimal gain is a stabilizer"},
      {"A6", "long-run cost vs single-period cost"},
      {"A7", "value formula"},
      {"A8", "optimality scan"},
      {"A9", "contraction of the closed loop"},
      {"A10", "completion of square"},
  };
  return t;
}

// Riccati + eta + optimal feedback on one scenario.
struct Optimum {
  PeriodicCoefficientSet set;
  RiccatiSolution riccati;
  BsdeGridSolution eta;
  FeedbackLaw feedback;
};

}  // namespace

struct AcceptanceSuite::Cache {
  std::map<std::string, std::shared_ptr<Optimum>> optimum;  // auto mode
  std::map<std::string, RiccatiSolution> mc_riccati;        // forced Monte Carlo
};

AcceptanceSuite::AcceptanceSuite(AcceptanceConfig cfg)
    : cfg_(cfg), cache_(std::make_unique<Cache>()) {}
AcceptanceSuite::~AcceptanceSuite() = default;

std::vector<std::string> AcceptanceSuite::ids() {
  return {"A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9", "A10"};
}

namespace {

std::size_t scaled(double scale, std::size_t nominal) {
  return std::max<std::size_t>(nominal / 10,
                               static_cast<std::size_t>(std::llround(scale * nominal)));
}

// Seeds of the independent bundles used by one criterion.
std::uint64_t seed_for(std::uint64_t base, const std::string& tag) {
  std::uint64_t h = base * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull;
  for (char c : tag) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ull;
  return h;
}

PathBundle bundle_for(const AcceptanceConfig& cfg, const std::string& tag, std::size_t paths,
                      int steps = kSteps, int periods = 1) {
  return simulate_brownian(steps, periods, paths, seed_for(cfg.seed, tag));
}

CoefficientFn stabilizer_for(const PeriodicCoefficientSet& set, const PathBundle& check) {
  return find_stabilizer(set, check);
}

std::shared_ptr<Optimum> solve_optimum(const PeriodicCoefficientSet& set,
                                       const AcceptanceConfig& cfg) {
  auto opt = std::make_shared<Optimum>();
  opt->set = set;
  const PathBundle b = bundle_for(cfg, "solve/" + set.name, scaled(cfg.path_scale, 10000));
  const CoefficientFn init =
      stabilizer_for(set, bundle_for(cfg, "stab/" + set.name, 2000, kSteps, 8));
  opt->riccati = solve_stochastic_riccati(set, init, b);
  opt->eta = solve_eta(set, opt->riccati, b);
  opt->feedback = optimal_feedback(opt->riccati, opt->eta, set,
                                   bundle_for(cfg, "check/" + set.name, 4000, kSteps, 8));
  return opt;
}

}  // namespace

CriterionResult AcceptanceSuite::run(const std::string& id) {
  CriterionResult r;
  r.id = id;
  const auto t = titles().find(id);
  require(t != titles().end(), ErrorKind::kConfig, "unknown criterion " + id);
  r.title = t->second;
  const auto t0 = std::chrono::steady_clock::now();
  json d;
  try {
    auto optimum = [this](const std::string& name) {
      auto& slot = cache_->optimum[name];
      if (!slot) slot = solve_optimum(builtin_scenario(name), cfg_);
      return slot;
    };
    auto mc_riccati = [this](const std::string& name) -> const RiccatiSolution& {
      auto it = cache_->mc_riccati.find(name);
      if (it == cache_->mc_riccati.end()) {
        const auto set = builtin_scenario(name);
        RiccatiOptions ro;
        ro.bsde.mode = SolveMode::kMonteCarlo;
        const PathBundle b = bundle_for(cfg_, "mc/" + name, scaled(cfg_.path_scale, 10000));
        it = cache_->mc_riccati.emplace(name, solve_stochastic_riccati(set, *set.stabilizer, b, ro))
                 .first;
      }
      return it->second;
    };

    if (id == "A1") {
      const auto set = parse_scenario(
          "name = moment-decay\ntau = 1\nn = 1\nm = 1\nA = constant [-1]\nB = constant [0]\n"
          "C = constant [0.5]\nQ = constant [1]\nR = constant [1]\n");
      const PathBundle b = bundle_for(cfg_, "A1", 100000);
      const StateTrajectory traj = simulate_fundamental(set, nullptr, b);
      const auto rows = moment_table(traj);
      bool ok = true;
      json pts = json::array();
      std::string s;
      for (double tt : {0.5, 1.0}) {
        const auto& row = rows[traj.record_of(static_cast<std::size_t>(tt * kSteps))];
        const double exact = explicit_phi_moment_1d(-1.0, 0.5, tt);
        const double tol = std::max(0.02 * exact, 3.0 * row.stderr_);
        const double err = std::abs(row.second_moment - exact);
        ok = ok && err <= tol;
        pts.push_back({{"t", tt},
                       {"estimate", row.second_moment},
                       {"stderr", row.stderr_},
                       {"exact", exact},
                       {"tolerance", tol}});
        s += fmt("t=%.1f: %.5f vs %.5f (tol %.5f)  ", tt, row.second_moment, exact, tol);
      }
      d["points"] = pts;
      r.passed = ok;
      r.summary = s;
    } else if (id == "A2") {
      const auto set = builtin_scenario("planar-deterministic-periodic");
      const CoefficientFn I = CoefficientFn::constant(Mat::Identity(set.n, set.n));
      BsdeOptions o;
      o.mode = SolveMode::kMonteCarlo;
      const BsdeGridSolution sol =
          solve_linear_matrix_bsde(set.A, set.C, I, bundle_for(cfg_, "A2", 20000), o);
      const OdeSolution ode = periodic_lyapunov_ode(set.A, set.C, I, set.tau);
      double worst = 0.0;
      int worst_node = 0;
      for (int i = 0; i <= kSteps; ++i) {
        const Mat ref = ode.at(sol.value.node_time(i));
        const double rel = (sol.value.mean_value(i) - ref).norm() / ref.norm();
        if (rel > worst) {
          worst = rel;
          worst_node = i;
        }
      }
      r.passed = worst < 0.05;
      d = {{"max_relative_error", worst},
           {"worst_node", worst_node},
           {"paths", 20000},
           {"K0", sol.initial()(0, 0)},
           {"K0_oracle", ode.values.front()(0, 0)}};
      r.summary = fmt("max node-wise relative Frobenius error %.4f at node %d (limit 0.05)", worst,
                      worst_node);
    } else if (id == "A3" || id == "A4") {
      const std::string name = id == "A3" ? "scalar-constant" : "scalar-noisy";
      const double limit = id == "A3" ? 0.03 : 0.05;
      const auto set = builtin_scenario(name);
      const RiccatiSolution& sol = mc_riccati(name);
      const double exact = id == "A3" ? std::sqrt(2.0) - 1.0 : (std::sqrt(5.0) - 1.0) / 2.0;
      const double k0 = sol.K0()(0, 0);
      const double rel = std::abs(k0 - exact) / exact;
      double min_margin = std::numeric_limits<double>::infinity();
      for (std::size_t k = 1; k < sol.trace.size(); ++k)
        min_margin = std::min(min_margin, sol.trace[k].descent_margin);
      bool ok = rel < limit && sol.converged;
      if (id == "A3") ok = ok && sol.outer_iterations <= 10;
      r.passed = ok;
      d = {{"K0", k0},
           {"K0_stderr", sol.K0_se()(0, 0)},
           {"exact", exact},
           {"relative_error", rel},
           {"outer_iterations", sol.outer_iterations},
           {"min_descent_margin", sol.trace.size() > 1 ? json(min_margin) : json()}};
      r.summary = fmt("K0 = %.6f +- %.6f vs %.6f, rel err %.4f (limit %.2f), %d outer steps, "
                      "monotone descent checked",
                      k0, sol.K0_se()(0, 0), exact, rel, limit, sol.outer_iterations);
    } else if (id == "A5") {
      bool ok = true;
      std::string s;
      for (const std::string name : {"scalar-constant", "scalar-noisy"}) {
        const auto set = builtin_scenario(name);
        const RiccatiSolution& sol = mc_riccati(name);
        const StabilityReport rep =
            stabilizer_check(sol.Theta0, set, bundle_for(cfg_, "A5/" + name, 4000, kSteps, 8));
        ok = ok && rep.stable();
        d[name] = {{"lambda_hat", rep.lambda_hat},
                   {"ci95", {rep.lambda_lo(), rep.lambda_hi()}},
                   {"stable", rep.stable()}};
        s += fmt("%s: lambda_hat %.4f [%.4f, %.4f]  ", name.c_str(), rep.lambda_hat,
                 rep.lambda_lo(), rep.lambda_hi());
      }
      r.passed = ok;
      r.summary = s;
    } else if (id == "A6") {
      const auto opt = optimum("scalar-constant");
      ErgodicOptions eo;
      eo.single_period_paths = scaled(cfg_.path_scale, 50000);
      eo.longrun_paths = scaled(cfg_.path_scale, 10000);
      const PathBundle base = bundle_for(cfg_, "A6", eo.longrun_paths);
      const ErgodicReport rep = ergodic_report(opt->set, opt->feedback, base, nullptr, nullptr, eo);
      const CostEstimate fh10 = finite_horizon_cost(opt->set, opt->feedback, rep.longrun_start,
                                                    10 * opt->set.tau, base.fresh(3));
      const Estimate sp = rep.single_period.estimate, lr = rep.longrun.estimate;
      const double gap50 = std::abs(lr.value - sp.value), gap10 = std::abs(fh10.estimate.value - sp.value);
      const double lim = 3.0 * combined_se(lr.se, sp.se);
      r.passed = gap50 < lim && gap50 < gap10;
      d = {{"single_period", est_json(sp)},
           {"longrun_50", est_json(lr)},
           {"longrun_10", est_json(fh10.estimate)},
           {"gap_50", gap50},
           {"gap_10", gap10},
           {"limit_3se", lim},
           {"k_burn", rep.state.k_burn}};
      r.summary = fmt("single-period %.5f +- %.5f, J50 %.5f +- %.5f, |gap50| %.5f < 3SE %.5f, "
                      "|gap10| %.5f",
                      sp.value, sp.se, lr.value, lr.se, gap50, lim, gap10);
    } else if (id == "A7") {
      const auto opt = optimum("scalar-constant");
      const ScalarChain chain = stationary_scalar_chain(opt->set);
      const CostEstimate V = value_function(opt->riccati, opt->eta, opt->set,
                                            bundle_for(cfg_, "A7/value", 1000));
      // The Monte Carlo cost runs on a finer grid than the solve so that the
      // Euler bias of the simulated cost stays well below its standard error.
      const int fine = 4 * kSteps;
      const std::size_t P = scaled(cfg_.path_scale, 50000);
      const RandomPeriodicState st =
          burn_in_state(opt->set, opt->feedback, bundle_for(cfg_, "A7/burn", P, fine),
                        Vec::Zero(1));
      const CostEstimate mc =
          single_period_cost(opt->set, opt->feedback, st, bundle_for(cfg_, "A7/cost", P, fine));
      const double d1 = std::abs(V.estimate.value - chain.V);
      const double d2 = std::abs(V.estimate.value - mc.estimate.value);
      const double l1 = 3.0 * V.estimate.se;
      const double l2 = 3.0 * combined_se(V.estimate.se, mc.estimate.se);
      r.passed = d1 <= l1 && d2 <= l2;
      d = {{"V", est_json(V.estimate)},
           {"closed_form", chain.V},
           {"eta_closed_form", chain.eta},
           {"eta0", opt->eta.initial()(0, 0)},
           {"mc_cost", est_json(mc.estimate)},
           {"mc_steps_per_period", fine}};
      r.summary = fmt("V = %.7f +- %.1e vs closed form %.7f (|diff| %.1e <= %.1e); MC cost %.5f "
                      "+- %.5f (|diff| %.5f <= %.5f)",
                      V.estimate.value, V.estimate.se, chain.V, d1, l1, mc.estimate.value,
                      mc.estimate.se, d2, l2);
    } else if (id == "A8") {
      const auto opt = optimum("scalar-constant");
      const std::size_t P = scaled(cfg_.path_scale, 20000);
      const ScanResult scan = optimality_scan(
          opt->set, opt->riccati, opt->eta,
          gain_perturbations(Mat::Ones(1, 1), {-0.2, -0.1, 0.0, 0.1, 0.2}),
          bundle_for(cfg_, "A8/burn", P), bundle_for(cfg_, "A8/eval", P));
      bool above = true;
      json rows = json::array();
      for (const auto& row : scan.rows) {
        const bool ok = row.stable && row.cost.value >= scan.value.value -
                                                            3.0 * combined_se(row.cost.se, scan.value.se);
        above = above && ok;
        rows.push_back({{"epsilon", row.epsilon}, {"cost", est_json(row.cost)}, {"stable", row.stable}});
      }
      r.passed = scan.min_at_zero && scan.kappa.lo() > 0.0 && above;
      d = {{"rows", rows},
           {"kappa", est_json(scan.kappa)},
           {"value", est_json(scan.value)},
           {"min_at_zero", scan.min_at_zero}};
      const double eps_min =
          scan.argmin >= 0 ? scan.rows[static_cast<std::size_t>(scan.argmin)].epsilon : NAN;
      r.summary = fmt("argmin eps = %.1f, kappa = %.4f +- %.4f, all costs >= V - 3SE: %s", eps_min,
                      scan.kappa.value, scan.kappa.se, above ? "yes" : "no");
    } else if (id == "A9") {
      bool ok = true;
      std::string s;
      for (const auto& name : catalog_names()) {
        const CriterionResult c = contraction(builtin_scenario(name));
        ok = ok && c.passed;
        d[name] = json::parse(c.details_json);
        s += name + ": " + c.summary + "  ";
      }
      r.passed = ok;
      r.summary = s;
    } else if (id == "A10") {
      const auto opt = optimum("scalar-random-periodic");
      const std::size_t P = scaled(cfg_.path_scale, 10000);
      struct Pert {
        double dTheta, dv;
      };
      bool ok = true;
      std::string s;
      json rows = json::array();
      int k = 0;
      for (const Pert p : {Pert{0.2, 0.0}, Pert{-0.2, 0.0}, Pert{0.1, 0.2}}) {
        const CoefficientFn Th0 = opt->feedback.Theta, v0 = opt->feedback.v;
        FeedbackLaw fb;
        fb.id = fmt("perturbed-%d", k);
        fb.Theta = CoefficientFn::custom(
            Th0.kind(), 1, 1, 0.0,
            [Th0, p](double ph, const PathPrefix& pre, Eigen::Ref<Mat> o) {
              Th0.evaluate_into(ph, pre, o);
              o.array() += p.dTheta;
            },
            "Theta0+d");
        fb.v = CoefficientFn::custom(
            v0.kind(), 1, 1, 0.0,
            [v0, p](double ph, const PathPrefix& pre, Eigen::Ref<Mat> o) {
              v0.evaluate_into(ph, pre, o);
              o.array() += p.dv;
            },
            "v0+d");
        const RandomPeriodicState st = burn_in_state(
            opt->set, fb, bundle_for(cfg_, fmt("A10/burn%d", k), P), Vec::Zero(1));
        const CompletionOfSquare cs = completion_of_square_check(
            opt->set, fb, opt->riccati, opt->eta, st, bundle_for(cfg_, fmt("A10/eval%d", k), P));
        const bool pass = cs.consistent(3.0) && cs.min_quadratic_integrand >= 0.0;
        ok = ok && pass;
        rows.push_back({{"dTheta", p.dTheta},
                        {"dv", p.dv},
                        {"lhs", est_json(cs.lhs)},
                        {"value", est_json(cs.value)},
                        {"quadratic", est_json(cs.quadratic)},
                        {"difference", est_json(cs.difference)},
                        {"min_quadratic_integrand", cs.min_quadratic_integrand},
                        {"passed", pass}});
        s += fmt("(dTheta %+.1f, dv %+.1f): lhs-rhs %+.5f +- %.5f, min quad %.2e  ", p.dTheta,
                 p.dv, cs.difference.value, cs.difference.se, cs.min_quadratic_integrand);
        ++k;
      }
      r.passed = ok;
      d["feedbacks"] = rows;
      r.summary = s;
    }
  } catch (const std::exception& e) {
    r.passed = false;
    r.summary = std::string("error: ") + e.what();
    d["error"] = e.what();
  }
  r.details_json = d.dump();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

CriterionResult AcceptanceSuite::contraction(const PeriodicCoefficientSet& set) {
  CriterionResult r;
  r.id = "A9";
  r.title = titles().at("A9") + " [" + set.name + "]";
  const auto t0 = std::chrono::steady_clock::now();
  json d;
  try {
    const PathBundle check = bundle_for(cfg_, "A9/stab/" + set.name, 2000, kSteps, 8);
    const CoefficientFn Theta = stabilizer_for(set, check);
    const FeedbackLaw fb{Theta, CoefficientFn::zeros(set.m, 1), "stabilizer"};
    const Vec x1 = Vec::Zero(set.n);
    Vec x2 = x1;
    x2(0) = 1.0;
    const ContractionReport c = contraction_check(
        set, fb, x1, x2, bundle_for(cfg_, "A9/" + set.name, 2000, kSteps, 10));
    r.passed = c.contracting;
    d = {{"slope_per_period", c.slope_per_period},
         {"slope_stderr", c.slope_se_per_period},
         {"ci95", {c.slope_per_period - 1.96 * c.slope_se_per_period,
                   c.slope_per_period + 1.96 * c.slope_se_per_period}},
         {"stabilizer", Theta.label()}};
    r.summary = fmt("slope %.4f +- %.4f per period", c.slope_per_period, c.slope_se_per_period);
  } catch (const std::exception& e) {
    r.passed = false;
    r.summary = std::string("error: ") + e.what();
    d["error"] = e.what();
  }
  r.details_json = d.dump();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

CriterionResult AcceptanceSuite::agreement(const PeriodicCoefficientSet& set) {
  CriterionResult r;
  r.id = "agreement";
  r.title = "three-way cost agreement at the optimum [" + set.name + "]";
  const auto t0 = std::chrono::steady_clock::now();
  json d;
  try {
    auto& slot = cache_->optimum[set.name];
    if (!slot) slot = solve_optimum(set, cfg_);
    const Optimum& opt = *slot;
    ErgodicOptions eo;
    eo.single_period_paths = scaled(cfg_.path_scale, 50000);
    eo.longrun_paths = scaled(cfg_.path_scale, 10000);
    // Refined simulation grid, as in the other convergence self-checks: at
    // the default grid the Euler bias of the simulated costs is comparable to
    // their standard error.
    const int fine = set.deterministic() ? 4 * kSteps : 2 * kSteps;
    const ErgodicReport rep = ergodic_report(
        set, opt.feedback, bundle_for(cfg_, "agree/" + set.name, 10000, fine), &opt.riccati,
        &opt.eta, eo);
    r.passed = rep.disagreements.empty();
    d = json::parse(ergodic_report_json(rep));
    d["steps_per_period"] = fine;
    r.summary = fmt("J50 %.5f +- %.5f, single-period %.5f +- %.5f, V %.5f +- %.5f",
                    rep.longrun.estimate.value, rep.longrun.estimate.se,
                    rep.single_period.estimate.value, rep.single_period.estimate.se,
                    rep.value->estimate.value, rep.value->estimate.se);
  } catch (const std::exception& e) {
    r.passed = false;
    r.summary = std::string("error: ") + e.what();
    d["error"] = e.what();
  }
  r.details_json = d.dump();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string format_result_line(const CriterionResult& r) {
  return fmt("%-4s %s  %s: %s (%.1fs)", r.id.c_str(), r.passed ? "PASS" : "FAIL",
             r.title.c_str(), r.summary.c_str(), r.seconds);
}

std::string suite_json(const std::vector<CriterionResult>& results, const std::string& scenario,
                       std::uint64_t seed) {
  json j;
  j["schema"] = "ergolq.verify/1";
  j["scenario"] = scenario;
  j["seed"] = seed;
  bool all = true;
  json arr = json::array();
  for (const auto& r : results) {
    all = all && r.passed;
    arr.push_back({{"id", r.id},
                   {"title", r.title},
                   {"passed", r.passed},
                   {"summary", r.summary},
                   {"seconds", r.seconds},
                   {"details", json::parse(r.details_json)}});
  }
  j["passed"] = all;
  j["criteria"] = arr;
  return j.dump(2);
}

}  // namespace ergolq
