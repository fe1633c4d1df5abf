// ehr: command-line front end for enveloped Huber regression.
//
// Exit codes: 0 success, 1 input error, 2 numerical failure.

#include "ehr/reports.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#ifndef EHR_DATA_DIR
#define EHR_DATA_DIR "data"
#endif

namespace {

using namespace ehr;

struct Common {
  std::string input;
  std::string response = "Murder";
  std::string estimator = "ehr";
  std::optional<long> u;
  long u_max = 6;
  int folds = 5;
  int bootstrap = 200;
  std::uint64_t seed = 1;
  bool standardize = false;
  std::string out;
  std::string csv;
  std::string scenario;
  std::string reference = "hr";
  int threads = 1;
};

/// "@statex77" names the bundled copy of the state.x77 data.
std::string resolve_input(const std::string& path) {
  if (path == "@statex77") return std::string(EHR_DATA_DIR) + "/statex77.csv";
  return path;
}

void emit(const Json& report, const std::string& out) {
  const std::string text = report.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw InputError("cannot write output file '" + out + "'");
  f << text;
}

template <class F>
void write_file(const std::string& path, F&& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write output file '" + path + "'");
  body(f);
}

Json data_config(const Common& c) {
  return {{"input", c.input}, {"response", c.response}, {"standardize", c.standardize}};
}

CvReport run_cv(const Dataset& d, Estimator est, const Common& c) {
  CvOptions co;
  co.folds = c.folds;
  co.seed = c.seed;
  co.u_max = c.u_max;
  co.threads = c.threads;
  return cv_select_u(d, est, co);
}

int cmd_fit(const Common& c) {
  const Ingested in = ingest_csv(resolve_input(c.input), c.response, c.standardize);
  const Estimator est = parse_estimator(c.estimator);
  Json config = data_config(c);
  config["estimator"] = c.estimator;
  Json result;
  Index u = 0;
  if (is_envelope(est)) {
    if (c.u) {
      u = *c.u;
      config["u"] = u;
    } else {
      config["cv_folds"] = c.folds;
      config["u_max"] = c.u_max;
      const CvReport cv = run_cv(in.data, est, c);
      u = cv.u_hat;
      result["u_selection"] = cv_json(cv);
    }
  }
  const EstimatorFit fit = fit_estimator(est, in.data, u);
  result["fit"] = fit_json(fit, estimator_inference(fit, in.data), &in);
  result["estimator"] = c.estimator;
  result["u"] = u;
  result["n"] = in.data.n();
  result["p"] = in.data.p();
  emit(report_envelope("fit", config, c.seed, result), c.out);
  return 0;
}

int cmd_cv(const Common& c) {
  const Ingested in = ingest_csv(resolve_input(c.input), c.response, c.standardize);
  const Estimator est = parse_estimator(c.estimator);
  if (!is_envelope(est)) throw InputError("cv: estimator must be ehr or env");
  Json config = data_config(c);
  config["estimator"] = c.estimator;
  config["cv_folds"] = c.folds;
  config["u_max"] = c.u_max;
  emit(report_envelope("cv", config, c.seed, cv_json(run_cv(in.data, est, c))), c.out);
  return 0;
}

int cmd_bootstrap(const Common& c) {
  const Ingested in = ingest_csv(resolve_input(c.input), c.response, c.standardize);
  const Estimator est = parse_estimator(c.estimator);
  const Estimator ref = parse_estimator(c.reference);
  Json config = data_config(c);
  config["estimator"] = c.estimator;
  config["reference"] = c.reference;
  config["B"] = c.bootstrap;
  Json result;
  // u for envelope estimators: given, or the full-data CV choice
  auto choose_u = [&](Estimator e, const char* key) -> Index {
    if (!is_envelope(e)) return 0;
    if (c.u) return *c.u;
    const CvReport cv = run_cv(in.data, e, c);
    result[key] = cv_json(cv);
    return cv.u_hat;
  };
  if (c.u) config["u"] = *c.u;
  else config["cv_folds"] = c.folds;
  const Index u_est = choose_u(est, "u_selection");
  const Index u_ref = choose_u(ref, "reference_u_selection");
  BootstrapOptions bo;
  bo.B = c.bootstrap;
  bo.seed = c.seed;
  bo.threads = c.threads;
  const BootstrapReport br = bootstrap_se(in.data, est, u_est, bo);
  const BootstrapReport rr = bootstrap_se(in.data, ref, u_ref, bo);
  const Vector ratio = sd_ratio(rr, br);
  result["bootstrap"] = bootstrap_json(br);
  result["reference"] = bootstrap_json(rr);
  result["sd_ratio"] = {{"values", num_vector(ratio)},
                        {"min", num(ratio.minCoeff())},
                        {"max", num(ratio.maxCoeff())},
                        {"mean", num(ratio.mean())},
                        {"definition", "sd(reference) / sd(estimator)"}};
  result["predictors"] = in.predictors;
  emit(report_envelope("bootstrap", config, c.seed, result), c.out);
  return 0;
}

int cmd_simulate(const Common& c, const CLI::App& sub) {
  if (c.scenario.empty()) throw InputError("simulate: --scenario is required");
  SimScenario sc = load_scenario(c.scenario);
  if (sub.count("--seed") > 0) sc.seed = c.seed;
  const MseTable t = run_scenario(sc, c.threads);
  Json table = mse_json(t);
  Json config = table["scenario"];
  config["estimators"] = Json::array();
  for (Estimator e : sc.estimators) config["estimators"].push_back(to_string(e));
  emit(report_envelope("simulate", config, sc.seed, table), c.out);
  if (!c.csv.empty()) write_file(c.csv, [&](std::ostream& os) { write_mse_csv(os, t); });
  return 0;
}

int cmd_huber_factor(const Common& c) {
  const auto rows = huber_factor_table();
  Json config = {{"k_rule", "1.345 * MAD / 0.6745 at the population MAD"}};
  emit(report_envelope("huber-factor", config, c.seed, huber_table_json(rows)), c.out);
  if (!c.csv.empty()) write_file(c.csv, [&](std::ostream& os) { write_huber_csv(os, rows); });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Enveloped Huber regression: fitting, dimension selection, bootstrap and simulation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ehr::kVersion));
  Common c;

  auto add_data = [&](CLI::App* s) {
    s->add_option("--input", c.input, "CSV file with a header row (@statex77 for the bundled data)")->required();
    s->add_option("--response", c.response, "response column (name or 0-based index)");
    s->add_flag("--standardize", c.standardize, "scale predictors to unit sample SD");
  };
  auto add_common = [&](CLI::App* s) {
    s->add_option("--seed", c.seed, "random seed");
    s->add_option("--out", c.out, "output JSON path (default stdout)");
    s->add_option("--threads", c.threads, "worker threads; results do not depend on this")->check(CLI::PositiveNumber);
  };
  const auto estimators = CLI::IsMember({"ehr", "env", "hr", "ls"});

  auto* fit = app.add_subcommand("fit", "fit one estimator");
  add_data(fit);
  add_common(fit);
  fit->add_option("--estimator", c.estimator, "ehr, env, hr or ls")->check(estimators);
  fit->add_option("--u", c.u, "envelope dimension (default: chosen by CV)");
  fit->add_option("--cv-folds", c.folds, "folds for CV");
  fit->add_option("--u-max", c.u_max, "largest u searched by CV");

  auto* cv = app.add_subcommand("cv", "select the envelope dimension by K-fold CV");
  add_data(cv);
  add_common(cv);
  cv->add_option("--estimator", c.estimator, "ehr or env")->check(CLI::IsMember({"ehr", "env"}));
  cv->add_option("--cv-folds", c.folds, "folds");
  cv->add_option("--u-max", c.u_max, "largest u searched");

  auto* boot = app.add_subcommand("bootstrap", "pairs-bootstrap standard deviations and SD ratios");
  add_data(boot);
  add_common(boot);
  boot->add_option("--estimator", c.estimator, "estimator")->check(estimators);
  boot->add_option("--reference", c.reference, "reference estimator for SD ratios")->check(estimators);
  boot->add_option("--bootstrap", c.bootstrap, "number of resamples B")->check(CLI::Range(2, 1000000));
  boot->add_option("--u", c.u, "envelope dimension (default: chosen by CV)");
  boot->add_option("--cv-folds", c.folds, "folds for CV");
  boot->add_option("--u-max", c.u_max, "largest u searched by CV");

  auto* sim = app.add_subcommand("simulate", "run a Monte Carlo scenario file");
  add_common(sim);
  sim->add_option("--scenario", c.scenario, "scenario file (key = value lines)")->required();
  sim->add_option("--csv", c.csv, "also write the summary table as CSV");

  auto* hf = app.add_subcommand("huber-factor", "Huber factor and error variance for the six error laws");
  add_common(hf);
  hf->add_option("--csv", c.csv, "also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*fit) return cmd_fit(c);
    if (*cv) return cmd_cv(c);
    if (*boot) return cmd_bootstrap(c);
    if (*sim) return cmd_simulate(c, *sim);
    if (*hf) return cmd_huber_factor(c);
  } catch (const ehr::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ehr::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
