// halk: fit, predict, ci and simulate from the command line. Exit codes:
// 0 success, 2 malformed input, 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "halk/halk.h"

namespace {

struct Failure {
  int code;
};

void check(int rc, const std::string& context) {
  if (rc == HALK_OK) return;
  std::cerr << "halk " << context << ": " << halk_last_error() << "\n";
  throw Failure{rc};
}

struct FitOptionsDeleter {
  void operator()(halk_fit_options* p) const { halk_fit_options_free(p); }
};
struct CiOptionsDeleter {
  void operator()(halk_ci_options* p) const { halk_ci_options_free(p); }
};
struct ModelDeleter {
  void operator()(halk_model* p) const { halk_model_free(p); }
};
using ModelPtr = std::unique_ptr<halk_model, ModelDeleter>;

// Owns a string handed out by the library.
class LibString {
 public:
  ~LibString() { halk_string_free(p_); }
  char** out() { return &p_; }
  std::string str() const { return p_ ? p_ : ""; }

 private:
  char* p_ = nullptr;
};

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

ModelPtr load(const std::string& path) {
  halk_model* m = nullptr;
  check(halk_model_load(path.c_str(), &m), "load model");
  return ModelPtr(m);
}

void write_file(const std::string& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) {
    std::cerr << "halk: cannot write '" << path << "'\n";
    throw Failure{HALK_E_INPUT};
  }
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

struct FitArgs {
  std::string data, y = "y", binary, k = "1", restriction = "full", family = "gaussian", weights,
      estimator = "hal", select = "cv", j_max = "n", c_values, out, cv_out;
  int folds = 5;
  long seed = 1;
  double lepski_constant = 1.96;
  long chain_cap = 100000;
  bool unpenalize_parametric = false;
};

void run_fit(const FitArgs& a) {
  halk_fit_options* raw = nullptr;
  check(halk_fit_options_create(&raw), "fit");
  std::unique_ptr<halk_fit_options, FitOptionsDeleter> opt(raw);
  auto set = [&](const char* key, const std::string& value) {
    check(halk_fit_options_set(opt.get(), key, value.c_str()), std::string("option --") + key);
  };
  set("family", a.family);
  set("estimator", a.estimator);
  set("selector", a.select);
  set("k", a.k);
  set("restriction", a.restriction);
  set("j_max", a.j_max);
  if (!a.c_values.empty()) set("c_values", a.c_values);
  set("folds", std::to_string(a.folds));
  set("seed", std::to_string(a.seed));
  set("lepski_constant", exact(a.lepski_constant));
  set("chain_cap", std::to_string(a.chain_cap));
  set("unpenalize_parametric", a.unpenalize_parametric ? "true" : "false");
  set("binary", a.binary);
  set("weights", a.weights);

  halk_model* m = nullptr;
  LibString cv;
  check(halk_fit_csv(a.data.c_str(), a.y.c_str(), opt.get(), &m, cv.out()), "fit");
  ModelPtr model(m);
  check(halk_model_save(model.get(), a.out.c_str()), "fit");
  write_file(a.cv_out.empty() ? a.out + ".cv.json" : a.cv_out, cv.str());
  std::size_t covariates = 0, support = 0, dict = 0;
  check(halk_model_shape(model.get(), &covariates, &support, &dict), "fit");
  std::cerr << "halk fit: " << support << " of " << dict << " basis functions selected\n";
}

struct CiArgs {
  std::string model, train, grid, method = "orthonormal", band = "pointwise", scale = "linear",
      out;
  double level = 0.95;
  long seed = 20240601;
  long mc_samples = 100000;
};

void run_ci(const CiArgs& a) {
  ModelPtr model = load(a.model);
  halk_ci_options* raw = nullptr;
  check(halk_ci_options_create(&raw), "ci");
  std::unique_ptr<halk_ci_options, CiOptionsDeleter> opt(raw);
  auto set = [&](const char* key, const std::string& value) {
    check(halk_ci_options_set(opt.get(), key, value.c_str()), std::string("option --") + key);
  };
  set("level", exact(a.level));
  set("method", a.method);
  set("band", a.band);
  set("scale", a.scale);
  set("seed", std::to_string(a.seed));
  set("mc_samples", std::to_string(a.mc_samples));
  LibString info;
  check(halk_ci_csv(model.get(), a.train.c_str(), a.grid.c_str(), opt.get(), a.out.c_str(),
                    info.out()),
        "ci");
  std::cerr << info.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"k-th order spline highly adaptive lasso"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads (0: HALK_THREADS or all cores)");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit a model to a CSV file");
  fit->add_option("--data", fa.data, "Training CSV with header")->required();
  fit->add_option("--y", fa.y, "Response column")->capture_default_str();
  fit->add_option("--binary", fa.binary, "Comma list of binary covariate columns");
  fit->add_option("--k", fa.k, "Spline order(s), comma list")->capture_default_str();
  fit->add_option("--restriction", fa.restriction,
                  "full | edge_constant | max_interaction:<p> (comma list)")
      ->capture_default_str();
  fit->add_option("--family", fa.family, "gaussian | weighted_gaussian | binomial")
      ->capture_default_str();
  fit->add_option("--weights", fa.weights, "Observation weight column");
  fit->add_option("--estimator", fa.estimator, "hal | relax | sieve")->capture_default_str();
  fit->add_option("--select", fa.select, "cv | lepski | c-cv-hal")->capture_default_str();
  fit->add_option("--j-max", fa.j_max, "Knot cap(s) per chain, comma list; n for all")
      ->capture_default_str();
  fit->add_option("--c-values", fa.c_values, "Comma list of L1 bounds to cross-validate");
  fit->add_option("--folds", fa.folds, "Cross-validation folds")->capture_default_str();
  fit->add_option("--seed", fa.seed, "Fold seed")->capture_default_str();
  fit->add_option("--lepski-constant", fa.lepski_constant)->capture_default_str();
  fit->add_option("--chain-cap", fa.chain_cap)->capture_default_str();
  fit->add_flag("--unpenalize-parametric", fa.unpenalize_parametric,
                "Leave knot-free terms unpenalised");
  fit->add_option("--out", fa.out, "Model file")->required();
  fit->add_option("--cv-out", fa.cv_out, "Cross-validation report (default <out>.cv.json)");

  std::string pm, pd, po;
  auto* pred = app.add_subcommand("predict", "Predict from a saved model");
  pred->add_option("--model", pm)->required();
  pred->add_option("--data", pd)->required();
  pred->add_option("--out", po)->required();

  CiArgs ca;
  auto* ci = app.add_subcommand("ci", "Confidence intervals on a grid");
  ci->add_option("--model", ca.model)->required();
  ci->add_option("--data-train", ca.train, "CSV the model was fit on")->required();
  ci->add_option("--grid", ca.grid, "CSV of evaluation points")->required();
  ci->add_option("--level", ca.level)->capture_default_str();
  ci->add_option("--method", ca.method, "orthonormal | delta")->capture_default_str();
  ci->add_option("--band", ca.band, "pointwise | log-scaled | mvn-quantile")
      ->capture_default_str();
  ci->add_option("--scale", ca.scale, "linear | probability")->capture_default_str();
  ci->add_option("--seed", ca.seed, "Seed for mvn-quantile sampling")->capture_default_str();
  ci->add_option("--mc-samples", ca.mc_samples)->capture_default_str();
  ci->add_option("--out", ca.out)->required();

  std::string sc, so;
  auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo experiment");
  sim->add_option("--config", sc, "Experiment JSON")->required();
  sim->add_option("--out", so, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : HALK_E_INPUT;
  }

  try {
    check(halk_set_threads(threads), "--threads");
    if (*fit) {
      run_fit(fa);
    } else if (*pred) {
      ModelPtr model = load(pm);
      check(halk_predict_csv(model.get(), pd.c_str(), po.c_str()), "predict");
    } else if (*ci) {
      run_ci(ca);
    } else if (*sim) {
      LibString summary;
      check(halk_simulate(sc.c_str(), so.c_str(), summary.out()), "simulate");
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
