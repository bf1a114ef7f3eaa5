#include "halk/halk.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/estimate.hpp"
#include "core/io.hpp"
#include "core/parallel.hpp"
#include "core/sim.hpp"

struct halk_model {
  halk::FittedModel model;
};

struct halk_fit_options {
  halk::FitOptions fit;
  std::vector<std::string> binary;
  std::string weights;
};

struct halk_ci_options {
  halk::InferenceRequest req;
};

namespace {

thread_local std::string g_last_error;

template <class F>
int guarded(F&& f) {
  try {
    f();
    return HALK_OK;
  } catch (const halk::InputError& e) {
    g_last_error = e.what();
    return HALK_E_INPUT;
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("malformed JSON: ") + e.what();
    return HALK_E_INPUT;
  } catch (const halk::NumericError& e) {
    g_last_error = e.what();
    return HALK_E_NUMERIC;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return HALK_E_NUMERIC;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return HALK_E_NUMERIC;
  } catch (...) {
    g_last_error = "unknown error";
    return HALK_E_NUMERIC;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw halk::InputError(what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw halk::InputError("empty entry in list '" + s + "'");
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw halk::InputError("empty list");
  return out;
}

long parse_int(const std::string& key, const std::string& v) {
  const double x = halk::parse_double(v, key);
  if (x != static_cast<double>(static_cast<long>(x))) throw halk::InputError(key + " must be an integer");
  return static_cast<long>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw halk::InputError(key + " must be true or false");
}

std::vector<std::string> model_columns(const halk::FittedModel& m) {
  std::vector<std::string> names;
  for (const auto& c : m.rescale.columns) names.push_back(c.name);
  return names;
}

std::vector<bool> model_binary(const halk::FittedModel& m) {
  std::vector<bool> b;
  for (const auto& c : m.rescale.columns) b.push_back(c.binary);
  return b;
}

Eigen::MatrixXd row_major(const double* X, std::size_t n, std::size_t d) {
  Eigen::MatrixXd M(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = X[i * d + c];
  return M;
}

void check_finite(const Eigen::MatrixXd& M, const char* what) {
  if (!M.allFinite()) throw halk::InputError(std::string(what) + " contains non-finite values");
}

halk::TrainingSet training_from_csv(const halk::CsvTable& t, const halk::FittedModel& m) {
  const auto& data = m.tuning.contains("data") ? m.tuning.at("data") : nlohmann::json::object();
  const std::string ycol = data.value("y", std::string("y"));
  halk::TrainingSet ts;
  ts.names = model_columns(m);
  ts.binary = model_binary(m);
  ts.X = t.numeric(ts.names);
  ts.y = t.numeric(ycol);
  if (data.contains("weights") && data.at("weights").is_string())
    ts.w = t.numeric(data.at("weights").get<std::string>());
  return ts;
}

nlohmann::json ci_info(const halk::InferenceResult& r) {
  return {{"d_eff", r.d_eff},
          {"multiplier", r.multiplier},
          {"level", r.level},
          {"method", halk::to_string(r.method)},
          {"band", halk::to_string(r.band)},
          {"probability_scale", r.probability_scale},
          {"warnings", r.warnings}};
}

halk::FitResult run_fit(const halk::TrainingSet& ts, const halk::FitOptions& opt,
                        const nlohmann::json& data_info, halk_model** out, char** cv_json) {
  halk::FitResult res = halk::fit_model(ts, opt);
  res.model.tuning["data"] = data_info;
  std::string cv_text;
  if (cv_json) cv_text = halk::dump_json(halk::cv_report_to_json(res.cv));
  auto* h = new halk_model{std::move(res.model)};
  *out = h;
  if (cv_json) *cv_json = dup_string(cv_text);
  return res;
}

}  // namespace

extern "C" {

const char* halk_version(void) { return "1.0.0"; }

const char* halk_last_error(void) { return g_last_error.c_str(); }

void halk_string_free(char* s) { std::free(s); }

int halk_set_threads(unsigned threads) {
  return guarded([&] { halk::set_thread_count(threads); });
}

unsigned halk_get_threads(void) { return halk::thread_count(); }

int halk_fit_options_create(halk_fit_options** out) {
  return guarded([&] {
    require(out != nullptr, "null output pointer");
    *out = new halk_fit_options();
  });
}

void halk_fit_options_free(halk_fit_options* opt) { delete opt; }

int halk_fit_options_set(halk_fit_options* opt, const char* key, const char* value) {
  return guarded([&] {
    require(opt && key && value, "null argument");
    const std::string k = key, v = value;
    auto& f = opt->fit;
    if (k == "family") {
      f.family = halk::parse_family(v);
    } else if (k == "estimator") {
      f.estimator = halk::parse_fit_kind(v);
    } else if (k == "selector" || k == "select") {
      f.selector = halk::parse_selector(v);
    } else if (k == "k") {
      f.k_values.clear();
      for (const auto& s : split_list(v)) {
        const long kk = parse_int("k", s);
        if (kk < 0 || kk > 16) throw halk::InputError("k must lie in 0..16");
        f.k_values.push_back(static_cast<int>(kk));
      }
    } else if (k == "restriction") {
      f.restrictions.clear();
      for (const auto& s : split_list(v)) f.restrictions.push_back(halk::SubmodelRestriction::parse(s));
    } else if (k == "j_max") {
      f.j_max_values.clear();
      for (const auto& s : split_list(v)) {
        if (s == "n") {
          f.j_max_values.push_back(0);
          continue;
        }
        const long j = parse_int("j_max", s);
        if (j < 0) throw halk::InputError("j_max must be >= 0");
        f.j_max_values.push_back(static_cast<std::size_t>(j));
      }
    } else if (k == "c_values") {
      f.c_values.clear();
      for (const auto& s : split_list(v)) {
        const double c = halk::parse_double(s, "c_values");
        if (!(c >= 0.0) || !std::isfinite(c)) throw halk::InputError("c_values must be finite and >= 0");
        f.c_values.push_back(c);
      }
    } else if (k == "folds") {
      const long V = parse_int("folds", v);
      if (V < 2) throw halk::InputError("folds must be >= 2");
      f.folds = static_cast<int>(V);
    } else if (k == "seed") {
      const long s = parse_int("seed", v);
      if (s < 0) throw halk::InputError("seed must be >= 0");
      f.seed = static_cast<std::uint64_t>(s);
    } else if (k == "chain_cap") {
      const long c = parse_int("chain_cap", v);
      if (c < 1) throw halk::InputError("chain_cap must be >= 1");
      f.dictionary.chain_cap = static_cast<std::size_t>(c);
    } else if (k == "lambda_count") {
      const long c = parse_int("lambda_count", v);
      if (c < 2) throw halk::InputError("lambda_count must be >= 2");
      f.dictionary.lambda_count = static_cast<std::size_t>(c);
    } else if (k == "lambda_ratio") {
      const double r = halk::parse_double(v, "lambda_ratio");
      if (!(r > 0.0 && r < 1.0)) throw halk::InputError("lambda_ratio must lie in (0, 1)");
      f.dictionary.lambda_ratio = r;
    } else if (k == "unpenalize_parametric") {
      f.dictionary.unpenalize_parametric = parse_bool(k, v);
    } else if (k == "lepski_constant") {
      f.lepski_constant = halk::parse_double(v, k);
      if (!(f.lepski_constant >= 0.0)) throw halk::InputError("lepski_constant must be >= 0");
    } else if (k == "lepski_ratio") {
      f.lepski_ratio = halk::parse_double(v, k);
      if (!(f.lepski_ratio > 1.0)) throw halk::InputError("lepski_ratio must be > 1");
    } else if (k == "lepski_steps") {
      const long s = parse_int(k, v);
      if (s < 1) throw halk::InputError("lepski_steps must be >= 1");
      f.lepski_steps = static_cast<int>(s);
    } else if (k == "lepski_variance") {
      f.lepski_variance = halk::parse_variance_method(v);
    } else if (k == "binary") {
      opt->binary = v.empty() ? std::vector<std::string>{} : split_list(v);
    } else if (k == "weights") {
      opt->weights = v;
    } else {
      throw halk::InputError("unknown fit option '" + k + "'");
    }
  });
}

int halk_fit_csv(const char* data_path, const char* y_column, const halk_fit_options* opt,
                 halk_model** out, char** cv_report_json) {
  return guarded([&] {
    require(data_path && y_column && opt && out, "null argument");
    const auto t = halk::read_csv(data_path);
    const std::string ycol = y_column;
    if (!t.has_column(ycol)) throw halk::InputError("response column '" + ycol + "' not found");
    if (!opt->weights.empty() && !t.has_column(opt->weights))
      throw halk::InputError("weight column '" + opt->weights + "' not found");
    for (const auto& b : opt->binary) {
      if (!t.has_column(b)) throw halk::InputError("binary column '" + b + "' not found");
      if (b == ycol || b == opt->weights)
        throw halk::InputError("binary column '" + b + "' is the response or weight column");
    }
    halk::TrainingSet ts;
    for (const auto& h : t.header) {
      if (h == ycol || h == opt->weights) continue;
      ts.names.push_back(h);
      ts.binary.push_back(std::find(opt->binary.begin(), opt->binary.end(), h) != opt->binary.end());
    }
    if (ts.names.empty()) throw halk::InputError("no covariate columns besides the response");
    if (t.rows.empty()) throw halk::InputError("'" + std::string(data_path) + "' has no data rows");
    ts.X = t.numeric(ts.names);
    ts.y = t.numeric(ycol);
    if (!opt->weights.empty()) ts.w = t.numeric(opt->weights);
    nlohmann::json info = {{"y", ycol},
                           {"weights", opt->weights.empty() ? nlohmann::json(nullptr)
                                                            : nlohmann::json(opt->weights)}};
    run_fit(ts, opt->fit, info, out, cv_report_json);
  });
}

int halk_fit(const double* X, size_t n, size_t d, const int* binary, const double* y,
             const double* w, const halk_fit_options* opt, halk_model** out, char** cv_report_json) {
  return guarded([&] {
    require(X && y && opt && out, "null argument");
    require(n > 0 && d > 0, "empty covariate matrix");
    halk::TrainingSet ts;
    ts.X = row_major(X, n, d);
    check_finite(ts.X, "covariate matrix");
    for (std::size_t c = 0; c < d; ++c) {
      ts.names.push_back("x" + std::to_string(c + 1));
      ts.binary.push_back(binary ? binary[c] != 0 : false);
    }
    ts.y = Eigen::Map<const Eigen::VectorXd>(y, static_cast<Eigen::Index>(n));
    check_finite(ts.y, "response");
    if (w) ts.w = Eigen::Map<const Eigen::VectorXd>(w, static_cast<Eigen::Index>(n));
    run_fit(ts, opt->fit, {{"y", "y"}, {"weights", nullptr}}, out, cv_report_json);
  });
}

void halk_model_free(halk_model* model) { delete model; }

int halk_model_save(const halk_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "null argument");
    halk::save_model(path, model->model);
  });
}

int halk_model_load(const char* path, halk_model** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new halk_model{halk::load_model(path)};
  });
}

int halk_model_to_json(const halk_model* model, char** json) {
  return guarded([&] {
    require(model && json, "null argument");
    *json = dup_string(halk::dump_json(halk::model_to_json(model->model)));
  });
}

int halk_model_from_json(const char* json, halk_model** out) {
  return guarded([&] {
    require(json && out, "null argument");
    *out = new halk_model{halk::model_from_json(nlohmann::json::parse(json))};
  });
}

int halk_model_shape(const halk_model* model, size_t* covariates, size_t* support,
                     size_t* dictionary) {
  return guarded([&] {
    require(model != nullptr, "null model");
    if (covariates) *covariates = model->model.rescale.columns.size();
    if (support) *support = model->model.support().size();
    if (dictionary) *dictionary = model->model.dictionary.size();
  });
}

int halk_predict(const halk_model* model, const double* X, size_t n, size_t d, double* eta,
                 double* mean) {
  return guarded([&] {
    require(model && X, "null argument");
    require(d == model->model.rescale.columns.size(), "covariate count does not match the model");
    const Eigen::MatrixXd M = row_major(X, n, d);
    check_finite(M, "covariate matrix");
    const auto p = halk::predict(model->model, M);
    for (std::size_t i = 0; i < n; ++i) {
      if (eta) eta[i] = p.eta(static_cast<Eigen::Index>(i));
      if (mean) mean[i] = p.mean(static_cast<Eigen::Index>(i));
    }
  });
}

int halk_predict_csv(const halk_model* model, const char* data_path, const char* out_path) {
  return guarded([&] {
    require(model && data_path && out_path, "null argument");
    const auto t = halk::read_csv(data_path);
    const auto names = model_columns(model->model);
    const Eigen::MatrixXd X = t.numeric(names);
    const auto p = halk::predict(model->model, X);
    halk::write_csv(out_path, halk::prediction_table(X, names, p));
  });
}

int halk_ci_options_create(halk_ci_options** out) {
  return guarded([&] {
    require(out != nullptr, "null output pointer");
    *out = new halk_ci_options();
  });
}

void halk_ci_options_free(halk_ci_options* opt) { delete opt; }

int halk_ci_options_set(halk_ci_options* opt, const char* key, const char* value) {
  return guarded([&] {
    require(opt && key && value, "null argument");
    const std::string k = key, v = value;
    auto& r = opt->req;
    if (k == "level") {
      r.level = halk::parse_double(v, "level");
      if (!(r.level > 0.0 && r.level < 1.0)) throw halk::InputError("level must lie in (0, 1)");
    } else if (k == "method") {
      r.method = halk::parse_variance_method(v);
    } else if (k == "band") {
      r.band = halk::parse_band_kind(v);
    } else if (k == "scale") {
      if (v == "linear") r.probability_scale = false;
      else if (v == "probability") r.probability_scale = true;
      else throw halk::InputError("scale must be linear or probability");
    } else if (k == "seed") {
      const long s = parse_int("seed", v);
      if (s < 0) throw halk::InputError("seed must be >= 0");
      r.seed = static_cast<std::uint64_t>(s);
    } else if (k == "mc_samples") {
      const long s = parse_int("mc_samples", v);
      if (s < 100) throw halk::InputError("mc_samples must be >= 100");
      r.mc_samples = static_cast<std::size_t>(s);
    } else {
      throw halk::InputError("unknown ci option '" + k + "'");
    }
  });
}

int halk_ci(const halk_model* model, const double* X_train, size_t n, size_t d, const double* y,
            const double* w, const double* grid, size_t m, const halk_ci_options* opt,
            double* estimate, double* se, double* lower, double* upper, char** info_json) {
  return guarded([&] {
    require(model && X_train && y && grid && opt, "null argument");
    const auto& fm = model->model;
    require(d == fm.rescale.columns.size(), "covariate count does not match the model");
    halk::TrainingSet ts;
    ts.X = row_major(X_train, n, d);
    ts.binary = model_binary(fm);
    ts.names = model_columns(fm);
    ts.y = Eigen::Map<const Eigen::VectorXd>(y, static_cast<Eigen::Index>(n));
    if (w) ts.w = Eigen::Map<const Eigen::VectorXd>(w, static_cast<Eigen::Index>(n));
    const Eigen::MatrixXd G = row_major(grid, m, d);
    check_finite(G, "grid");
    const auto r = halk::model_inference(fm, ts, G, opt->req);
    for (std::size_t i = 0; i < m; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      if (estimate) estimate[i] = r.estimate(ii);
      if (se) se[i] = r.se(ii);
      if (lower) lower[i] = r.lower(ii);
      if (upper) upper[i] = r.upper(ii);
    }
    if (info_json) *info_json = dup_string(halk::dump_json(ci_info(r)));
  });
}

int halk_ci_csv(const halk_model* model, const char* train_path, const char* grid_path,
                const halk_ci_options* opt, const char* out_path, char** info_json) {
  return guarded([&] {
    require(model && train_path && grid_path && opt && out_path, "null argument");
    const auto& fm = model->model;
    const auto ts = training_from_csv(halk::read_csv(train_path), fm);
    const auto names = model_columns(fm);
    const Eigen::MatrixXd G = halk::read_csv(grid_path).numeric(names);
    const auto r = halk::model_inference(fm, ts, G, opt->req);
    halk::write_csv(out_path, halk::inference_table(r, names));
    if (info_json) *info_json = dup_string(halk::dump_json(ci_info(r)));
  });
}

int halk_simulate(const char* config_path, const char* out_dir, char** summary_json) {
  return guarded([&] {
    require(config_path && out_dir, "null argument");
    const auto cfg = halk::read_json(config_path);
    if (!cfg.is_object()) throw halk::InputError("simulation config must be a JSON object");
    const std::string kind = cfg.value("experiment", std::string());
    const auto dgp = halk::dgp_from_json(cfg.value("dgp", nlohmann::json::object()));
    const auto est = halk::estimator_from_json(cfg.value("estimator", nlohmann::json::object()));
    const std::filesystem::path dir(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw halk::InputError("cannot create '" + dir.string() + "': " + ec.message());
    nlohmann::json summary;
    if (kind == "rate") {
      const auto n_list = cfg.at("n_list").get<std::vector<std::size_t>>();
      const int reps = cfg.at("reps").get<int>();
      const auto rep = halk::rate_experiment(dgp, est, n_list, reps, cfg.value("interior", false));
      halk::write_csv((dir / "replicates.csv").string(), halk::rate_rows_table(rep.rows));
      summary = halk::rate_summary_json(rep);
    } else if (kind == "coverage") {
      halk::CoverageConfig cc;
      cc.n = cfg.at("n").get<std::size_t>();
      cc.reps = cfg.at("reps").get<int>();
      cc.levels = cfg.value("levels", std::vector<double>{0.95});
      cc.method = halk::parse_variance_method(cfg.value("method", std::string("orthonormal")));
      cc.fixed_design = cfg.value("fixed_design", false);
      const auto probes = cfg.at("probes").get<std::vector<std::vector<double>>>();
      cc.probes.resize(static_cast<Eigen::Index>(probes.size()), dgp.d);
      for (std::size_t i = 0; i < probes.size(); ++i) {
        if (probes[i].size() != static_cast<std::size_t>(dgp.d))
          throw halk::InputError("probe " + std::to_string(i + 1) + " does not have d coordinates");
        for (int l = 0; l < dgp.d; ++l)
          cc.probes(static_cast<Eigen::Index>(i), l) = probes[i][static_cast<std::size_t>(l)];
      }
      const auto rep = halk::coverage_experiment(dgp, est, cc);
      halk::write_csv((dir / "replicates.csv").string(), halk::coverage_rows_table(rep));
      summary = halk::coverage_summary_json(rep);
    } else {
      throw halk::InputError("experiment must be \"rate\" or \"coverage\"");
    }
    const std::string text = halk::dump_json(summary);
    halk::write_text((dir / "summary.json").string(), text);
    if (summary_json) *summary_json = dup_string(text);
  });
}

}  // extern "C"
