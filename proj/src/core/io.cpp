#include "core/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "core/error.hpp"

namespace halk {

using nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& what) {
  std::size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  if (b < e && text[b] == '+') ++b;
  double v = 0.0;
  const auto res = std::from_chars(text.data() + b, text.data() + e, v);
  if (b == e || res.ec != std::errc() || res.ptr != text.data() + e)
    throw InputError(what + ": '" + text + "' is not a number");
  return v;
}

namespace {

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw InputError(what + ": '" + text + "' is not an unsigned integer");
  return v;
}

std::vector<std::string> split_record(const std::string& line, std::size_t line_no,
                                      const std::string& source) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted)
    throw InputError(source + " line " + std::to_string(line_no) + ": unterminated quote");
  out.push_back(cur);
  for (auto& f : out) {
    std::size_t b = 0, e = f.size();
    while (b < e && (f[b] == ' ' || f[b] == '\t')) ++b;
    while (e > b && (f[e - 1] == ' ' || f[e - 1] == '\t')) --e;
    f = f.substr(b, e - b);
  }
  return out;
}

std::string quote_field(const std::string& f) {
  if (f.find_first_of(",\"\n\r") == std::string::npos) return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<int> depth_vector(const SubsetChain& c) {
  return std::vector<int>(c.depths().begin(), c.depths().end());
}

SubsetChain chain_from_json(const json& j, int k) {
  std::vector<std::uint8_t> depths;
  for (int v : j.get<std::vector<int>>()) {
    if (v < 0 || v > k + 1) throw InputError("model file: chain depth out of range");
    depths.push_back(static_cast<std::uint8_t>(v));
  }
  return SubsetChain::from_depths(std::move(depths), k);
}

json nan_as_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double null_as_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == name) return c;
  throw InputError("column '" + name + "' not found");
}

bool CsvTable::has_column(const std::string& name) const {
  for (const auto& h : header)
    if (h == name) return true;
  return false;
}

Eigen::VectorXd CsvTable::numeric(const std::string& name) const {
  const auto c = column(name);
  Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double x = parse_double(rows[r][c], "column '" + name + "' row " + std::to_string(r + 1));
    if (!std::isfinite(x))
      throw InputError("column '" + name + "' row " + std::to_string(r + 1) + " is not finite");
    v(static_cast<Eigen::Index>(r)) = x;
  }
  return v;
}

Eigen::MatrixXd CsvTable::numeric(const std::vector<std::string>& names) const {
  Eigen::MatrixXd M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t c = 0; c < names.size(); ++c) M.col(static_cast<Eigen::Index>(c)) = numeric(names[c]);
  return M;
}

CsvTable parse_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto fields = split_record(line, line_no, source);
    if (!have_header) {
      t.header = std::move(fields);
      for (std::size_t a = 0; a < t.header.size(); ++a) {
        if (t.header[a].empty())
          throw InputError(source + ": empty column name at position " + std::to_string(a + 1));
        for (std::size_t b = 0; b < a; ++b)
          if (t.header[a] == t.header[b])
            throw InputError(source + ": duplicate column '" + t.header[a] + "'");
      }
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size())
      throw InputError(source + " line " + std::to_string(line_no) + ": expected " +
                       std::to_string(t.header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) throw InputError(source + ": missing header row");
  return t;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return parse_csv(in, path);
}

void write_csv(std::ostream& out, const CsvTable& table) {
  auto emit = [&](const std::vector<std::string>& rec) {
    for (std::size_t c = 0; c < rec.size(); ++c) {
      if (c) out << ',';
      out << quote_field(rec[c]);
    }
    out << '\n';
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  write_csv(out, table);
  if (!out) throw InputError("write to '" + path + "' failed");
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
  if (!out) throw InputError("write to '" + path + "' failed");
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("'" + path + "' is not valid JSON: " + e.what());
  }
}

json model_to_json(const FittedModel& m) {
  json j;
  j["format"] = "halk-model";
  j["format_version"] = kModelFormatVersion;
  j["family"] = to_string(m.family);

  json cols = json::array();
  for (const auto& c : m.rescale.columns)
    cols.push_back({{"name", c.name}, {"binary", c.binary}, {"min", c.min}, {"max", c.max}});
  j["rescale"] = cols;

  const auto& d = m.dictionary;
  json terms = json::array();
  for (const auto& t : d.terms)
    terms.push_back({{"chain", depth_vector(t.index.chain)},
                     {"knot", t.index.knot},
                     {"mask", t.binary_mask}});
  j["dictionary"] = {{"k", d.k},
                     {"d", d.d},
                     {"binary_columns", d.binary_columns},
                     {"restriction", d.restriction.to_string()},
                     {"j_max", d.j_max},
                     {"terms", terms}};

  std::vector<std::size_t> unpen;
  for (std::size_t p = 0; p < m.penalized.size(); ++p)
    if (!m.penalized[p]) unpen.push_back(p);
  j["unpenalized"] = unpen;

  std::vector<std::size_t> idx;
  std::vector<double> val;
  for (Eigen::Index p = 0; p < m.fit.beta.size(); ++p)
    if (m.fit.beta(p) != 0.0) {
      idx.push_back(static_cast<std::size_t>(p));
      val.push_back(m.fit.beta(p));
    }
  j["coefficients"] = {{"size", m.fit.beta.size()}, {"index", idx}, {"value", val}};

  const auto& r = m.fit.report;
  j["fit"] = {{"kind", to_string(m.fit.kind)},
              {"lambda", nan_as_null(m.fit.lambda)},
              {"c_target", nan_as_null(m.fit.c_target)},
              {"l1_norm", m.fit.l1_norm},
              {"diagnostics",
               {{"converged", r.converged},
                {"iterations", r.iterations},
                {"kkt_violation", r.kkt_violation},
                {"max_score", r.max_score},
                {"separation", r.separation},
                {"pinv_fallback", r.pinv_fallback},
                {"dropped_columns", r.dropped_columns},
                {"notes", r.notes}}}};
  j["tuning"] = m.tuning;
  if (!m.plugin_weights.empty()) j["plugin_weights"] = m.plugin_weights;
  return j;
}

FittedModel model_from_json(const json& j) {
  FittedModel m;
  try {
    if (j.value("format", std::string()) != "halk-model")
      throw InputError("model file: not a halk model");
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw InputError("model file: unsupported format version " + std::to_string(version));
    m.family = parse_family(j.at("family").get<std::string>());
    for (const auto& c : j.at("rescale"))
      m.rescale.columns.push_back({c.at("name").get<std::string>(), c.at("binary").get<bool>(),
                                   c.at("min").get<double>(), c.at("max").get<double>()});

    const auto& jd = j.at("dictionary");
    auto& d = m.dictionary;
    d.k = jd.at("k").get<int>();
    d.d = jd.at("d").get<int>();
    d.binary_columns = jd.at("binary_columns").get<int>();
    d.restriction = SubmodelRestriction::parse(jd.at("restriction").get<std::string>());
    d.j_max = jd.at("j_max").get<std::size_t>();
    if (d.k < 0) throw InputError("model file: negative k");
    if (d.d != m.rescale.continuous_count() || d.binary_columns != m.rescale.binary_count())
      throw InputError("model file: dictionary does not match the rescale map");
    for (const auto& t : jd.at("terms")) {
      DictionaryTerm term;
      term.index.chain = chain_from_json(t.at("chain"), d.k);
      if (term.index.chain.dimension() != d.d) throw InputError("model file: chain length mismatch");
      term.index.knot = t.at("knot").get<std::vector<double>>();
      term.index.validate();
      term.binary_mask = t.at("mask").get<std::uint64_t>();
      d.terms.push_back(std::move(term));
    }

    const auto p = d.terms.size();
    m.penalized.assign(p, true);
    for (auto u : j.at("unpenalized").get<std::vector<std::size_t>>()) {
      if (u >= p) throw InputError("model file: unpenalized index out of range");
      m.penalized[u] = false;
    }

    const auto& jc = j.at("coefficients");
    if (jc.at("size").get<std::size_t>() != p)
      throw InputError("model file: coefficient count does not match the dictionary");
    const auto idx = jc.at("index").get<std::vector<std::size_t>>();
    const auto val = jc.at("value").get<std::vector<double>>();
    if (idx.size() != val.size()) throw InputError("model file: coefficient index/value mismatch");
    m.fit.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    for (std::size_t t = 0; t < idx.size(); ++t) {
      if (idx[t] >= p) throw InputError("model file: coefficient index out of range");
      m.fit.beta(static_cast<Eigen::Index>(idx[t])) = val[t];
    }

    const auto& jf = j.at("fit");
    m.fit.kind = parse_fit_kind(jf.at("kind").get<std::string>());
    m.fit.lambda = null_as_nan(jf.at("lambda"));
    m.fit.c_target = null_as_nan(jf.at("c_target"));
    m.fit.l1_norm = jf.at("l1_norm").get<double>();
    const auto& jr = jf.at("diagnostics");
    auto& r = m.fit.report;
    r.converged = jr.at("converged").get<bool>();
    r.iterations = jr.at("iterations").get<long>();
    r.kkt_violation = jr.at("kkt_violation").get<double>();
    r.max_score = jr.at("max_score").get<double>();
    r.separation = jr.at("separation").get<bool>();
    r.pinv_fallback = jr.at("pinv_fallback").get<bool>();
    r.dropped_columns = jr.at("dropped_columns").get<std::vector<std::size_t>>();
    r.notes = jr.at("notes").get<std::vector<std::string>>();
    m.tuning = j.value("tuning", json::object());
    if (j.contains("plugin_weights"))
      m.plugin_weights = j.at("plugin_weights").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw InputError(std::string("model file: ") + e.what());
  }
  return m;
}

void save_model(const std::string& path, const FittedModel& model) {
  write_text(path, dump_json(model_to_json(model)));
}

FittedModel load_model(const std::string& path) { return model_from_json(read_json(path)); }

json cv_report_to_json(const CVReport& rep) {
  json j;
  j["folds"] = rep.folds;
  j["seed"] = rep.seed;
  j["estimator"] = to_string(rep.estimator);
  json cands = json::array();
  for (const auto& c : rep.candidates)
    cands.push_back({{"k", c.k},
                     {"restriction", c.restriction.to_string()},
                     {"j_max", c.j_max},
                     {"c_values", c.c_values}});
  j["candidates"] = cands;
  json table = json::array();
  for (const auto& r : rep.table)
    table.push_back({{"candidate", r.candidate},
                     {"lambda_index", r.lambda_index == std::numeric_limits<std::size_t>::max()
                                          ? json(nullptr)
                                          : json(r.lambda_index)},
                     {"lambda", nan_as_null(r.lambda)},
                     {"C", r.C},
                     {"risk", r.risk},
                     {"se", r.se},
                     {"fold_risks", r.fold_risks}});
  j["table"] = table;
  json failures = json::array();
  for (const auto& [c, why] : rep.failures) failures.push_back({{"candidate", c}, {"reason", why}});
  j["failures"] = failures;
  j["chosen"] = rep.chosen;
  return j;
}

CsvTable inference_table(const InferenceResult& res, const std::vector<std::string>& names) {
  CsvTable t;
  t.header = names;
  for (const char* h : {"estimate", "se", "lower", "upper"}) t.header.emplace_back(h);
  for (Eigen::Index i = 0; i < res.estimate.size(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index c = 0; c < res.grid.cols(); ++c) row.push_back(format_double(res.grid(i, c)));
    row.push_back(format_double(res.estimate(i)));
    row.push_back(format_double(res.se(i)));
    row.push_back(format_double(res.lower(i)));
    row.push_back(format_double(res.upper(i)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable prediction_table(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                          const Prediction& pred) {
  CsvTable t;
  t.header = names;
  t.header.emplace_back("eta");
  t.header.emplace_back("estimate");
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index c = 0; c < X.cols(); ++c) row.push_back(format_double(X(i, c)));
    row.push_back(format_double(pred.eta(i)));
    row.push_back(format_double(pred.mean(i)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable rate_rows_table(const std::vector<RateRow>& rows) {
  CsvTable t;
  t.header = {"n", "rep", "seed", "rmse", "error"};
  for (const auto& r : rows)
    t.rows.push_back({std::to_string(r.n), std::to_string(r.rep), std::to_string(r.seed),
                      format_double(r.rmse), r.error});
  return t;
}

std::vector<RateRow> rate_rows_from_table(const CsvTable& t) {
  const auto cn = t.column("n"), cr = t.column("rep"), cs = t.column("seed"),
             cm = t.column("rmse"), ce = t.column("error");
  std::vector<RateRow> rows;
  for (const auto& rec : t.rows) {
    RateRow r;
    r.n = static_cast<std::size_t>(parse_u64(rec[cn], "n"));
    r.rep = static_cast<int>(parse_u64(rec[cr], "rep"));
    r.seed = parse_u64(rec[cs], "seed");
    r.rmse = parse_double(rec[cm], "rmse");
    r.error = rec[ce];
    rows.push_back(std::move(r));
  }
  return rows;
}

json rate_summary_json(const RateReport& rep) {
  json per_n = json::array();
  for (std::size_t i = 0; i < rep.summary.n.size(); ++i)
    per_n.push_back({{"n", rep.summary.n[i]},
                     {"median_rmse", nan_as_null(rep.summary.median_rmse[i])},
                     {"failures", rep.summary.failures[i]}});
  return {{"config", rep.config},
          {"per_n", per_n},
          {"slope", nan_as_null(rep.summary.slope)},
          {"slope_se", nan_as_null(rep.summary.slope_se)},
          {"rows", rep.rows.size()}};
}

namespace {

std::string covered_column(double level, std::size_t j) {
  return "covered_" + format_double(level) + "_p" + std::to_string(j + 1);
}

}  // namespace

CsvTable coverage_rows_table(const CoverageReport& rep) {
  const auto m = static_cast<std::size_t>(rep.probes.rows());
  const auto& levels = rep.summary.levels;
  CsvTable t;
  t.header = {"rep", "seed", "error"};
  for (const char* pre : {"estimate_p", "se_p", "truth_p"})
    for (std::size_t j = 0; j < m; ++j) t.header.push_back(pre + std::to_string(j + 1));
  for (double lv : levels)
    for (std::size_t j = 0; j < m; ++j) t.header.push_back(covered_column(lv, j));
  for (const auto& r : rep.rows) {
    std::vector<std::string> rec{std::to_string(r.rep), std::to_string(r.seed), r.error};
    for (const Eigen::VectorXd* v : {&r.estimate, &r.se, &r.truth})
      for (std::size_t j = 0; j < m; ++j) rec.push_back(format_double((*v)(static_cast<Eigen::Index>(j))));
    for (std::size_t l = 0; l < levels.size(); ++l)
      for (std::size_t j = 0; j < m; ++j) rec.push_back(r.covered[l][j] ? "1" : "0");
    t.rows.push_back(std::move(rec));
  }
  return t;
}

std::vector<CoverageRow> coverage_rows_from_table(const CsvTable& t,
                                                  const std::vector<double>& levels,
                                                  std::size_t probes) {
  std::vector<CoverageRow> rows;
  const auto cr = t.column("rep"), cs = t.column("seed"), ce = t.column("error");
  for (const auto& rec : t.rows) {
    CoverageRow r;
    r.rep = static_cast<int>(parse_u64(rec[cr], "rep"));
    r.seed = parse_u64(rec[cs], "seed");
    r.error = rec[ce];
    const auto m = static_cast<Eigen::Index>(probes);
    r.estimate.resize(m);
    r.se.resize(m);
    r.truth.resize(m);
    for (std::size_t j = 0; j < probes; ++j) {
      const auto s = std::to_string(j + 1);
      const auto jj = static_cast<Eigen::Index>(j);
      r.estimate(jj) = parse_double(rec[t.column("estimate_p" + s)], "estimate");
      r.se(jj) = parse_double(rec[t.column("se_p" + s)], "se");
      r.truth(jj) = parse_double(rec[t.column("truth_p" + s)], "truth");
    }
    r.covered.assign(levels.size(), std::vector<bool>(probes, false));
    for (std::size_t l = 0; l < levels.size(); ++l)
      for (std::size_t j = 0; j < probes; ++j) {
        const auto& v = rec[t.column(covered_column(levels[l], j))];
        if (v != "0" && v != "1") throw InputError("coverage flag must be 0 or 1");
        r.covered[l][j] = v == "1";
      }
    rows.push_back(std::move(r));
  }
  return rows;
}

json coverage_summary_json(const CoverageReport& rep) {
  const auto& s = rep.summary;
  json levels = json::array();
  for (std::size_t l = 0; l < s.levels.size(); ++l) {
    json cov = json::array(), err = json::array();
    for (std::size_t j = 0; j < s.coverage[l].size(); ++j) {
      cov.push_back(nan_as_null(s.coverage[l][j]));
      err.push_back(nan_as_null(s.mc_error[l][j]));
    }
    levels.push_back({{"level", s.levels[l]},
                      {"coverage", cov},
                      {"mc_error", err},
                      {"average", nan_as_null(s.average[l])}});
  }
  return {{"config", rep.config},
          {"levels", levels},
          {"replicates", s.replicates},
          {"failures", s.failures},
          {"rows", rep.rows.size()},
          {"warnings", rep.warnings}};
}

}  // namespace halk
