#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "halk/halk.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = HALK_CLI_PATH;

struct Owned {
  char* p = nullptr;
  ~Owned() { halk_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

struct Model {
  halk_model* p = nullptr;
  ~Model() { halk_model_free(p); }
};

struct FitOpts {
  halk_fit_options* p = nullptr;
  FitOpts() { REQUIRE(halk_fit_options_create(&p) == HALK_OK); }
  ~FitOpts() { halk_fit_options_free(p); }
  void set(const char* k, const char* v) { REQUIRE(halk_fit_options_set(p, k, v) == HALK_OK); }
};

struct CiOpts {
  halk_ci_options* p = nullptr;
  CiOpts() { REQUIRE(halk_ci_options_create(&p) == HALK_OK); }
  ~CiOpts() { halk_ci_options_free(p); }
  void set(const char* k, const char* v) { REQUIRE(halk_ci_options_set(p, k, v) == HALK_OK); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Runs the CLI with stderr captured; returns the exit status.
int cli(const std::string& args, std::string* err = nullptr) {
  const std::string log = "cli_stderr.txt";
  const std::string cmd = "\"" + kCli + "\" --threads 2 " + args + " >/dev/null 2>" + log;
  const int raw = std::system(cmd.c_str());
  if (err) *err = slurp(log);
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::vector<std::vector<double>> read_numeric_csv(const fs::path& p, std::vector<std::string>* header) {
  std::ifstream in(p);
  std::string line;
  std::vector<std::vector<double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (first) {
      if (header) *header = f;
      first = false;
      continue;
    }
    std::vector<double> r;
    for (const auto& c : f) r.push_back(std::stod(c));
    rows.push_back(r);
  }
  return rows;
}

struct Toy {
  std::vector<double> X, y;
  std::size_t n = 0, d = 2;
};

Toy toy(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0, 1);
  std::normal_distribution<double> Z;
  Toy t;
  t.n = n;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = U(rng), b = U(rng);
    t.X.push_back(a);
    t.X.push_back(b);
    t.y.push_back(std::sin(3 * a) + b * b + 0.3 * Z(rng));
  }
  return t;
}

void write_toy_csv(const fs::path& p, const Toy& t) {
  std::ostringstream s;
  s.precision(17);
  s << "x1,x2,y\n";
  for (std::size_t i = 0; i < t.n; ++i) s << t.X[2 * i] << ',' << t.X[2 * i + 1] << ',' << t.y[i] << '\n';
  write(p, s.str());
}

}  // namespace

TEST_CASE("error codes and the per-thread last error") {
  CHECK(std::string(halk_version()).size() > 0);
  halk_fit_options* opt = nullptr;
  REQUIRE(halk_fit_options_create(&opt) == HALK_OK);
  CHECK(halk_fit_options_set(opt, "colour", "red") == HALK_E_INPUT);
  const std::string msg = halk_last_error();
  CHECK(msg.find("colour") != std::string::npos);
  CHECK(halk_fit_options_set(opt, "k", "-1") == HALK_E_INPUT);
  CHECK(halk_fit_options_set(opt, "estimator", "magic") == HALK_E_INPUT);
  CHECK(halk_fit_options_set(nullptr, "k", "1") == HALK_E_INPUT);

  // A failure on another thread leaves this thread's message alone.
  CHECK(halk_fit_options_set(opt, "colour", "red") == HALK_E_INPUT);
  std::string other;
  std::thread t([&] {
    halk_model* m = nullptr;
    halk_model_load("/nonexistent/model.json", &m);
    other = halk_last_error();
  });
  t.join();
  CHECK(other.find("/nonexistent/model.json") != std::string::npos);
  CHECK(std::string(halk_last_error()) == msg);
  halk_fit_options_free(opt);

  halk_model* m = nullptr;
  CHECK(halk_model_from_json("{not json", &m) == HALK_E_INPUT);
  CHECK(m == nullptr);
  CHECK(halk_set_threads(3) == HALK_OK);
  CHECK(halk_get_threads() == 3);
  CHECK(halk_set_threads(0) == HALK_OK);
  CHECK(halk_get_threads() >= 1);
}

TEST_CASE("fit, predict and intervals through the C interface") {
  const Toy t = toy(150, 1);
  FitOpts opt;
  opt.set("k", "1");
  opt.set("estimator", "relax");
  opt.set("j_max", "8");
  opt.set("seed", "4");
  Model model;
  Owned cv;
  REQUIRE(halk_fit(t.X.data(), t.n, t.d, nullptr, t.y.data(), nullptr, opt.p, &model.p, &cv.p) ==
          HALK_OK);
  const auto report = nlohmann::json::parse(cv.str());
  CHECK(report.at("folds") == 5);
  std::size_t cov = 0, support = 0, dict = 0;
  REQUIRE(halk_model_shape(model.p, &cov, &support, &dict) == HALK_OK);
  CHECK(cov == 2);
  CHECK(support >= 1);
  CHECK(support <= dict);

  std::vector<double> eta(t.n), mean(t.n);
  REQUIRE(halk_predict(model.p, t.X.data(), t.n, t.d, eta.data(), mean.data()) == HALK_OK);
  CHECK(eta == mean);
  double rss = 0, tss = 0, ybar = 0;
  for (double v : t.y) ybar += v / static_cast<double>(t.n);
  for (std::size_t i = 0; i < t.n; ++i) {
    rss += std::pow(t.y[i] - eta[i], 2);
    tss += std::pow(t.y[i] - ybar, 2);
  }
  CHECK(rss < 0.5 * tss);
  CHECK(halk_predict(model.p, t.X.data(), t.n, 3, eta.data(), nullptr) == HALK_E_INPUT);

  // JSON round trip predicts bitwise identically.
  Owned js;
  REQUIRE(halk_model_to_json(model.p, &js.p) == HALK_OK);
  Model back;
  REQUIRE(halk_model_from_json(js.p, &back.p) == HALK_OK);
  std::vector<double> eta2(t.n);
  REQUIRE(halk_predict(back.p, t.X.data(), t.n, t.d, eta2.data(), nullptr) == HALK_OK);
  CHECK(eta2 == eta);

  const std::vector<double> grid{0.2, 0.2, 0.5, 0.5, 0.8, 0.3};
  std::vector<double> est(3), se(3), lo(3), hi(3), lo2(3), hi2(3);
  CiOpts ci;
  Owned info;
  REQUIRE(halk_ci(model.p, t.X.data(), t.n, t.d, t.y.data(), nullptr, grid.data(), 3, ci.p,
                  est.data(), se.data(), lo.data(), hi.data(), &info.p) == HALK_OK);
  const auto jinfo = nlohmann::json::parse(info.str());
  const double d_eff = jinfo.at("d_eff").get<double>();
  CHECK(d_eff == static_cast<double>(support));
  ci.set("band", "log-scaled");
  REQUIRE(halk_ci(model.p, t.X.data(), t.n, t.d, t.y.data(), nullptr, grid.data(), 3, ci.p,
                  est.data(), se.data(), lo2.data(), hi2.data(), nullptr) == HALK_OK);
  for (int i = 0; i < 3; ++i) {
    CHECK(lo[i] <= est[i]);
    CHECK(est[i] <= hi[i]);
    CHECK((hi2[i] - lo2[i]) == doctest::Approx((hi[i] - lo[i]) * std::log(d_eff)).epsilon(1e-12));
  }
  CHECK(halk_ci_options_set(ci.p, "level", "1.5") == HALK_E_INPUT);
  CHECK(halk_ci_options_set(ci.p, "band", "wide") == HALK_E_INPUT);
}

TEST_CASE("command-line tool") {
  const fs::path dir = fs::current_path() / "capi_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto p = [&](const char* name) { return (dir / name).string(); };

  SUBCASE("five-row indicator sieve") {
    write(p("toy.csv"), "x,y\n0.1,1\n0.3,2\n0.5,1.5\n0.7,3\n0.9,2.5\n");
    REQUIRE(cli("fit --data " + p("toy.csv") + " --k 0 --estimator sieve --j-max n --out " +
                p("m.json")) == 0);
    const auto m = nlohmann::json::parse(slurp(p("m.json")));
    const auto terms = m.at("dictionary").at("terms").size();
    CHECK(m.at("coefficients").at("index").size() <= terms);
    CHECK(m.at("coefficients").at("size") == terms);
    CHECK(fs::exists(p("m.json.cv.json")));
  }

  SUBCASE("missing response column") {
    write(p("toy.csv"), "x,z\n0.1,1\n0.3,2\n0.5,1.5\n");
    std::string err;
    CHECK(cli("fit --data " + p("toy.csv") + " --y outcome --out " + p("m.json"), &err) == 2);
    CHECK(err.find("outcome") != std::string::npos);
    CHECK(cli("fit --data " + p("absent.csv") + " --out " + p("m.json"), &err) == 2);
    CHECK(cli("fit --bogus-flag", &err) == 2);
    CHECK_FALSE(fs::exists(p("m.json")));
  }

  SUBCASE("refit is byte identical and predictions match memory") {
    const Toy t = toy(120, 9);
    write_toy_csv(p("train.csv"), t);
    const std::string flags = " --k 1 --j-max 10 --seed 5 --estimator hal";
    REQUIRE(cli("fit --data " + p("train.csv") + flags + " --out " + p("a.json")) == 0);
    REQUIRE(cli("fit --data " + p("train.csv") + flags + " --out " + p("b.json")) == 0);
    CHECK(slurp(p("a.json")) == slurp(p("b.json")));
    CHECK(slurp(p("a.json.cv.json")) == slurp(p("b.json.cv.json")));

    // Same fit in memory through the library.
    FitOpts opt;
    opt.set("k", "1");
    opt.set("j_max", "10");
    opt.set("seed", "5");
    Model model;
    REQUIRE(halk_fit_csv(p("train.csv").c_str(), "y", opt.p, &model.p, nullptr) == HALK_OK);
    std::vector<double> eta(t.n);
    REQUIRE(halk_predict(model.p, t.X.data(), t.n, t.d, eta.data(), nullptr) == HALK_OK);

    REQUIRE(cli("predict --model " + p("a.json") + " --data " + p("train.csv") + " --out " +
                p("pred.csv")) == 0);
    std::vector<std::string> header;
    const auto rows = read_numeric_csv(p("pred.csv"), &header);
    CHECK(header == std::vector<std::string>{"x1", "x2", "eta", "estimate"});
    REQUIRE(rows.size() == t.n);
    for (std::size_t i = 0; i < t.n; ++i) CHECK(std::abs(rows[i][2] - eta[i]) <= 1e-12);

    // Log-scaled band widens the pointwise one by ln(d_eff).
    write(p("grid.csv"), "x1,x2\n0.1,0.9\n0.5,0.5\n0.9,0.2\n");
    REQUIRE(cli("ci --model " + p("a.json") + " --data-train " + p("train.csv") + " --grid " +
                p("grid.csv") + " --out " + p("pw.csv")) == 0);
    REQUIRE(cli("ci --model " + p("a.json") + " --data-train " + p("train.csv") + " --grid " +
                p("grid.csv") + " --band log-scaled --out " + p("ls.csv")) == 0);
    const auto pw = read_numeric_csv(p("pw.csv"), &header);
    CHECK(header == std::vector<std::string>{"x1", "x2", "estimate", "se", "lower", "upper"});
    const auto ls = read_numeric_csv(p("ls.csv"), nullptr);
    CiOpts ci;
    Owned info;
    REQUIRE(halk_ci_csv(model.p, p("train.csv").c_str(), p("grid.csv").c_str(), ci.p,
                        p("pw_lib.csv").c_str(), &info.p) == HALK_OK);
    const double d_eff = nlohmann::json::parse(info.str()).at("d_eff").get<double>();
    REQUIRE(pw.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      const double h_pw = pw[i][5] - pw[i][2], h_ls = ls[i][5] - ls[i][2];
      CHECK(h_ls == doctest::Approx(h_pw * std::log(d_eff)).epsilon(1e-12));
    }
    CHECK(slurp(p("pw_lib.csv")) == slurp(p("pw.csv")));

    write(p("badgrid.csv"), "x1,q\n0.1,0.9\n");
    std::string err;
    CHECK(cli("ci --model " + p("a.json") + " --data-train " + p("train.csv") + " --grid " +
                  p("badgrid.csv") + " --out " + p("bad.csv"), &err) == 2);
    CHECK(err.find("x2") != std::string::npos);
  }

  SUBCASE("two-replicate simulation") {
    write(p("sim.json"),
          R"({"experiment":"coverage","n":60,"reps":2,"levels":[0.95],"probes":[[0.5]],)"
          R"("dgp":{"d":1,"truth":"smooth_sin","sigma":0.5,"seed":3},)"
          R"("estimator":{"k":1,"estimator":"relax","j_max":6}})");
    REQUIRE(cli("simulate --config " + p("sim.json") + " --out " + p("out")) == 0);
    const auto rows = slurp(p("out/replicates.csv"));
    CHECK(std::count(rows.begin(), rows.end(), '\n') == 3);  // header + 2
    const auto summary = nlohmann::json::parse(slurp(p("out/summary.json")));
    CHECK(summary.at("rows") == 2);
    CHECK(summary.at("replicates").get<int>() + summary.at("failures").get<int>() == 2);

    write(p("bad.json"), R"({"experiment":"rate","reps":1})");
    CHECK(cli("simulate --config " + p("bad.json") + " --out " + p("out2")) == 2);
  }
  fs::remove_all(dir);
}
