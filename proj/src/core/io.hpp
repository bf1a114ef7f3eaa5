#pragma once

// CSV tables, model files and report serialisation.

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "core/estimate.hpp"
#include "core/sim.hpp"
#include "json.hpp"

namespace halk {

/// Shortest decimal that parses back to the same double; "nan"/"inf" for
/// non-finite values.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position; throws InputError naming the column when absent.
  std::size_t column(const std::string& name) const;
  bool has_column(const std::string& name) const;
  Eigen::VectorXd numeric(const std::string& name) const;
  Eigen::MatrixXd numeric(const std::vector<std::string>& names) const;
};

CsvTable parse_csv(std::istream& in, const std::string& source = "csv");
CsvTable read_csv(const std::string& path);
void write_csv(std::ostream& out, const CsvTable& table);
void write_csv(const std::string& path, const CsvTable& table);

inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const FittedModel& model);
FittedModel model_from_json(const nlohmann::json& j);
/// Sorted keys, two-space indent, trailing newline.
std::string dump_json(const nlohmann::json& j);
void save_model(const std::string& path, const FittedModel& model);
FittedModel load_model(const std::string& path);
nlohmann::json read_json(const std::string& path);
void write_text(const std::string& path, const std::string& text);

nlohmann::json cv_report_to_json(const CVReport& rep);
CsvTable inference_table(const InferenceResult& res, const std::vector<std::string>& names);
CsvTable prediction_table(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                          const Prediction& pred);

CsvTable rate_rows_table(const std::vector<RateRow>& rows);
std::vector<RateRow> rate_rows_from_table(const CsvTable& t);
nlohmann::json rate_summary_json(const RateReport& rep);

CsvTable coverage_rows_table(const CoverageReport& rep);
std::vector<CoverageRow> coverage_rows_from_table(const CsvTable& t,
                                                  const std::vector<double>& levels,
                                                  std::size_t probes);
nlohmann::json coverage_summary_json(const CoverageReport& rep);

}  // namespace halk
