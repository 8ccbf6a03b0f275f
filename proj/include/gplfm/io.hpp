#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gplfm/bnn.hpp"
#include "gplfm/statespace.hpp"

namespace gplfm {

using nlohmann::json;

struct CsvTable {
  std::vector<std::string> columns;
  MatrixXd values;  // NaN for empty/missing cells
};

// Writes a CSV with a header row; values are printed with 17 significant
// digits so round-trips are exact. The file is written atomically
// (tmp + rename).
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
               const MatrixXd& values);

// Parses a CSV with a header row; empty cells and "nan" become NaN. Throws
// std::runtime_error naming the file and 1-based line on malformed input.
CsvTable read_csv(const std::filesystem::path& path);

// Two-column input/output series with the sample period carried in a
// "# dt=..." comment line before the header.
struct IoSeries {
  VectorXd input;
  VectorXd output;
  double dt = 0.0;
};

IoSeries load_io_csv(const std::filesystem::path& path);
void save_io_csv(const std::filesystem::path& path, const IoSeries& series);

void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

json to_json(const VectorXd& v);
json to_json(const MatrixXd& m);
VectorXd vector_from_json(const json& j);
MatrixXd matrix_from_json(const json& j);

json to_json(const GpHyperparams& theta);
GpHyperparams hyperparams_from_json(const json& j);

json to_json(const BnnModel& model);
BnnModel bnn_model_from_json(const json& j);

// FNV-1a over a file's bytes, hex string; used for the run manifest.
std::string file_hash(const std::filesystem::path& path);

}  // namespace gplfm
