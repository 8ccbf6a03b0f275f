#include "gplfm/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gplfm {

namespace fs = std::filesystem;

namespace {

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

double parse_cell(const std::string& cell, const fs::path& path, size_t line_no) {
  std::string s = cell;
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  size_t start = 0;
  while (start < s.size() && (s[start] == ' ' || s[start] == '\t')) ++start;
  s = s.substr(start);
  if (s.empty() || s == "nan" || s == "NaN" || s == "NAN")
    return std::numeric_limits<double>::quiet_NaN();
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                             ": cannot parse value '" + s + "'");
  }
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace

void write_csv(const fs::path& path, const std::vector<std::string>& columns,
               const MatrixXd& values) {
  if (static_cast<Eigen::Index>(columns.size()) != values.cols())
    throw std::invalid_argument("column name count does not match value columns");
  std::string out;
  out.reserve(static_cast<size_t>(values.size()) * 20 + 64);
  for (size_t i = 0; i < columns.size(); ++i) {
    if (i) out += ',';
    out += columns[i];
  }
  out += '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) out += ',';
      out += format_value(values(r, c));
    }
    out += '\n';
  }
  atomic_write(path, out);
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  size_t line_no = 0;
  CsvTable table;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (line[0] == '#') continue;
    auto cells = split_line(line);
    if (table.columns.empty()) {
      table.columns = cells;
      continue;
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_cell(c, path, line_no));
    if (row.size() != table.columns.size())
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected " + std::to_string(table.columns.size()) +
                               " cells, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (table.columns.empty()) throw std::runtime_error(path.string() + ": missing header row");
  table.values.resize(rows.size(), table.columns.size());
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[r].size(); ++c) table.values(r, c) = rows[r][c];
  return table;
}

IoSeries load_io_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  double dt = 0.0;
  bool have_dt = false;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("# dt=", 0) == 0) {
      dt = parse_cell(line.substr(5), path, line_no);
      have_dt = true;
      break;
    }
    if (!line.empty() && line[0] != '#') break;
  }
  if (!have_dt || !(dt > 0))
    throw std::runtime_error(path.string() + ": missing or invalid '# dt=' line");
  in.close();

  CsvTable table = read_csv(path);
  if (table.columns.size() != 2)
    throw std::runtime_error(path.string() + ": expected 2 columns (input,output)");
  IoSeries series;
  series.dt = dt;
  series.input = table.values.col(0);
  series.output = table.values.col(1);
  return series;
}

void save_io_csv(const fs::path& path, const IoSeries& series) {
  if (series.input.size() != series.output.size())
    throw std::invalid_argument("input/output lengths differ");
  std::string out = "# dt=" + format_value(series.dt) + "\ninput,output\n";
  for (Eigen::Index i = 0; i < series.input.size(); ++i)
    out += format_value(series.input(i)) + "," + format_value(series.output(i)) + "\n";
  atomic_write(path, out);
}

void write_json(const fs::path& path, const json& j) { atomic_write(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

json to_json(const VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

json to_json(const MatrixXd& m) {
  json arr = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    arr.push_back(std::move(row));
  }
  return arr;
}

VectorXd vector_from_json(const json& j) {
  VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

MatrixXd matrix_from_json(const json& j) {
  const size_t rows = j.size();
  const size_t cols = rows ? j[0].size() : 0;
  MatrixXd m(rows, cols);
  for (size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) throw std::runtime_error("ragged matrix in JSON");
    for (size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

json to_json(const GpHyperparams& theta) {
  return json{{"alpha", to_json(theta.alpha)}, {"ell", to_json(theta.ell)}};
}

GpHyperparams hyperparams_from_json(const json& j) {
  GpHyperparams theta;
  theta.alpha = vector_from_json(j.at("alpha"));
  theta.ell = vector_from_json(j.at("ell"));
  return theta;
}

json to_json(const BnnModel& model) {
  json j;
  j["topology"] = {{"input_dim", model.topology.input_dim},
                   {"hidden", model.topology.hidden},
                   {"activation", model.topology.activation == Activation::relu ? "relu" : "tanh"},
                   {"target_dim", model.topology.target_dim}};
  j["mu_q"] = to_json(model.vp.mu_q);
  j["rho_q"] = to_json(model.vp.rho_q);
  j["normalization"] = {{"shift", to_json(model.normalization.shift)},
                        {"scale", to_json(model.normalization.scale)}};
  return j;
}

BnnModel bnn_model_from_json(const json& j) {
  BnnModel model;
  const json& t = j.at("topology");
  model.topology.input_dim = t.at("input_dim").get<int>();
  model.topology.hidden = t.at("hidden").get<std::vector<int>>();
  model.topology.activation =
      t.at("activation").get<std::string>() == "tanh" ? Activation::tanh_act : Activation::relu;
  model.topology.target_dim = t.at("target_dim").get<int>();
  model.vp.mu_q = vector_from_json(j.at("mu_q"));
  model.vp.rho_q = vector_from_json(j.at("rho_q"));
  model.normalization.shift = vector_from_json(j.at("normalization").at("shift"));
  model.normalization.scale = vector_from_json(j.at("normalization").at("scale"));
  if (model.vp.mu_q.size() != model.topology.param_count())
    throw std::runtime_error("BNN model file is inconsistent: wrong parameter count");
  return model;
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  uint64_t h = 1469598103934665603ull;
  char buf[8192];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace gplfm
