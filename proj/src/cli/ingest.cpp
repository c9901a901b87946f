#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>

#include "bocpdms/cli.hpp"
#include "bocpdms/errors.hpp"

namespace bocpdms {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  for (auto& c : cells) {
    if (c.size() >= 2 && c.front() == '"' && c.back() == '"') c = c.substr(1, c.size() - 2);
  }
  return cells;
}

std::optional<double> to_number(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

bool is_index_name(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  return name == "year" || name == "time" || name == "t" || name == "date" || name == "index";
}

}  // namespace

CsvReader::CsvReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in_, line)) {
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    header = split(line);
    break;
  }
  if (header.empty()) throw ParseError(source_ + ": missing header row", line_, 0);
  bool numeric_header = true;
  for (const auto& h : header) numeric_header = numeric_header && to_number(h).has_value();
  if (numeric_header) throw ParseError(source_ + ": missing header row (first row is numeric)", line_, 1);

  const bool has_index = is_index_name(header.front());
  const std::size_t skip = has_index ? 1 : 0;
  if (has_index) index_name_ = header.front();
  columns_.assign(header.begin() + static_cast<std::ptrdiff_t>(skip), header.end());
  if (columns_.empty()) throw ParseError(source_ + ": no data columns", line_, 1);
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    if (columns_[c].empty()) throw ParseError(source_ + ": empty column name", line_, c + skip + 1);
  }
  width_ = header.size();
}

bool CsvReader::next(std::vector<double>& values, std::string& label) {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != width_) {
      throw ParseError(source_ + ": row " + std::to_string(line_) + " has " + std::to_string(cells.size()) +
                           " cells, header has " + std::to_string(width_),
                       line_, std::min(cells.size(), width_) + 1);
    }
    const std::size_t skip = index_name_.empty() ? 0 : 1;
    if (skip == 1) {
      if (cells.front().empty()) throw ParseError(source_ + ": blank index at row " + std::to_string(line_), line_, 1);
      label = cells.front();
    } else {
      label = std::to_string(rows_ + 1);
    }
    values.resize(columns_.size());
    for (std::size_t c = skip; c < cells.size(); ++c) {
      const auto v = to_number(cells[c]);
      if (!v) {
        const std::string what = cells[c].empty() ? "blank cell" : "non-numeric cell '" + cells[c] + "'";
        throw ParseError(source_ + ": " + what + " at row " + std::to_string(line_) + ", column " +
                             std::to_string(c + 1),
                         line_, c + 1);
      }
      if (!std::isfinite(*v)) {
        throw ParseError(source_ + ": non-finite value at row " + std::to_string(line_) + ", column " +
                             std::to_string(c + 1),
                         line_, c + 1);
      }
      values[c - skip] = *v;
    }
    ++rows_;
    return true;
  }
  return false;
}

Series parse_csv(std::istream& in, const std::string& source) {
  CsvReader reader(in, source);
  Series series;
  series.columns = reader.columns();
  series.index_name = reader.index_name();
  std::vector<double> values;
  std::vector<double> row;
  std::string label;
  while (reader.next(row, label)) {
    values.insert(values.end(), row.begin(), row.end());
    series.index.push_back(label);
  }
  if (reader.rows() == 0) throw ParseError(source + ": no data rows", 0, 0);
  const auto S = static_cast<Eigen::Index>(series.columns.size());
  series.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(reader.rows()), S);
  return series;
}

Series ingest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return parse_csv(in, path);
}

SeasonalMeans deseasonalize(Eigen::MatrixXd& series, std::size_t period) {
  if (period < 1) throw ArgumentError("seasonal period must be at least 1");
  const auto T = static_cast<std::size_t>(series.rows());
  if (T < period) throw ArgumentError("series is shorter than the seasonal period");
  SeasonalMeans out;
  out.period = period;
  out.means = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(period), series.cols());
  std::vector<double> counts(period, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    out.means.row(static_cast<Eigen::Index>(t % period)) += series.row(static_cast<Eigen::Index>(t));
    counts[t % period] += 1.0;
  }
  for (std::size_t p = 0; p < period; ++p) out.means.row(static_cast<Eigen::Index>(p)) /= counts[p];
  for (std::size_t t = 0; t < T; ++t) {
    series.row(static_cast<Eigen::Index>(t)) -= out.means.row(static_cast<Eigen::Index>(t % period));
  }
  return out;
}

void reseasonalize(Eigen::MatrixXd& values, const SeasonalMeans& means, std::size_t first_t) {
  if (first_t < 1) throw ArgumentError("time indices are 1-based");
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    const std::size_t phase = (first_t - 1 + static_cast<std::size_t>(i)) % means.period;
    values.row(i) += means.means.row(static_cast<Eigen::Index>(phase));
  }
}

Standardization standardize(Eigen::MatrixXd& series) {
  if (series.rows() < 2) throw ArgumentError("standardizing needs at least two observations");
  Standardization out;
  out.mean = series.colwise().mean().transpose();
  out.sd.resize(series.cols());
  for (Eigen::Index s = 0; s < series.cols(); ++s) {
    const double ss = (series.col(s).array() - out.mean(s)).square().sum();
    out.sd(s) = std::sqrt(ss / static_cast<double>(series.rows() - 1));
    if (!(out.sd(s) > 0.0)) throw ArgumentError("cannot standardize a constant series (column " + std::to_string(s + 1) + ")");
    series.col(s) = (series.col(s).array() - out.mean(s)) / out.sd(s);
  }
  return out;
}

}  // namespace bocpdms
