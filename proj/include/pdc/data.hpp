#pragma once

// Observation datasets and their CSV representation:
//
//   # optional comment lines
//   t,y_<state>,y_<state>...
//   0,7.1,-9.8
//
// Columns follow the model's observed components in order.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pdc/error.hpp"
#include "pdc/model.hpp"

namespace pdc {

struct Dataset {
  std::vector<double> times;
  /// N x |observed|; column c holds component observed[c].
  Eigen::MatrixXd y;
  std::vector<std::size_t> observed;
  std::string provenance;

  std::size_t size() const { return times.size(); }

  void validate() const {
    detail::require(!times.empty(), "dataset: no observations");
    detail::require(static_cast<std::size_t>(y.rows()) == times.size(),
                    "dataset: row count != number of times");
    detail::require(static_cast<std::size_t>(y.cols()) == observed.size(),
                    "dataset: column count != number of observed components");
    for (std::size_t i = 0; i < times.size(); ++i) {
      detail::require(std::isfinite(times[i]), "dataset: non-finite time");
      detail::require(i == 0 || times[i] > times[i - 1], "dataset: times must be strictly increasing");
    }
    detail::require(y.allFinite(), "dataset: missing or non-finite observation");
  }

  void check_against(const ModelSpec& model) const {
    validate();
    detail::require(observed == model.observed,
                    "dataset observed components do not match model '" + model.name + "'");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse number '" + s + "'");
  }
}

}  // namespace detail

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_dataset_csv(std::ostream& os, const Dataset& data, const ModelSpec& model,
                              const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) os << "# " << c << '\n';
  os << 't';
  for (auto j : data.observed) os << ",y_" << model.state_names.at(j);
  os << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    os << format_double(data.times[i]);
    for (Eigen::Index c = 0; c < data.y.cols(); ++c)
      os << ',' << format_double(data.y(static_cast<Eigen::Index>(i), c));
    os << '\n';
  }
}

inline Dataset read_dataset_csv(std::istream& is, const ModelSpec& model,
                                const std::string& source = "stream") {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    header = detail::split(t, ',');
    break;
  }
  detail::require(!header.empty() && header[0] == "t", source + ": header must start with 't'");
  Dataset data;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto& h = header[c];
    detail::require(h.rfind("y_", 0) == 0, source + ": column '" + h + "' is not y_<state>");
    const auto name = h.substr(2);
    const auto it = std::find(model.state_names.begin(), model.state_names.end(), name);
    detail::require(it != model.state_names.end(),
                    source + ": unknown state '" + name + "' for model " + model.name);
    data.observed.push_back(static_cast<std::size_t>(it - model.state_names.begin()));
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cells = detail::split(t, ',');
    detail::require(cells.size() == header.size(),
                    source + ": row has " + std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(detail::parse_double(c, source));
    rows.push_back(std::move(row));
  }
  data.times.resize(rows.size());
  data.y.resize(static_cast<Eigen::Index>(rows.size()),
                static_cast<Eigen::Index>(data.observed.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    data.times[i] = rows[i][0];
    for (std::size_t c = 0; c < data.observed.size(); ++c)
      data.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c + 1];
  }
  data.provenance = "external(" + source + ")";
  data.check_against(model);
  return data;
}

inline Dataset read_dataset_csv(const std::string& path, const ModelSpec& model) {
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), "cannot open dataset '" + path + "'");
  return read_dataset_csv(in, model, path);
}

}  // namespace pdc
