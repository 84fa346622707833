#pragma once

// Output serialization. Doubles are written with 17 significant digits so
// every value round-trips exactly; arrays of scalars stay on one line.

#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccrb/matlin.hpp"

namespace ccrb::cli {

using Json = nlohmann::ordered_json;

inline std::string format_double(double x) {
  if (!std::isfinite(x)) return "null";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

/// {"rows": r, "cols": c, "data": [[row 0], [row 1], ...]}.
inline Json matrix_to_json(const Mat& m) {
  Json data = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    data.push_back(std::move(row));
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Json vector_to_json(const Vec& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

namespace detail {

inline bool is_scalar(const Json& j) { return !j.is_object() && !j.is_array(); }

inline void write_scalar(std::ostream& os, const Json& j) {
  if (j.is_number_float()) {
    os << format_double(j.get<double>());
  } else {
    os << j.dump();
  }
}

inline void write_json(std::ostream& os, const Json& j, int indent) {
  const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
  const std::string close(static_cast<std::size_t>(indent), ' ');
  if (j.is_object()) {
    if (j.empty()) {
      os << "{}";
      return;
    }
    os << "{\n";
    bool first = true;
    for (const auto& [key, value] : j.items()) {
      if (!first) os << ",\n";
      first = false;
      os << pad << Json(key).dump() << ": ";
      write_json(os, value, indent + 2);
    }
    os << "\n" << close << "}";
  } else if (j.is_array()) {
    bool flat = true;
    for (const auto& e : j) flat = flat && is_scalar(e);
    if (flat) {
      os << "[";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) os << ", ";
        write_scalar(os, j[i]);
      }
      os << "]";
      return;
    }
    os << "[\n";
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) os << ",\n";
      os << pad;
      write_json(os, j[i], indent + 2);
    }
    os << "\n" << close << "]";
  } else {
    write_scalar(os, j);
  }
}

}  // namespace detail

inline void write_json(std::ostream& os, const Json& j) {
  detail::write_json(os, j, 0);
  os << "\n";
}

inline std::string to_json_string(const Json& j) {
  std::ostringstream os;
  write_json(os, j);
  return os.str();
}

/// Minimal CSV: a header row, then one row per record. Fields are numbers
/// or plain identifiers, so no quoting is needed.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  void write(std::ostream& os) const {
    write_row(os, header_);
    for (const auto& r : rows_) write_row(os, r);
  }

 private:
  static void write_row(std::ostream& os, const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << "\n";
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace ccrb::cli
