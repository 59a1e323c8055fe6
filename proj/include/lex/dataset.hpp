#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lex/error.hpp"

namespace lex {

enum class Split : std::uint8_t { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

/// Tabular data with binary labels and per-row ground-truth selection masks.
/// X and z_star are row-major n x dim.
struct Dataset {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  std::vector<double> X;
  std::vector<int> y;
  std::vector<std::uint8_t> z_star;
  std::vector<Split> split;

  std::size_t size() const { return y.size(); }
  const double* row(std::size_t i) const { return X.data() + i * dim; }
  const std::uint8_t* mask_row(std::size_t i) const { return z_star.data() + i * dim; }

  void push_back(const double* x, int label, const std::uint8_t* mask, Split s) {
    X.insert(X.end(), x, x + dim);
    y.push_back(label);
    z_star.insert(z_star.end(), mask, mask + dim);
    split.push_back(s);
  }

  Dataset subset(Split s) const {
    Dataset out{name, seed, dim, {}, {}, {}, {}};
    for (std::size_t i = 0; i < size(); ++i)
      if (split[i] == s) out.push_back(row(i), y[i], mask_row(i), s);
    return out;
  }

  Dataset rows(const std::vector<std::size_t>& idx) const {
    Dataset out{name, seed, dim, {}, {}, {}, {}};
    for (auto i : idx) out.push_back(row(i), y[i], mask_row(i), split[i]);
    return out;
  }

  void append(const Dataset& o) {
    if (o.dim != dim) throw ContractError("cannot append datasets of different width");
    X.insert(X.end(), o.X.begin(), o.X.end());
    y.insert(y.end(), o.y.begin(), o.y.end());
    z_star.insert(z_star.end(), o.z_star.begin(), o.z_star.end());
    split.insert(split.end(), o.split.begin(), o.split.end());
  }

  bool operator==(const Dataset&) const = default;
};

// ---------------------------------------------------------------------------
// CSV: optional "# lex-dataset name=<n> seed=<s>" line, then the header
// x1..xD,y,z1..zD,split and one row per instance.

inline std::string csv_header(std::size_t dim) {
  std::string h;
  for (std::size_t d = 1; d <= dim; ++d) h += "x" + std::to_string(d) + ",";
  h += "y";
  for (std::size_t d = 1; d <= dim; ++d) h += ",z" + std::to_string(d);
  return h + ",split";
}

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  os << "# lex-dataset name=" << (ds.name.empty() ? "unnamed" : ds.name) << " seed=" << ds.seed << "\n";
  os << csv_header(ds.dim) << "\n";
  char buf[40];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t d = 0; d < ds.dim; ++d) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.row(i)[d]);
      os << buf << ',';
    }
    os << ds.y[i];
    for (std::size_t d = 0; d < ds.dim; ++d) os << ',' << int(ds.mask_row(i)[d]);
    os << ',' << to_string(ds.split[i]) << "\n";
  }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write dataset " + path);
  write_dataset(os, ds);
  if (!os) throw IoError("failed writing dataset " + path);
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, std::size_t line, const std::string& field) {
  if (s.empty()) throw ParseError("empty numeric field", line, field);
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw ParseError("not a number: '" + s + "'", line, field);
  return v;
}

inline int parse_binary(const std::string& s, std::size_t line, const std::string& field) {
  if (s == "0") return 0;
  if (s == "1") return 1;
  throw ParseError("expected 0 or 1, got '" + s + "'", line, field);
}

}  // namespace detail

/// Parses the CSV format. `expected_dim` of 0 accepts any width.
inline Dataset read_dataset(std::istream& is, std::size_t expected_dim = 0) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::size_t ncols = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string tok;
      while (meta >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "name") ds.name = val;
        if (key == "seed") ds.seed = std::strtoull(val.c_str(), nullptr, 10);
      }
      continue;
    }
    auto fields = detail::split_csv(line);
    if (!have_header) {
      if (fields.size() < 4 || fields.size() % 2 != 0)
        throw ParseError("header must be x1..xD,y,z1..zD,split", lineno);
      ds.dim = (fields.size() - 2) / 2;
      if (line != csv_header(ds.dim)) throw ParseError("header must be " + csv_header(ds.dim), lineno);
      if (expected_dim && ds.dim != expected_dim)
        throw ParseError("expected " + std::to_string(expected_dim) + " feature columns, found " +
                             std::to_string(ds.dim),
                         lineno);
      ncols = fields.size();
      have_header = true;
      continue;
    }
    if (fields.size() != ncols)
      throw ParseError("expected " + std::to_string(ncols) + " fields, found " + std::to_string(fields.size()), lineno);
    std::vector<double> x(ds.dim);
    std::vector<std::uint8_t> z(ds.dim);
    for (std::size_t d = 0; d < ds.dim; ++d) x[d] = detail::parse_double(fields[d], lineno, "x" + std::to_string(d + 1));
    int y = detail::parse_binary(fields[ds.dim], lineno, "y");
    for (std::size_t d = 0; d < ds.dim; ++d)
      z[d] = static_cast<std::uint8_t>(detail::parse_binary(fields[ds.dim + 1 + d], lineno, "z" + std::to_string(d + 1)));
    Split s;
    try {
      s = split_from_string(fields.back());
    } catch (const ConfigError&) {
      throw ParseError("unknown split '" + fields.back() + "'", lineno, "split");
    }
    ds.push_back(x.data(), y, z.data(), s);
  }
  if (!have_header) throw ParseError("missing header line", lineno);
  return ds;
}

inline Dataset load_dataset(const std::string& path, std::size_t expected_dim = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read dataset " + path);
  return read_dataset(is, expected_dim);
}

}  // namespace lex
