#pragma once

// Supervised homogenization records, normalization, and the dataset file format.
//
// File layout: a version line "# vdmn-dataset v1", a CSV header, then one row
// per record with c1 (6), c2 (6), ch (6) in distinct-entry order
// (11, 22, 33, 12, 13, 23), member_id, scale, split (train|val|test).

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vdmn/riemannian.hpp"

namespace vdmn {

struct HomogTriplet {
  Stiffness c1, c2, ch;
  int member_id = 0;
  double scale = 1.0;  // physical = normalized * scale
};

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val" || s == "validation") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

struct Dataset {
  std::vector<HomogTriplet> train, val, test;

  const std::vector<HomogTriplet>& get(Split s) const {
    return s == Split::train ? train : s == Split::val ? val : test;
  }
  std::size_t size() const { return train.size() + val.size() + test.size(); }
};

/// Divides all three stiffnesses by phase-1 C11; scale accumulates the factor.
inline HomogTriplet normalize(const HomogTriplet& t) {
  const double s = t.c1(0, 0);
  if (!(s > 0.0)) throw DegenerateInputError("normalization needs C1_11 > 0");
  HomogTriplet r = t;
  if (s == 1.0) return r;
  r.c1 = t.c1 * (1.0 / s);
  r.c2 = t.c2 * (1.0 / s);
  r.ch = t.ch * (1.0 / s);
  r.scale = t.scale * s;
  return r;
}

inline GaussianStiffness denormalize(const GaussianStiffness& g, double scale) {
  return {g.mean * scale, g.cov * (scale * scale)};
}

inline HomogTriplet denormalize(const HomogTriplet& t) {
  HomogTriplet r = t;
  r.c1 = t.c1 * t.scale;
  r.c2 = t.c2 * t.scale;
  r.ch = t.ch * t.scale;
  r.scale = 1.0;
  return r;
}

inline constexpr const char* kDatasetHeader = "# vdmn-dataset v1";

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_dataset(const Dataset& d, std::ostream& os) {
  os << kDatasetHeader << '\n';
  const char* groups[] = {"c1", "c2", "ch"};
  for (const char* g : groups)
    for (int p = 0; p < 6; ++p) os << g << '_' << (kSymNames[p] + 1) << ',';
  os << "member_id,scale,split\n";
  for (Split s : {Split::train, Split::val, Split::test})
    for (const auto& t : d.get(s)) {
      for (const Stiffness* m : {&t.c1, &t.c2, &t.ch})
        for (double x : m->c) os << format_double(x) << ',';
      os << t.member_id << ',' << format_double(t.scale) << ',' << to_string(s) << '\n';
    }
}

inline void write_dataset(const Dataset& d, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write dataset file " + path);
  write_dataset(d, os);
}

inline Dataset read_dataset(std::istream& is) {
  Dataset d;
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(is, line) || line != kDatasetHeader) throw ParseError("missing dataset version header", 0);
  offset += line.size() + 1;
  if (!std::getline(is, line)) throw ParseError("missing dataset column header", offset);
  offset += line.size() + 1;
  while (std::getline(is, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 21) throw ParseError("dataset row has " + std::to_string(f.size()) + " fields, expected 21", offset);
    HomogTriplet t;
    try {
      for (int p = 0; p < 6; ++p) {
        t.c1.c[p] = std::stod(f[p]);
        t.c2.c[p] = std::stod(f[6 + p]);
        t.ch.c[p] = std::stod(f[12 + p]);
      }
      t.member_id = std::stoi(f[18]);
      t.scale = std::stod(f[19]);
    } catch (const std::exception&) {
      throw ParseError("malformed number in dataset row", offset);
    }
    switch (parse_split(f[20])) {
      case Split::train: d.train.push_back(t); break;
      case Split::val: d.val.push_back(t); break;
      case Split::test: d.test.push_back(t); break;
    }
    offset += line.size() + 1;
  }
  return d;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open dataset file " + path);
  return read_dataset(is);
}

}  // namespace vdmn
