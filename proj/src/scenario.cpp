#include "ergolq/scenario.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace ergolq {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double parse_double(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    fail(ErrorKind::kConfig, "cannot parse number '" + s + "' in " + where);
  }
  return v;
}

int parse_int(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    fail(ErrorKind::kConfig, "cannot parse integer '" + s + "' in " + where);
  }
  return v;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct CoeffSpec {
  std::string family;
  std::map<std::string, std::string> args;
  int line = 0;
};

CoeffSpec parse_coeff_spec(const std::string& value, int line) {
  CoeffSpec spec;
  spec.line = line;
  std::size_t i = 0;
  const std::string where = "line " + std::to_string(line);
  while (i < value.size() && std::isspace(static_cast<unsigned char>(value[i]))) ++i;
  std::size_t j = i;
  while (j < value.size() && !std::isspace(static_cast<unsigned char>(value[j])) &&
         value[j] != '[')
    ++j;
  spec.family = value.substr(i, j - i);
  i = j;
  while (true) {
    while (i < value.size() && std::isspace(static_cast<unsigned char>(value[i]))) ++i;
    if (i >= value.size()) break;
    std::string key;
    if (value[i] == '[') {
      key = "base";
    } else {
      const std::size_t eq = value.find('=', i);
      require(eq != std::string::npos, ErrorKind::kConfig,
              "expected key=value in coefficient on " + where);
      key = trim(value.substr(i, eq - i));
      i = eq + 1;
      while (i < value.size() && std::isspace(static_cast<unsigned char>(value[i]))) ++i;
    }
    std::string val;
    if (i < value.size() && value[i] == '[') {
      const std::size_t close = value.find(']', i);
      require(close != std::string::npos, ErrorKind::kConfig, "unterminated matrix on " + where);
      val = value.substr(i, close - i + 1);
      i = close + 1;
    } else {
      std::size_t k = i;
      while (k < value.size() && !std::isspace(static_cast<unsigned char>(value[k]))) ++k;
      val = value.substr(i, k - i);
      i = k;
    }
    require(!key.empty() && !spec.args.count(key), ErrorKind::kConfig,
            "empty or repeated parameter '" + key + "' on " + where);
    spec.args[key] = val;
  }
  return spec;
}

CoefficientFn build_coeff(const std::string& name, const CoeffSpec& spec, double tau) {
  const std::string where = name + " (line " + std::to_string(spec.line) + ")";
  auto take = [&](const char* key) -> const std::string* {
    auto it = spec.args.find(key);
    return it == spec.args.end() ? nullptr : &it->second;
  };
  auto allow = [&](std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : spec.args) {
      bool ok = false;
      for (const char* a : keys) ok = ok || k == a;
      require(ok, ErrorKind::kConfig, "unknown parameter '" + k + "' for " + where);
    }
  };
  const std::string* base_s = take("base");
  require(base_s != nullptr, ErrorKind::kConfig, "missing base for " + where);
  CoeffParams p;
  p.base = parse_matrix(*base_s);
  p.amp = Mat::Zero(p.base.rows(), p.base.cols());
  p.tau = tau;
  if (spec.family == "constant") {
    allow({"base"});
    p.family = CoeffParams::Family::kConstant;
    p.tau = 1.0;
  } else if (spec.family == "sine") {
    allow({"base", "amp", "freq", "shift"});
    p.family = CoeffParams::Family::kSine;
    if (auto* s = take("amp")) p.amp = parse_matrix(*s);
    if (auto* s = take("freq")) p.freq = parse_int(*s, where);
    if (auto* s = take("shift")) p.shift = parse_double(*s, where);
  } else if (spec.family == "tanh") {
    allow({"base", "amp", "gain"});
    p.family = CoeffParams::Family::kTanh;
    p.tau = 1.0;
    if (auto* s = take("amp")) p.amp = parse_matrix(*s);
    if (auto* s = take("gain")) p.gain = parse_double(*s, where);
  } else {
    fail(ErrorKind::kConfig, "unknown coefficient family '" + spec.family + "' for " + where);
  }
  try {
    return CoefficientFn::from_params(p).relabeled(name);
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, std::string(e.what()) + " for " + where);
  }
}

std::string serialize_coeff(const CoefficientFn& f, const char* name) {
  require(f.params().has_value(), ErrorKind::kConfig,
          std::string("coefficient ") + name + " has no declarative form");
  const CoeffParams& p = *f.params();
  std::string out = std::string(name) + " = ";
  switch (p.family) {
    case CoeffParams::Family::kConstant:
      out += "constant base=" + format_matrix(p.base);
      break;
    case CoeffParams::Family::kSine:
      out += "sine base=" + format_matrix(p.base) + " amp=" + format_matrix(p.amp) +
             " freq=" + std::to_string(p.freq) + " shift=" + fmt(p.shift);
      break;
    case CoeffParams::Family::kTanh:
      out += "tanh base=" + format_matrix(p.base) + " amp=" + format_matrix(p.amp) +
             " gain=" + fmt(p.gain);
      break;
  }
  return out + "\n";
}

}  // namespace

std::string format_matrix(const Mat& m) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (i) out += "; ";
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ", ";
      out += fmt(m(i, j));
    }
  }
  return out + "]";
}

Mat parse_matrix(const std::string& raw) {
  const std::string s = trim(raw);
  require(s.size() >= 2 && s.front() == '[' && s.back() == ']', ErrorKind::kConfig,
          "matrix must be written as [a, b; c, d], got '" + s + "'");
  std::vector<std::vector<double>> rows;
  std::stringstream rs(s.substr(1, s.size() - 2));
  std::string row;
  while (std::getline(rs, row, ';')) {
    std::vector<double> vals;
    std::stringstream cs(row);
    std::string cell;
    while (std::getline(cs, cell, ',')) vals.push_back(parse_double(cell, "matrix " + s));
    rows.push_back(std::move(vals));
  }
  require(!rows.empty() && !rows[0].empty(), ErrorKind::kConfig, "empty matrix '" + s + "'");
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].size() == rows[0].size(), ErrorKind::kConfig, "ragged matrix '" + s + "'");
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

PeriodicCoefficientSet parse_scenario(const std::string& text) {
  std::map<std::string, std::string> scalars;
  std::map<std::string, CoeffSpec> coeffs;
  static const char* kCoeffNames[] = {"A", "B", "C",  "b", "sigma", "Q",
                                      "S", "R", "q", "rho", "stabilizer"};
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::kConfig,
            "line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool is_coeff = false;
    for (const char* c : kCoeffNames) is_coeff = is_coeff || key == c;
    if (is_coeff) {
      require(!coeffs.count(key), ErrorKind::kConfig, "coefficient " + key + " given twice");
      coeffs[key] = parse_coeff_spec(value, lineno);
    } else if (key == "name" || key == "tau" || key == "n" || key == "m") {
      require(!scalars.count(key), ErrorKind::kConfig, "key " + key + " given twice");
      scalars[key] = value;
    } else {
      fail(ErrorKind::kConfig, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  for (const char* k : {"tau", "n", "m"}) {
    require(scalars.count(k), ErrorKind::kConfig, std::string("scenario is missing '") + k + "'");
  }
  PeriodicCoefficientSet set;
  set.name = scalars.count("name") ? scalars["name"] : "unnamed";
  set.tau = parse_double(scalars["tau"], "tau");
  set.n = parse_int(scalars["n"], "n");
  set.m = parse_int(scalars["m"], "m");
  require(set.tau > 0.0 && set.n >= 1 && set.m >= 1, ErrorKind::kConfig,
          "tau, n and m must be positive");
  auto get = [&](const char* key, Eigen::Index r, Eigen::Index c, bool required) {
    if (coeffs.count(key)) return build_coeff(key, coeffs[key], set.tau);
    require(!required, ErrorKind::kConfig, std::string("scenario is missing coefficient ") + key);
    return CoefficientFn::zeros(r, c).relabeled(key);
  };
  set.A = get("A", set.n, set.n, true);
  set.B = get("B", set.n, set.m, true);
  set.C = get("C", set.n, set.n, true);
  set.b = get("b", set.n, 1, false);
  set.sigma = get("sigma", set.n, 1, false);
  set.Q = get("Q", set.n, set.n, true);
  set.S = get("S", set.m, set.n, false);
  set.R = get("R", set.m, set.m, true);
  set.q = get("q", set.n, 1, false);
  set.rho = get("rho", set.m, 1, false);
  if (coeffs.count("stabilizer")) {
    set.stabilizer = build_coeff("stabilizer", coeffs["stabilizer"], set.tau);
  }
  try {
    set.validate_shapes();
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, std::string("invalid scenario: ") + e.what());
  }
  return set;
}

std::string serialize_scenario(const PeriodicCoefficientSet& set) {
  std::string out;
  out += "name = " + set.name + "\n";
  out += "tau = " + fmt(set.tau) + "\n";
  out += "n = " + std::to_string(set.n) + "\n";
  out += "m = " + std::to_string(set.m) + "\n";
  out += serialize_coeff(set.A, "A");
  out += serialize_coeff(set.B, "B");
  out += serialize_coeff(set.C, "C");
  out += serialize_coeff(set.b, "b");
  out += serialize_coeff(set.sigma, "sigma");
  out += serialize_coeff(set.Q, "Q");
  out += serialize_coeff(set.S, "S");
  out += serialize_coeff(set.R, "R");
  out += serialize_coeff(set.q, "q");
  out += serialize_coeff(set.rho, "rho");
  if (set.stabilizer) out += serialize_coeff(*set.stabilizer, "stabilizer");
  return out;
}

PeriodicCoefficientSet load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kConfig, "cannot open scenario file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

PeriodicCoefficientSet resolve_scenario(const std::string& name_or_path) {
  for (const auto& n : catalog_names()) {
    if (n == name_or_path) return builtin_scenario(n);
  }
  if (std::filesystem::is_regular_file(name_or_path)) return load_scenario_file(name_or_path);
  std::string known;
  for (const auto& n : catalog_names()) known += (known.empty() ? "" : ", ") + n;
  fail(ErrorKind::kConfig,
       "unknown scenario '" + name_or_path + "' (catalog: " + known + "; or a file path)");
}

std::vector<std::string> catalog_names() {
  return {"scalar-constant", "scalar-noisy", "scalar-random-periodic",
          "planar-deterministic-periodic"};
}

PeriodicCoefficientSet builtin_scenario(const std::string& name) {
  // Catalog entries are written in the scenario file format so that every
  // built-in is also a round-trip fixture.
  std::string text;
  if (name == "scalar-constant") {
    text = R"(name = scalar-constant
tau = 1
n = 1
m = 1
A = constant [-1]
B = constant [1]
C = constant [0]
b = constant [1]
sigma = constant [1]
Q = constant [1]
R = constant [1]
stabilizer = constant [-1]
)";
  } else if (name == "scalar-noisy") {
    text = R"(name = scalar-noisy
tau = 1
n = 1
m = 1
A = constant [-1]
B = constant [1]
C = constant [1]
b = constant [0.5]
sigma = constant [0.5]
Q = constant [1]
R = constant [1]
stabilizer = constant [-1]
)";
  } else if (name == "scalar-random-periodic") {
    text = R"(name = scalar-random-periodic
tau = 1
n = 1
m = 1
A = tanh base=[-1] amp=[0.3] gain=1
B = tanh base=[1] amp=[0.25] gain=1
C = tanh base=[0.4] amp=[0.2] gain=1
b = tanh base=[0.5] amp=[0.5] gain=1
sigma = tanh base=[0.8] amp=[0.2] gain=1
Q = tanh base=[1] amp=[0.5] gain=1
S = constant [0.2]
R = constant [1]
q = tanh base=[0] amp=[0.2] gain=1
rho = constant [0.1]
stabilizer = constant [0]
)";
  } else if (name == "planar-deterministic-periodic") {
    text = R"(name = planar-deterministic-periodic
tau = 1
n = 2
m = 1
A = sine base=[-1, 0.5; -0.5, -1.5] amp=[0.3, 0; 0, -0.3] freq=1 shift=0
B = constant [0; 1]
C = constant [0.2, 0; 0, 0.2]
b = constant [0.5; 0]
sigma = constant [0.3; 0.5]
Q = sine base=[1, 0; 0, 1] amp=[0.5, 0; 0, 0] freq=1 shift=0
R = constant [1]
q = constant [0.1; 0]
stabilizer = constant [0, 0]
)";
  } else {
    std::string known;
    for (const auto& n : catalog_names()) known += (known.empty() ? "" : ", ") + n;
    fail(ErrorKind::kConfig, "unknown scenario '" + name + "' (catalog: " + known + ")");
  }
  return parse_scenario(text);
}

}  // namespace ergolq
