#pragma once

// Grid function dumps: long-format CSV and a flat binary layout.

#include "cordes/grid.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace cordes {

struct GridDump {
  Grid grid;
  std::vector<CVector> slices;
};

namespace detail {

inline std::string join(const std::vector<double>& v) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

template <class T>
std::vector<T> split_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v{};
    if (!(is >> v)) throw std::runtime_error("malformed list '" + s + "'");
    out.push_back(v);
  }
  return out;
}

} // namespace detail

/// Header `# n=.. m=a,b nt=.. lo=.. hi=.. T=..`, then `slice,t,x1..xn,re,im` rows.
inline void write_csv(std::ostream& os, const Grid& g, const std::vector<CVector>& slices) {
  os << std::setprecision(17) << "# n=" << g.n << " m=";
  for (std::size_t a = 0; a < g.m.size(); ++a) os << (a ? "," : "") << g.m[a];
  os << " nt=" << g.nt << " lo=" << detail::join(g.box.lo) << " hi=" << detail::join(g.box.hi) << " T=" << g.T << "\n";
  os << "slice,t";
  for (int a = 0; a < g.n; ++a) os << ",x" << a + 1;
  os << ",re,im\n";
  std::vector<double> x(static_cast<std::size_t>(g.n));
  for (std::size_t j = 0; j < slices.size(); ++j)
    for (std::size_t p = 0; p < g.size(); ++p) {
      g.node(p, x);
      os << j << ',' << g.time(static_cast<int>(j));
      for (double c : x) os << ',' << c;
      const auto v = slices[j](static_cast<Eigen::Index>(p));
      os << ',' << v.real() << ',' << v.imag() << '\n';
    }
}

inline GridDump read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw std::runtime_error("missing grid header line");
  std::istringstream hs(line.substr(2));
  std::string tok;
  int n = 0, nt = 0;
  double T = 0.0;
  std::vector<int> m;
  std::vector<double> lo, hi;
  while (hs >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed header token '" + tok + "'");
    const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "n") n = std::stoi(val);
    else if (key == "m") m = detail::split_list<int>(val);
    else if (key == "nt") nt = std::stoi(val);
    else if (key == "lo") lo = detail::split_list<double>(val);
    else if (key == "hi") hi = detail::split_list<double>(val);
    else if (key == "T") T = std::stod(val);
  }
  if (static_cast<int>(lo.size()) != n || static_cast<int>(hi.size()) != n) throw std::runtime_error("header box mismatch");
  GridDump d{build_grid(Box{lo, hi}, m, nt, T), {}};
  std::getline(is, line); // column names
  const auto size = static_cast<Eigen::Index>(d.grid.size());
  std::vector<Eigen::Index> filled;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cols = detail::split_list<double>(line);
    if (cols.size() != static_cast<std::size_t>(n + 4)) throw std::runtime_error("malformed data row");
    const auto j = static_cast<std::size_t>(cols[0]);
    if (j >= d.slices.size()) {
      d.slices.resize(j + 1, CVector::Zero(size));
      filled.resize(j + 1, 0);
    }
    if (filled[j] == size) throw std::runtime_error("too many rows for slice");
    d.slices[j](filled[j]++) = Complex(cols[static_cast<std::size_t>(n + 2)], cols[static_cast<std::size_t>(n + 3)]);
  }
  for (auto f : filled)
    if (f != size) throw std::runtime_error("incomplete slice in grid dump");
  return d;
}

inline constexpr char kBinaryMagic[4] = {'C', 'D', 'G', 'F'};

inline void write_binary(std::ostream& os, const Grid& g, const std::vector<CVector>& slices) {
  auto put = [&](const auto& v) { os.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  os.write(kBinaryMagic, 4);
  put(std::uint32_t{1});
  put(static_cast<std::int32_t>(g.n));
  for (int v : g.m) put(static_cast<std::int32_t>(v));
  put(static_cast<std::int32_t>(g.nt));
  for (double v : g.box.lo) put(v);
  for (double v : g.box.hi) put(v);
  put(g.T);
  put(static_cast<std::uint64_t>(slices.size()));
  for (const auto& s : slices)
    for (Eigen::Index p = 0; p < s.size(); ++p) {
      put(s(p).real());
      put(s(p).imag());
    }
}

inline GridDump read_binary(std::istream& is) {
  auto get = [&](auto& v) {
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) throw std::runtime_error("truncated grid dump");
  };
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kBinaryMagic, 4) != 0) throw std::runtime_error("not a grid dump");
  std::uint32_t version = 0;
  get(version);
  if (version != 1) throw std::runtime_error("unsupported grid dump version");
  std::int32_t n = 0, nt = 0;
  get(n);
  if (n < 1 || n > 16) throw std::runtime_error("bad dimension in grid dump");
  std::vector<int> m(static_cast<std::size_t>(n));
  for (auto& v : m) {
    std::int32_t x = 0;
    get(x);
    v = x;
  }
  get(nt);
  std::vector<double> lo(static_cast<std::size_t>(n)), hi(static_cast<std::size_t>(n));
  for (auto& v : lo) get(v);
  for (auto& v : hi) get(v);
  double T = 0.0;
  get(T);
  std::uint64_t count = 0;
  get(count);
  GridDump d{build_grid(Box{lo, hi}, m, nt, T), {}};
  const auto size = static_cast<Eigen::Index>(d.grid.size());
  for (std::uint64_t j = 0; j < count; ++j) {
    CVector s(size);
    for (Eigen::Index p = 0; p < size; ++p) {
      double re = 0.0, im = 0.0;
      get(re);
      get(im);
      s(p) = Complex(re, im);
    }
    d.slices.push_back(std::move(s));
  }
  return d;
}

} // namespace cordes
