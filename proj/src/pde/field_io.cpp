#include "enres/pde/field_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "enres/common/error.hpp"

namespace enres::pde {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_field_csv(std::ostream& out, const ScalarField2D& field, double sigma) {
  const int n = field.grid().n();
  out << "# n=" << n << " sigma=" << format_double(sigma) << '\n';
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j) out << ',';
      out << format_double(field.at(i, j));
    }
    out << '\n';
  }
}

void write_field_csv(const std::string& path, const ScalarField2D& field, double sigma) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_field_csv(out, field, sigma);
}

FieldDump read_field_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("field dump: missing header");
  int n = 0;
  double sigma = 0.0;
  if (std::sscanf(header.c_str(), "# n=%d sigma=%lf", &n, &sigma) != 2) {
    throw FormatError("field dump: bad header '" + header + "'");
  }
  ScalarField2D field{Grid2D(n)};
  std::string line;
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw FormatError("field dump: missing row " + std::to_string(i));
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int j = 0; j < n; ++j) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) {
        throw FormatError("field dump: bad value at row " + std::to_string(i) + " column " + std::to_string(j));
      }
      field.at(i, j) = v;
      p = next;
      if (j + 1 < n) {
        if (p == end || *p != ',') throw FormatError("field dump: short row " + std::to_string(i));
        ++p;
      }
    }
  }
  return {std::move(field), sigma};
}

FieldDump read_field_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_field_csv(in);
}

}  // namespace enres::pde
