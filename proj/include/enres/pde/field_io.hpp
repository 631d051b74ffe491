#pragma once

#include <iosfwd>
#include <string>

#include "enres/pde/field_pde.hpp"

namespace enres::pde {

/// CSV dump: "# n=<n> sigma=<sigma>" then n rows of n comma-separated
/// values, row i holding the fixed-x line. Values use round-trip precision.
void write_field_csv(std::ostream& out, const ScalarField2D& field, double sigma);
void write_field_csv(const std::string& path, const ScalarField2D& field, double sigma);

struct FieldDump {
  ScalarField2D field;
  double sigma;
};

/// Throws FormatError on a malformed header or row.
FieldDump read_field_csv(std::istream& in);
FieldDump read_field_csv(const std::string& path);

}  // namespace enres::pde
