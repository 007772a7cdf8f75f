#pragma once

#include "tel/tensor.hpp"

#include <json.hpp>

#include <string>

namespace tel {

// {"rows":r,"cols":c,"data":[column-major]}
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

nlohmann::json tensor_to_json(const DenseTensor& t);
DenseTensor tensor_from_json(const nlohmann::json& j);

// Canonical serialization: UTF-8, object keys sorted, no whitespace,
// floating-point values printed with 17 significant digits. A pure function
// of the value, so equal documents produce equal bytes.
std::string canonical_dump(const nlohmann::json& j);

// %.17g
std::string format_double(double value);

} // namespace tel
