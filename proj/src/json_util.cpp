#include "tel/json_util.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace tel {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
    json data = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) data.push_back(m(r, c));
    }
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
        throw std::invalid_argument("matrix json: data length does not match rows*cols");
    }
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = data[k++].get<double>();
    }
    return m;
}

json vector_to_json(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Vector vector_from_json(const json& j) {
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

json tensor_to_json(const DenseTensor& t) {
    json data = json::array();
    for (double x : t.data()) data.push_back(x);
    return json{{"shape", t.shape()}, {"data", std::move(data)}};
}

DenseTensor tensor_from_json(const json& j) {
    return DenseTensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

std::string format_double(double value) {
    if (!std::isfinite(value)) throw std::domain_error("cannot serialize non-finite number");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

namespace {

void dump_to(const json& j, std::string& out) {
    switch (j.type()) {
    case json::value_t::object: {
        out += '{';
        bool first = true;
        // nlohmann::json objects are std::map-backed, so iteration is key-sorted.
        for (const auto& [key, value] : j.items()) {
            if (!first) out += ',';
            first = false;
            out += json(key).dump();
            out += ':';
            dump_to(value, out);
        }
        out += '}';
        break;
    }
    case json::value_t::array: {
        out += '[';
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (i) out += ',';
            dump_to(j[i], out);
        }
        out += ']';
        break;
    }
    case json::value_t::number_float:
        out += format_double(j.get<double>());
        break;
    default:
        out += j.dump(-1, ' ', false, json::error_handler_t::strict);
        break;
    }
}

} // namespace

std::string canonical_dump(const json& j) {
    std::string out;
    dump_to(j, out);
    return out;
}

} // namespace tel
