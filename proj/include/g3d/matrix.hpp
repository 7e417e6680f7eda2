// matrix.hpp - minimal dense row-major matrix plus the binary/JSON
// containers used to move embedding fixtures around.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "g3d/common.hpp"
#include "json.hpp"

namespace g3d {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
    }
};

// A·Bᵀ
inline Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw Error("matmul_transposed: inner dimension mismatch");
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.rows; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(j, k);
            out.at(i, j) = s;
        }
    }
    return out;
}

// Binary container: magic, shape header, row-major little-endian doubles.
inline void save_matrix(const Matrix& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write matrix file: " + path);
    out.write("G3DM", 4);
    std::uint64_t shape[2] = {m.rows, m.cols};
    out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

inline Matrix load_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open matrix file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "G3DM", 4) != 0) throw Error("bad matrix file magic: " + path);
    std::uint64_t shape[2];
    in.read(reinterpret_cast<char*>(shape), sizeof(shape));
    Matrix m(shape[0], shape[1]);
    in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!in) throw Error("truncated matrix file: " + path);
    return m;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    Matrix m;
    m.rows = j.size();
    for (const auto& row : j) {
        if (m.cols == 0) m.cols = row.size();
        if (row.size() != m.cols) throw Error("matrix_from_json: ragged rows");
        for (const auto& v : row) m.data.push_back(v.get<double>());
    }
    return m;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
        j.push_back(std::move(row));
    }
    return j;
}

}  // namespace g3d
