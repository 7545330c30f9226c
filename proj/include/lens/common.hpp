#pragma once

// Shared numeric core: row-major f64 matrices, error taxonomy, seeded RNG
// helpers and the FNV-1a checksum used by the binary file formats.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lens {

// Exit-code mapping: UsageError -> 1, DataError -> 2, NumericError -> 3.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles. The reference path computes everything
// in 64-bit; 32-bit floats appear only in the embedding file format.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {a.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {a.data() + i * cols, cols}; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool finite() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// c = a * b
inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw NumericError("matmul: shape mismatch");
    Mat c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.a.data() + k * b.cols;
            double* crow = c.a.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

// c = a * b^T
inline Mat matmul_nt(const Mat& a, const Mat& b) {
    if (a.cols != b.cols) throw NumericError("matmul_nt: shape mismatch");
    Mat c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.rows; ++j) {
            double s = 0.0;
            const double* ar = a.a.data() + i * a.cols;
            const double* br = b.a.data() + j * b.cols;
            for (std::size_t k = 0; k < a.cols; ++k) s += ar[k] * br[k];
            c(i, j) = s;
        }
    }
    return c;
}

// c = a^T * b
inline Mat matmul_tn(const Mat& a, const Mat& b) {
    if (a.rows != b.rows) throw NumericError("matmul_tn: shape mismatch");
    Mat c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* ar = a.a.data() + k * a.cols;
        const double* br = b.a.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = ar[i];
            if (aki == 0.0) continue;
            double* crow = c.a.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * br[j];
        }
    }
    return c;
}

inline void add_inplace(Mat& a, const Mat& b) {
    if (!a.same_shape(b)) throw NumericError("add: shape mismatch");
    for (std::size_t i = 0; i < a.a.size(); ++i) a.a[i] += b.a[i];
}

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline double squared_distance(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

// Seeded generator. All stochastic choices in the library flow through
// mt19937_64 so a fixed seed reproduces runs bit-for-bit on one platform.
inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline Mat random_normal_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                double stddev) {
    Mat m(rows, cols);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : m.a) v = dist(rng);
    return m;
}

// FNV-1a 64-bit, used as the trailing checksum of embedding files.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace lens
