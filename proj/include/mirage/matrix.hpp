#ifndef MIRAGE_MATRIX_HPP
#define MIRAGE_MATRIX_HPP

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace mirage {

// Dense row-major matrix of doubles. Deliberately minimal: the model is small
// enough that plain loops beat any BLAS dispatch overhead, and keeping the
// arithmetic in one visible place makes the gradient code auditable.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& at(std::size_t r, std::size_t c) {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    double at(std::size_t r, std::size_t c) const {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    void set_zero() { data_.assign(data_.size(), 0.0); }

    bool same_shape(const Matrix& o) const noexcept {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

    bool operator==(const Matrix& o) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// out = M * x  (M: r x c, x: c, out: r)
inline void matvec(const Matrix& m, const double* x, double* out) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double* row = m.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols(); ++c) acc += row[c] * x[c];
        out[r] = acc;
    }
}

// out = M^T * x  (M: r x c, x: r, out: c). Accumulates column-wise to stay
// cache-friendly on row-major storage.
inline void matvec_transposed(const Matrix& m, const double* x, double* out) {
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double* row = m.row(r);
        const double xr = x[r];
        if (xr == 0.0) continue;
        for (std::size_t c = 0; c < m.cols(); ++c) out[c] += xr * row[c];
    }
}

// acc += scale * (a outer b)
inline void add_outer(Matrix& acc, const double* a, const double* b, double scale = 1.0) {
    for (std::size_t r = 0; r < acc.rows(); ++r) {
        double* row = acc.row(r);
        const double ar = scale * a[r];
        if (ar == 0.0) continue;
        for (std::size_t c = 0; c < acc.cols(); ++c) row[c] += ar * b[c];
    }
}

inline double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm2(const double* a, std::size_t n) {
    return std::sqrt(dot(a, a, n));
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace mirage

#endif  // MIRAGE_MATRIX_HPP
