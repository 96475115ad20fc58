#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace sipit {

// Dense row-major matrix of 64-bit floats. Every kernel below fixes its
// summation order (row-major, left-to-right), so identical inputs produce
// identical bits on every run — the whole test suite leans on that.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& at(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
    const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

// Checked mode scans kernel outputs for NaN/Inf and throws NumericError.
// On by default; the CLI may disable it from config unless SIPIT_CHECKED=1.
bool checked_mode();
void set_checked_mode(bool on);
void check_finite(const Matrix& m, const char* where);

enum class Activation : std::uint32_t { Tanh = 0, GeluTanh = 1 };

double apply_activation(double x, Activation a);
double activation_derivative(double x, Activation a);

// a(r×k) * b(k×c); per output element the k-sum runs left to right.
Matrix mat_mul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
// x(T×n) + row(1×n) broadcast over rows.
Matrix add_row_broadcast(const Matrix& x, const Matrix& row);
Matrix activation_map(const Matrix& a, Activation act);

// Row-wise stable softmax (max subtraction). Rows of all-equal entries map
// to the uniform row; a width-1 row maps to exactly 1.0.
Matrix softmax_rows(const Matrix& z);

// Divides each row by its sum; throws DomainError if any row sum is <= 0.
Matrix row_normalize(const Matrix& y);

// Row-wise layer norm with population variance: gamma ⊙ (x−μ)/√(σ²+ε) + β.
// gamma/beta are 1×d. If stats != nullptr it receives T×2 (mean, 1/√(σ²+ε)),
// which the backward pass reuses.
Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps,
                       Matrix* stats = nullptr);

Matrix concat_cols(const std::vector<const Matrix*>& parts);
Matrix concat_rows(const Matrix& top, const Matrix& bottom);
Matrix take_row(const Matrix& a, std::size_t i);

double dot_rows(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j);
double l2_dist_rows(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j);
double frobenius(const Matrix& a);
double max_abs(const Matrix& a);

// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations, sorted
// descending. Sized for the Hessian witness check (p of order 10²).
std::vector<double> jacobi_eigenvalues(Matrix a, double tol = 1e-14, int max_sweeps = 100);

}  // namespace sipit
