#include "sipit/matrix.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>

#include "sipit/errors.hpp"

namespace sipit {

namespace {

std::atomic<bool> g_checked{true};

void require(bool ok, const char* msg) {
    if (!ok) throw ShapeError(msg);
}

}  // namespace

bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }

void set_checked_mode(bool on) { g_checked.store(on, std::memory_order_relaxed); }

void check_finite(const Matrix& m, const char* where) {
    if (!checked_mode()) return;
    for (double v : m.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value in ") + where);
        }
    }
}

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ShapeError("matrix: data size != rows*cols");
}

double apply_activation(double x, Activation a) {
    switch (a) {
        case Activation::Tanh:
            return std::tanh(x);
        case Activation::GeluTanh: {
            const double k = std::sqrt(2.0 / M_PI);
            double t = std::tanh(k * (x + 0.044715 * x * x * x));
            return 0.5 * x * (1.0 + t);
        }
    }
    throw DomainError("unknown activation");
}

double activation_derivative(double x, Activation a) {
    switch (a) {
        case Activation::Tanh: {
            double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case Activation::GeluTanh: {
            const double k = std::sqrt(2.0 / M_PI);
            double u = k * (x + 0.044715 * x * x * x);
            double t = std::tanh(u);
            double du = k * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        }
    }
    throw DomainError("unknown activation");
}

Matrix mat_mul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "mat_mul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = ai[k];
            const double* bk = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
        }
    }
    check_finite(c, "mat_mul");
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require(a.same_shape(b), "add: shape mismatch");
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
    check_finite(c, "add");
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require(a.same_shape(b), "sub: shape mismatch");
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
    check_finite(c, "sub");
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require(a.same_shape(b), "hadamard: shape mismatch");
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
    check_finite(c, "hadamard");
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * s;
    check_finite(c, "scale");
    return c;
}

Matrix add_row_broadcast(const Matrix& x, const Matrix& row) {
    require(row.rows() == 1 && row.cols() == x.cols(), "add_row_broadcast: row shape");
    Matrix c(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) c.at(i, j) = x.at(i, j) + row.at(0, j);
    check_finite(c, "add_row_broadcast");
    return c;
}

Matrix activation_map(const Matrix& a, Activation act) {
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = apply_activation(a.data()[i], act);
    check_finite(c, "activation");
    return c;
}

Matrix softmax_rows(const Matrix& z) {
    require(z.cols() >= 1, "softmax_rows: empty rows");
    Matrix out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const double* zi = z.row_ptr(i);
        double m = zi[0];
        for (std::size_t j = 1; j < z.cols(); ++j)
            if (zi[j] > m) m = zi[j];
        double sum = 0.0;
        double* oi = out.row_ptr(i);
        for (std::size_t j = 0; j < z.cols(); ++j) {
            oi[j] = std::exp(zi[j] - m);
            sum += oi[j];
        }
        for (std::size_t j = 0; j < z.cols(); ++j) oi[j] /= sum;
    }
    check_finite(out, "softmax_rows");
    return out;
}

Matrix row_normalize(const Matrix& y) {
    Matrix out(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
        const double* yi = y.row_ptr(i);
        double sum = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) sum += yi[j];
        if (!(sum > 0.0)) throw DomainError("row_normalize: nonpositive row sum");
        double* oi = out.row_ptr(i);
        for (std::size_t j = 0; j < y.cols(); ++j) oi[j] = yi[j] / sum;
    }
    check_finite(out, "row_normalize");
    return out;
}

Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps,
                       Matrix* stats) {
    require(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm: gamma shape");
    require(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm: beta shape");
    if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
    const std::size_t d = x.cols();
    Matrix out(x.rows(), d);
    if (stats) *stats = Matrix(x.rows(), 2);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* xi = x.row_ptr(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xi[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = xi[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        double* oi = out.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j)
            oi[j] = gamma.at(0, j) * ((xi[j] - mean) * inv) + beta.at(0, j);
        if (stats) {
            stats->at(i, 0) = mean;
            stats->at(i, 1) = inv;
        }
    }
    check_finite(out, "layer_norm");
    return out;
}

Matrix concat_cols(const std::vector<const Matrix*>& parts) {
    require(!parts.empty(), "concat_cols: no parts");
    std::size_t rows = parts[0]->rows(), cols = 0;
    for (const Matrix* p : parts) {
        require(p->rows() == rows, "concat_cols: row mismatch");
        cols += p->cols();
    }
    Matrix c(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double* ci = c.row_ptr(i);
        std::size_t off = 0;
        for (const Matrix* p : parts) {
            const double* pi = p->row_ptr(i);
            for (std::size_t j = 0; j < p->cols(); ++j) ci[off + j] = pi[j];
            off += p->cols();
        }
    }
    return c;
}

Matrix concat_rows(const Matrix& top, const Matrix& bottom) {
    if (top.rows() == 0) return bottom;
    require(top.cols() == bottom.cols(), "concat_rows: col mismatch");
    Matrix c(top.rows() + bottom.rows(), top.cols());
    for (std::size_t i = 0; i < top.size(); ++i) c.data()[i] = top.data()[i];
    for (std::size_t i = 0; i < bottom.size(); ++i) c.data()[top.size() + i] = bottom.data()[i];
    return c;
}

Matrix take_row(const Matrix& a, std::size_t i) {
    require(i < a.rows(), "take_row: index out of range");
    Matrix r(1, a.cols());
    for (std::size_t j = 0; j < a.cols(); ++j) r.at(0, j) = a.at(i, j);
    return r;
}

double dot_rows(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
    require(a.cols() == b.cols() && i < a.rows() && j < b.rows(), "dot_rows: shape");
    const double* ai = a.row_ptr(i);
    const double* bj = b.row_ptr(j);
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
    return s;
}

double l2_dist_rows(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
    require(a.cols() == b.cols() && i < a.rows() && j < b.rows(), "l2_dist_rows: shape");
    const double* ai = a.row_ptr(i);
    const double* bj = b.row_ptr(j);
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) {
        double d = ai[k] - bj[k];
        s += d * d;
    }
    return std::sqrt(s);
}

double frobenius(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

std::vector<double> jacobi_eigenvalues(Matrix a, double tol, int max_sweeps) {
    require(a.rows() == a.cols(), "jacobi: matrix not square");
    const std::size_t n = a.rows();
    // Work on the symmetrized copy; callers pass numerically symmetric input.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double m = 0.5 * (a.at(i, j) + a.at(j, i));
            a.at(i, j) = a.at(j, i) = m;
        }
    double scale_ref = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale_ref = std::max(scale_ref, std::abs(a.at(i, i)));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) scale_ref = std::max(scale_ref, std::abs(a.at(i, j)));
    if (scale_ref == 0.0) scale_ref = 1.0;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off = std::max(off, std::abs(a.at(i, j)));
        if (off <= tol * scale_ref) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a.at(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a.at(i, i);
    std::sort(eig.begin(), eig.end(), std::greater<double>());
    return eig;
}

}  // namespace sipit
