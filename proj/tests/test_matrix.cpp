#include <cmath>
#include <doctest.h>

#include "sipit/errors.hpp"
#include "sipit/matrix.hpp"

using namespace sipit;

TEST_CASE("matrix construction and accessors") {
    Matrix a(2, 3);
    CHECK(a.rows() == 2);
    CHECK(a.cols() == 3);
    CHECK(a.size() == 6);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(a.at(i, j) == 0.0);
    a.at(1, 2) = 5.0;
    CHECK(a.data()[5] == 5.0);

    Matrix b(2, 2, {1, 2, 3, 4});
    CHECK(b.at(0, 1) == 2.0);
    CHECK(b.at(1, 0) == 3.0);
    CHECK_THROWS_AS(Matrix(2, 2, {1, 2, 3}), ShapeError);
}

TEST_CASE("mat_mul fixed summation order and shapes") {
    Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
    Matrix b(3, 2, {7, 8, 9, 10, 11, 12});
    Matrix c = mat_mul(a, b);
    CHECK(c.rows() == 2);
    CHECK(c.cols() == 2);
    CHECK(c.at(0, 0) == 58.0);
    CHECK(c.at(0, 1) == 64.0);
    CHECK(c.at(1, 0) == 139.0);
    CHECK(c.at(1, 1) == 154.0);
    CHECK_THROWS_AS(mat_mul(a, a), ShapeError);

    // Same inputs, same bits, every time.
    Matrix c2 = mat_mul(a, b);
    CHECK(c == c2);
}

TEST_CASE("elementwise ops and broadcasts") {
    Matrix a(2, 2, {1, 2, 3, 4});
    Matrix b(2, 2, {5, 6, 7, 8});
    CHECK(add(a, b) == Matrix(2, 2, {6, 8, 10, 12}));
    CHECK(sub(b, a) == Matrix(2, 2, {4, 4, 4, 4}));
    CHECK(hadamard(a, b) == Matrix(2, 2, {5, 12, 21, 32}));
    CHECK(scale(a, 2.0) == Matrix(2, 2, {2, 4, 6, 8}));
    CHECK(transpose(a) == Matrix(2, 2, {1, 3, 2, 4}));

    Matrix row(1, 2, {10, 20});
    CHECK(add_row_broadcast(a, row) == Matrix(2, 2, {11, 22, 13, 24}));
    CHECK_THROWS_AS(add(a, Matrix(1, 2)), ShapeError);
    CHECK_THROWS_AS(add_row_broadcast(a, Matrix(1, 3)), ShapeError);
}

TEST_CASE("softmax rows: pinned values and stability") {
    Matrix z(1, 2, {0.0, std::log(3.0)});
    Matrix s = softmax_rows(z);
    CHECK(s.at(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(s.at(0, 1) == doctest::Approx(0.75).epsilon(1e-14));

    // Shift invariance via max subtraction: huge logits stay finite.
    Matrix big(1, 2, {1000.0, 1000.0 + std::log(3.0)});
    Matrix sb = softmax_rows(big);
    CHECK(sb.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(sb.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

    // All-equal rows map to the uniform row; width-1 rows map to exactly 1.
    Matrix eq(1, 4, {7, 7, 7, 7});
    Matrix se = softmax_rows(eq);
    for (std::size_t j = 0; j < 4; ++j) CHECK(se.at(0, j) == 0.25);
    Matrix one(1, 1, {123.0});
    CHECK(softmax_rows(one).at(0, 0) == 1.0);

    // Rows sum to one.
    Matrix r(2, 3, {0.1, -2.0, 3.5, 1.0, 1.0, -1.0});
    Matrix sr = softmax_rows(r);
    for (std::size_t i = 0; i < 2; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 3; ++j) sum += sr.at(i, j);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("row_normalize: pinned values and domain errors") {
    Matrix y(2, 2, {2, 0, 1, 1});
    Matrix n = row_normalize(y);
    CHECK(n.at(0, 0) == 1.0);
    CHECK(n.at(0, 1) == 0.0);
    CHECK(n.at(1, 0) == 0.5);
    CHECK(n.at(1, 1) == 0.5);

    CHECK_THROWS_AS(row_normalize(Matrix(1, 2, {0, 0})), DomainError);
    CHECK_THROWS_AS(row_normalize(Matrix(1, 2, {1, -2})), DomainError);
}

TEST_CASE("layer_norm_rows: pinned two-point row") {
    Matrix x(1, 2, {1.0, -1.0});
    Matrix gamma(1, 2, {1.0, 1.0});
    Matrix beta(1, 2, {0.0, 0.0});
    Matrix out = layer_norm_rows(x, gamma, beta, 1e-5);
    // mean 0, population variance 1: each entry is +-1/sqrt(1 + 1e-5).
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(out.at(0, 0) == doctest::Approx(0.9999950).epsilon(1e-9));
    CHECK(out.at(0, 0) == expected);
    CHECK(out.at(0, 1) == -expected);
}

TEST_CASE("layer_norm_rows: gain, shift, constant rows, stats") {
    Matrix x(2, 3, {1, 2, 3, 5, 5, 5});
    Matrix gamma(1, 3, {2, 2, 2});
    Matrix beta(1, 3, {1, 1, 1});
    Matrix stats;
    Matrix out = layer_norm_rows(x, gamma, beta, 1e-5, &stats);

    // Population variance of (1,2,3) is 2/3.
    const double rsig = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
    CHECK(out.at(0, 0) == doctest::Approx(1.0 - 2.0 * rsig).epsilon(1e-12));
    CHECK(out.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.at(0, 2) == doctest::Approx(1.0 + 2.0 * rsig).epsilon(1e-12));

    // A constant row normalizes to beta (x - mu is identically zero).
    for (std::size_t j = 0; j < 3; ++j) CHECK(out.at(1, j) == 1.0);

    CHECK(stats.rows() == 2);
    CHECK(stats.cols() == 2);
    CHECK(stats.at(0, 0) == doctest::Approx(2.0).epsilon(1e-15));  // mean
    CHECK(stats.at(0, 1) == doctest::Approx(rsig).epsilon(1e-12));
}

TEST_CASE("activations and derivatives") {
    CHECK(apply_activation(0.0, Activation::Tanh) == 0.0);
    CHECK(apply_activation(0.0, Activation::GeluTanh) == 0.0);
    CHECK(apply_activation(1.0, Activation::Tanh) == doctest::Approx(std::tanh(1.0)));
    // gelu(x) ~ x for large positive x, ~0 for large negative x.
    CHECK(apply_activation(6.0, Activation::GeluTanh) == doctest::Approx(6.0).epsilon(1e-6));
    CHECK(std::abs(apply_activation(-6.0, Activation::GeluTanh)) < 1e-6);

    // Derivatives against central differences.
    const double h = 1e-6;
    for (double x : {-1.3, -0.2, 0.0, 0.7, 2.1}) {
        for (auto act : {Activation::Tanh, Activation::GeluTanh}) {
            const double fd =
                (apply_activation(x + h, act) - apply_activation(x - h, act)) / (2 * h);
            CHECK(activation_derivative(x, act) == doctest::Approx(fd).epsilon(1e-6));
        }
    }

    Matrix m(1, 2, {0.0, 1.0});
    Matrix t = activation_map(m, Activation::Tanh);
    CHECK(t.at(0, 0) == 0.0);
    CHECK(t.at(0, 1) == std::tanh(1.0));
}

TEST_CASE("concat, take_row, distances, norms") {
    Matrix a(2, 1, {1, 3});
    Matrix b(2, 2, {2, 9, 4, 9});
    Matrix cc = concat_cols({&a, &b});
    CHECK(cc == Matrix(2, 3, {1, 2, 9, 3, 4, 9}));

    Matrix top(1, 2, {1, 2});
    Matrix bot(2, 2, {3, 4, 5, 6});
    CHECK(concat_rows(top, bot) == Matrix(3, 2, {1, 2, 3, 4, 5, 6}));

    CHECK(take_row(bot, 1) == Matrix(1, 2, {5, 6}));

    Matrix u(1, 2, {0, 0});
    Matrix v(1, 2, {3, 4});
    CHECK(l2_dist_rows(u, 0, v, 0) == 5.0);  // 3-4-5 triangle
    CHECK(dot_rows(v, 0, v, 0) == 25.0);
    CHECK(frobenius(v) == 5.0);
    CHECK(max_abs(Matrix(1, 3, {-7, 2, 5})) == 7.0);
}

TEST_CASE("jacobi eigenvalues") {
    // [[2,1],[1,2]] has eigenvalues 3 and 1.
    auto ev = jacobi_eigenvalues(Matrix(2, 2, {2, 1, 1, 2}));
    REQUIRE(ev.size() == 2);
    CHECK(ev[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(ev[1] == doctest::Approx(1.0).epsilon(1e-12));

    // Diagonal input comes back sorted descending.
    auto dv = jacobi_eigenvalues(Matrix(3, 3, {1, 0, 0, 0, 5, 0, 0, 0, -2}));
    CHECK(dv[0] == doctest::Approx(5.0));
    CHECK(dv[1] == doctest::Approx(1.0));
    CHECK(dv[2] == doctest::Approx(-2.0));

    // Non-symmetric input is symmetrized: [[0,2],[0,0]] -> [[0,1],[1,0]].
    auto sv = jacobi_eigenvalues(Matrix(2, 2, {0, 2, 0, 0}));
    CHECK(sv[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sv[1] == doctest::Approx(-1.0).epsilon(1e-12));

    // Trace and Frobenius norm are preserved on a random symmetric matrix.
    Matrix s(4, 4);
    std::uint64_t st = 1;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            st = st * 6364136223846793005ull + 1442695040888963407ull;
            const double x = static_cast<double>(st >> 11) / 9007199254740992.0 - 0.5;
            s.at(i, j) = s.at(j, i) = x;
        }
    auto rv = jacobi_eigenvalues(s);
    double tr = 0.0, fr2 = 0.0, ev2 = 0.0, evsum = 0.0;
    for (std::size_t i = 0; i < 4; ++i) tr += s.at(i, i);
    for (double x : s.data()) fr2 += x * x;
    for (double l : rv) {
        evsum += l;
        ev2 += l * l;
    }
    CHECK(evsum == doctest::Approx(tr).epsilon(1e-10));
    CHECK(ev2 == doctest::Approx(fr2).epsilon(1e-10));
}

TEST_CASE("checked mode traps non-finite kernel outputs") {
    const bool was = checked_mode();
    set_checked_mode(true);
    Matrix inf_in(1, 1, {std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(scale(inf_in, 1.0), NumericError);
    Matrix nan_in(1, 1, {std::nan("")});
    CHECK_THROWS_AS(check_finite(nan_in, "test"), NumericError);

    set_checked_mode(false);
    CHECK_NOTHROW(scale(inf_in, 1.0));
    set_checked_mode(was);
}
