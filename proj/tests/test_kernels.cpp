#include <doctest.h>

#include <cmath>
#include <vector>

#include "elm/kernels.hpp"
#include "elm/rng.hpp"

using namespace elm;

namespace {

std::vector<real> random_vec(std::size_t n, Rng& rng) {
    std::vector<real> v(n);
    for (auto& x : v) x = static_cast<real>(rng.uniform(-1, 1));
    return v;
}

double max_abs_diff(const std::vector<real>& a, const std::vector<real>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

}  // namespace

TEST_CASE("omp matmul family matches the serial reference") {
    Rng rng(7);
    const int dims[3][3] = {{3, 4, 5}, {17, 33, 9}, {64, 64, 64}};
    for (const auto& d : dims) {
        const int m = d[0], k = d[1], n = d[2];
        auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
        auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
        std::vector<real> c1(static_cast<std::size_t>(m) * n), c2(c1.size());
        kern::matmul(a.data(), b.data(), c1.data(), m, k, n);
        kern::ref::matmul(a.data(), b.data(), c2.data(), m, k, n);
        CHECK(max_abs_diff(c1, c2) < 1e-12);

        auto bt = random_vec(static_cast<std::size_t>(n) * k, rng);
        std::vector<real> d1(static_cast<std::size_t>(m) * n), d2(d1.size());
        kern::matmul_nt(a.data(), bt.data(), d1.data(), m, k, n);
        kern::ref::matmul_nt(a.data(), bt.data(), d2.data(), m, k, n);
        CHECK(max_abs_diff(d1, d2) < 1e-12);

        auto g = random_vec(static_cast<std::size_t>(m) * n, rng);
        std::vector<real> e1(static_cast<std::size_t>(k) * n), e2(e1.size());
        kern::matmul_tn(a.data(), g.data(), e1.data(), m, k, n);
        kern::ref::matmul_tn(a.data(), g.data(), e2.data(), m, k, n);
        CHECK(max_abs_diff(e1, e2) < 1e-12);
    }
}

TEST_CASE("matmul is bitwise identical across thread counts") {
    Rng rng(11);
    const int m = 37, k = 29, n = 41;
    auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
    auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
    std::vector<real> c1(static_cast<std::size_t>(m) * n), c4(c1.size());
    const int before = num_threads();
    set_num_threads(1);
    kern::matmul(a.data(), b.data(), c1.data(), m, k, n);
    set_num_threads(4);
    kern::matmul(a.data(), b.data(), c4.data(), m, k, n);
    set_num_threads(before);
    CHECK(c1 == c4);  // exact: row partitioning never changes per-element order
}

TEST_CASE("softmax rows: uniform, stability, reference agreement") {
    // all-zero row -> uniform
    std::vector<real> x = {0, 0, 0, 0};
    std::vector<real> y(4);
    kern::softmax_rows_fwd(x.data(), y.data(), 1, 4);
    for (real v : y) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    // extreme logits stay finite
    std::vector<real> xs = {1000, 0};
    std::vector<real> ys(2);
    kern::softmax_rows_fwd(xs.data(), ys.data(), 1, 2);
    CHECK(ys[0] == doctest::Approx(1.0));
    CHECK(ys[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(static_cast<double>(ys[0])));

    Rng rng(3);
    auto big = random_vec(64 * 33, rng);
    std::vector<real> y1(big.size()), y2(big.size());
    kern::softmax_rows_fwd(big.data(), y1.data(), 64, 33);
    kern::ref::softmax_rows(big.data(), y2.data(), 64, 33);
    CHECK(max_abs_diff(y1, y2) < 1e-13);

    // rows sum to one
    for (int i = 0; i < 64; ++i) {
        real s = 0;
        for (int j = 0; j < 33; ++j) s += y1[static_cast<std::size_t>(i) * 33 + j];
        CHECK(std::abs(static_cast<double>(s) - 1.0) < 1e-12);
    }
}

TEST_CASE("gelu and rmsnorm match references; rms rows normalize") {
    Rng rng(5);
    auto x = random_vec(1000, rng);
    std::vector<real> y1(x.size()), y2(x.size());
    kern::gelu_fwd(x.data(), y1.data(), x.size());
    kern::ref::gelu(x.data(), y2.data(), x.size());
    CHECK(max_abs_diff(y1, y2) == 0.0);

    const int rows = 16, cols = 32;
    auto m = random_vec(static_cast<std::size_t>(rows) * cols, rng);
    std::vector<real> gain(cols, 1);
    std::vector<real> out1(m.size()), out2(m.size()), inv(rows);
    kern::rmsnorm_fwd(m.data(), gain.data(), out1.data(), inv.data(), rows, cols, 1e-12);
    kern::ref::rmsnorm(m.data(), gain.data(), out2.data(), rows, cols, 1e-12);
    CHECK(max_abs_diff(out1, out2) < 1e-13);
    for (int i = 0; i < rows; ++i) {
        double ss = 0;
        for (int j = 0; j < cols; ++j)
            ss += static_cast<double>(out1[static_cast<std::size_t>(i) * cols + j]) *
                  static_cast<double>(out1[static_cast<std::size_t>(i) * cols + j]);
        CHECK(std::abs(std::sqrt(ss / cols) - 1.0) < 1e-9);
    }
}

TEST_CASE("fused attention matches the composed reference") {
    Rng rng(9);
    const int batch = 3, T = 7, dim = 24, heads = 4;
    const std::size_t rows = static_cast<std::size_t>(batch) * T;
    auto q = random_vec(rows * dim, rng);
    auto k = random_vec(rows * dim, rng);
    auto v = random_vec(rows * dim, rng);
    std::vector<real> out1(rows * dim), out2(rows * dim);
    std::vector<real> probs(static_cast<std::size_t>(batch) * heads * T * T);
    for (bool causal : {true, false}) {
        kern::attention_fwd(q.data(), k.data(), v.data(), out1.data(), probs.data(), batch, T,
                            dim, heads, causal);
        kern::ref::attention(q.data(), k.data(), v.data(), out2.data(), batch, T, dim, heads,
                             causal);
        CHECK(max_abs_diff(out1, out2) < 1e-12);
    }
    // causal probabilities: strict upper triangle is exactly zero
    kern::attention_fwd(q.data(), k.data(), v.data(), out1.data(), probs.data(), batch, T, dim,
                        heads, true);
    for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < T; ++i)
                for (int j = i + 1; j < T; ++j)
                    CHECK(probs[((static_cast<std::size_t>(b) * heads + h) * T + i) * T + j] ==
                          0.0);
}
