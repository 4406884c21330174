#include <doctest.h>

#include <cmath>

#include "elm/tensor.hpp"
#include "testutil.hpp"

using namespace elm;
using testutil::grad_check;
using testutil::random_tensor;

TEST_CASE("matmul identity and hand-computed product") {
    Tensor I = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor B = Tensor::from({2, 2}, {3.5, -2, 0.25, 7});
    Tensor C = matmul(I, B);
    for (std::size_t i = 0; i < 4; ++i) CHECK(C.val()[i] == B.val()[i]);

    Tensor A = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor v = Tensor::from({2, 1}, {1, 1});
    Tensor r = matmul(A, v);
    CHECK(r.val()[0] == 3);
    CHECK(r.val()[1] == 7);
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        CHECK(false);
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient vs central differences") {
    Rng rng(21);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    auto res = grad_check({a, b}, [&] { return sum(matmul(a, b)); });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("softmax gradient vs central differences") {
    Rng rng(22);
    Tensor x = random_tensor({2, 5}, rng);
    Tensor w = random_tensor({2, 5}, rng, false);  // fixed mixing so grad is nontrivial
    auto res = grad_check({x}, [&] { return sum(mul(softmax_rows(x), w)); });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("cross entropy uniform floors and confident case") {
    // zero logits, K=16 -> ln 16
    Tensor z16 = Tensor::zeros({3, 16});
    CHECK(cross_entropy(z16, {0, 5, 15}).item() ==
          doctest::Approx(std::log(16.0)).epsilon(1e-12));
    // zero logits, K=2^10 -> 10 ln 2
    Tensor z1024 = Tensor::zeros({2, 1024});
    CHECK(cross_entropy(z1024, {3, 1000}).item() ==
          doctest::Approx(10 * std::log(2.0)).epsilon(1e-12));
    // near-certain prediction
    Tensor sharp = Tensor::from({1, 2}, {20, -20});
    CHECK(cross_entropy(sharp, {0}).item() < 1e-8);
    // out-of-range target
    CHECK_THROWS_AS(cross_entropy(sharp, {2}), ConfigError);
}

TEST_CASE("cross entropy gradient, including row weights") {
    Rng rng(23);
    Tensor logits = random_tensor({4, 6}, rng);
    const std::vector<int> targets = {1, 0, 5, 3};
    auto res = grad_check({logits}, [&] { return cross_entropy(logits, targets); });
    CHECK(res.max_rel_err < 1e-6);

    const std::vector<real> w = {1, 0, 1, 0};
    auto resw =
        grad_check({logits}, [&] { return cross_entropy_weighted(logits, targets, w); });
    CHECK(resw.max_rel_err < 1e-6);
}

TEST_CASE("backward basics: ones for sum, hand derivative for x*x") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    backward(sum(x));
    for (real g : x.grad()) CHECK(g == 1.0);

    Tensor y = Tensor::from({3}, {1, 2, 3}, true);
    backward(sum(mul(y, y)));
    CHECK(y.grad()[0] == doctest::Approx(2));
    CHECK(y.grad()[1] == doctest::Approx(4));
    CHECK(y.grad()[2] == doctest::Approx(6));
}

TEST_CASE("backward demands a scalar and accumulates across calls") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(add(x, x)), ConfigError);
    Tensor l1 = sum(x);
    backward(l1);
    backward(l1);
    CHECK(x.grad()[0] == doctest::Approx(2));  // two backward passes accumulate
}

TEST_CASE("shared subexpressions accumulate additively") {
    // loss = sum(s) + sum(s .* s) with shared s = x + x
    Tensor x = Tensor::from({2}, {0.5, -1.5}, true);
    Tensor s = add(x, x);
    backward(add(sum(s), sum(mul(s, s))));
    // d/dx [2x + 4x^2] = 2 + 8x
    CHECK(x.grad()[0] == doctest::Approx(2 + 8 * 0.5));
    CHECK(x.grad()[1] == doctest::Approx(2 + 8 * -1.5));

    // duplicated-subgraph oracle: rebuild without sharing
    Tensor x2 = Tensor::from({2}, {0.5, -1.5}, true);
    backward(add(sum(add(x2, x2)), sum(mul(add(x2, x2), add(x2, x2)))));
    for (int i = 0; i < 2; ++i) CHECK(x.grad()[i] == doctest::Approx(x2.grad()[i]));
}

TEST_CASE("unreachable tensors keep zero grad") {
    Tensor x = Tensor::from({2}, {1, 1}, true);
    Tensor other = Tensor::from({2}, {5, 5}, true);
    backward(sum(x));
    CHECK(other.grad()[0] == 0.0);
    CHECK(other.grad()[1] == 0.0);
}

TEST_CASE("elementwise, bias, reshape, transpose, concat, slice gradients") {
    Rng rng(24);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor bias = random_tensor({4}, rng);
    auto res = grad_check({a, b, bias}, [&] {
        Tensor t = add_bias(mul(add(a, b), sub(a, b)), bias);
        t = transpose(reshape(t, {4, 3}));
        Tensor c = concat_cols(t, scale(t, -0.5));
        return mean(slice_cols(concat_rows(c, c), 1, 5));
    });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gelu, sigmoid, rmsnorm, add_scalar gradients") {
    Rng rng(25);
    Tensor x = random_tensor({4, 8}, rng);
    Tensor gain = random_tensor({8}, rng);
    auto res = grad_check({x, gain}, [&] {
        return sum(mul(rmsnorm(gelu(x), gain), sigmoid(add_scalar(x, 0.25))));
    });
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("embedding gather: zero grads except gathered rows, scatter-add repeats") {
    Tensor table = Tensor::from({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
    Tensor out = embedding(table, {2, 2, 0});
    CHECK(out.val() == std::vector<real>{5, 6, 5, 6, 1, 2});
    backward(sum(out));
    const auto& g = table.grad();
    CHECK(g[0] == 1);  // row 0 gathered once
    CHECK(g[1] == 1);
    CHECK(g[2] == 0);  // row 1 untouched
    CHECK(g[3] == 0);
    CHECK(g[4] == 2);  // row 2 gathered twice
    CHECK(g[5] == 2);
    CHECK(g[6] == 0);
    CHECK(g[7] == 0);
}

TEST_CASE("attention gradient (causal and full) vs finite differences") {
    Rng rng(26);
    const int T = 5, dim = 8, heads = 2;
    for (bool causal : {true, false}) {
        Tensor q = random_tensor({2 * T, dim}, rng);
        Tensor k = random_tensor({2 * T, dim}, rng);
        Tensor v = random_tensor({2 * T, dim}, rng);
        Tensor w = random_tensor({2 * T, dim}, rng, false);
        auto res = grad_check({q, k, v}, [&] {
            return sum(mul(attention(q, k, v, T, heads, causal), w));
        });
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("mask_causal and scale_rows gradients") {
    Rng rng(27);
    Tensor s = random_tensor({4, 4}, rng);
    auto res = grad_check({s}, [&] { return sum(softmax_rows(mask_causal(s))); });
    CHECK(res.max_rel_err < 1e-4);

    Tensor x = random_tensor({3, 4}, rng);
    auto res2 = grad_check({x}, [&] { return sum(scale_rows(x, {0.0, 2.0, -1.0})); });
    CHECK(res2.max_rel_err < 1e-6);
}

TEST_CASE("straight-through estimator: identity Jacobian through the quantizer") {
    Rng rng(28);
    Tensor x = random_tensor({3, 3}, rng);
    std::vector<real> q(x.numel());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = x.val()[i] < 0 ? 0 : 1;
    Tensor w = random_tensor({3, 3}, rng, false);

    Tensor st = straight_through(x, q);
    x.zero_grad();
    backward(sum(mul(st, w)));
    const auto g1 = x.grad();

    // explicitly constructed pass-through graph: d(loss)/d(input of identity)
    Tensor x2 = Tensor::from({3, 3}, q, true);
    backward(sum(mul(x2, w)));
    const auto& g2 = x2.grad();
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == doctest::Approx(g2[i]));
}

TEST_CASE("detach blocks gradients") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor l = sum(mul(detach(x), x));  // = sum(c .* x), c constant
    backward(l);
    CHECK(x.grad()[0] == doctest::Approx(1));
    CHECK(x.grad()[1] == doctest::Approx(2));
}

TEST_CASE("no-grad mode records nothing") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("full toy transformer block gradient check") {
    // two pre-norm blocks at dim 16 over 2 samples x 4 positions
    Rng rng(31);
    const int T = 4, dim = 16, heads = 2, B = 2;
    Tensor x0 = random_tensor({B * T, dim}, rng, true, 0.5);
    Tensor g1 = random_tensor({dim}, rng), g2 = random_tensor({dim}, rng);
    Tensor wq = random_tensor({dim, dim}, rng, true, 0.3);
    Tensor wk = random_tensor({dim, dim}, rng, true, 0.3);
    Tensor wv = random_tensor({dim, dim}, rng, true, 0.3);
    Tensor wo = random_tensor({dim, dim}, rng, true, 0.3);
    Tensor w1 = random_tensor({dim, 2 * dim}, rng, true, 0.3);
    Tensor w2 = random_tensor({2 * dim, dim}, rng, true, 0.3);
    Tensor gf = random_tensor({dim}, rng);
    Tensor head = random_tensor({dim, 7}, rng, true, 0.3);
    const std::vector<int> targets = {0, 3, 6, 2, 1, 4, 5, 0};

    auto loss_fn = [&] {
        Tensor h = rmsnorm(x0, g1);
        Tensor a = attention(matmul(h, wq), matmul(h, wk), matmul(h, wv), T, heads, true);
        Tensor x = add(x0, matmul(a, wo));
        Tensor h2 = rmsnorm(x, g2);
        x = add(x, matmul(gelu(matmul(h2, w1)), w2));
        return cross_entropy(matmul(rmsnorm(x, gf), head), targets);
    };
    auto res = grad_check({x0, g1, g2, wq, wk, wv, wo, w1, w2, gf, head}, loss_fn, 1e-5, 24);
    CHECK(res.max_rel_err < 1e-4);
    CHECK(res.checked > 200);
}
