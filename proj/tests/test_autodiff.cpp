#include <doctest.h>

#include <cmath>

#include "moon/attention.hpp"
#include "moon/ops3d.hpp"
#include "support/gradcheck.hpp"

using namespace moon;
using moontest::grad_check_max_rel_err;
using moontest::random_tensor;

namespace {

// independent reference: softmax(Q K^T / sqrt(dk)) V with explicit loops
Tensor<double> attention_reference(const Tensor<double>& q, const Tensor<double>& k,
                                   const Tensor<double>& v) {
    int n = q.dim(0), dk = q.dim(1), m = k.dim(0), dv = v.dim(1);
    Tensor<double> out({n, dv});
    for (int i = 0; i < n; ++i) {
        std::vector<double> s(size_t(m), 0.0);
        for (int j = 0; j < m; ++j) {
            double acc = 0;
            for (int c = 0; c < dk; ++c) acc += q[i * dk + c] * k[j * dk + c];
            s[size_t(j)] = acc / std::sqrt(double(dk));
        }
        double mx = s[0];
        for (double x : s) mx = std::max(mx, x);
        double z = 0;
        for (auto& x : s) { x = std::exp(x - mx); z += x; }
        for (auto& x : s) x /= z;
        for (int j = 0; j < m; ++j)
            for (int c = 0; c < dv; ++c) out[i * dv + c] += s[size_t(j)] * v[j * dv + c];
    }
    return out;
}

} // namespace

TEST_CASE("elementwise and matmul values") {
    Tape<double> t;
    Var<double> a = constant(t, Tensor<double>({2, 2}, {1, 2, 3, 4}));
    Var<double> b = constant(t, Tensor<double>({2, 2}, {5, 6, 7, 8}));
    CHECK(ops::add(a, b).val()[3] == 12);
    CHECK(ops::mul(a, b).val()[0] == 5);
    Var<double> m = ops::matmul(a, b);
    CHECK(m.val()[0] == doctest::Approx(19));
    CHECK(m.val()[3] == doctest::Approx(50));
}

TEST_CASE("gradients of elementwise, linear, reductions") {
    Rng rng(1);
    for (int trial = 0; trial < 3; ++trial) {
        auto x = random_tensor(rng, {3, 4});
        auto w = random_tensor(rng, {4, 2});
        auto b = random_tensor(rng, {2});
        double err = grad_check_max_rel_err(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return ops::mean_all(ops::gelu(ops::linear(v[0], v[1], v[2])));
            },
            {x, w, b});
        CHECK(err < 1e-6);
    }
    auto x = random_tensor(rng, {5, 3});
    double err = grad_check_max_rel_err(
        [](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto s = ops::row_softmax(v[0]);
            return ops::sum_all(ops::mul(s, s));
        },
        {x});
    CHECK(err < 1e-6);
    err = grad_check_max_rel_err(
        [](Tape<double>& t, const std::vector<Var<double>>& v) {
            return ops::mean_all(ops::sigmoid(ops::softplus(v[0])));
        },
        {x});
    CHECK(err < 1e-6);
    err = grad_check_max_rel_err(
        [](Tape<double>& t, const std::vector<Var<double>>& v) {
            return ops::sum_all(ops::div(v[0], ops::add_const(ops::mul(v[1], v[1]), 1.0)));
        },
        {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})});
    CHECK(err < 1e-6);
}

TEST_CASE("layernorm normalizes and differentiates") {
    Rng rng(2);
    auto x = random_tensor(rng, {4, 6});
    auto g = random_tensor(rng, {6}, 0.5, 1.5);
    auto b = random_tensor(rng, {6});
    double err = grad_check_max_rel_err(
        [](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto y = ops::layernorm(v[0], v[1], v[2]);
            return ops::mean_all(ops::mul(y, y));
        },
        {x, g, b});
    CHECK(err < 1e-5);

    Tape<double> t;
    Tensor<double> ones({6}, 1.0), zeros({6}, 0.0);
    auto y = ops::layernorm(constant(t, x), constant(t, ones), constant(t, zeros));
    for (int i = 0; i < 4; ++i) {
        double mu = 0;
        for (int j = 0; j < 6; ++j) mu += y.val()[i * 6 + j];
        CHECK(mu / 6 == doctest::Approx(0).epsilon(1e-9));
    }
}

TEST_CASE("grouped reductions and column ops") {
    Rng rng(3);
    double err = grad_check_max_rel_err(
        [](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto m = ops::group_mean_rows(v[0], 3);
            return ops::sum_all(ops::mul(m, m));
        },
        {random_tensor(rng, {6, 4})});
    CHECK(err < 1e-6);
    err = grad_check_max_rel_err(
        [](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto c = ops::concat_cols(v[0], v[1]);
            auto s = ops::slice_cols(c, 1, 4);
            auto a = ops::append_ones_col(s);
            return ops::mean_all(ops::mul(a, a));
        },
        {random_tensor(rng, {3, 2}), random_tensor(rng, {3, 3})});
    CHECK(err < 1e-6);
    err = grad_check_max_rel_err(
        [](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto s = ops::sum_rank_groups(v[0], 3, 2);
            return ops::sum_all(ops::mul(s, s));
        },
        {random_tensor(rng, {2, 6})});
    CHECK(err < 1e-6);
    err = grad_check_max_rel_err(
        [](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto m = ops::col_mean(v[0]);
            auto c = ops::add_rowvec(v[0], ops::neg(m));
            auto sd = ops::add_const(ops::sqrt_elem(ops::scale(ops::col_sum(ops::mul(c, c)), 0.25)), 1e-9);
            return ops::sum_all(ops::mul(ops::div_rowvec(c, sd), v[0]));
        },
        {random_tensor(rng, {5, 3})});
    CHECK(err < 1e-5);
}

TEST_CASE("attention: saturated one-hot rows select matching value rows") {
    Tape<double> t;
    double s = 50.0;
    Tensor<double> q({2, 2}, {s, 0, 0, s});
    Tensor<double> k = q;
    Tensor<double> v({2, 2}, {1, 2, 3, 4});
    auto out = ops::attention(constant(t, q), constant(t, k), constant(t, v));
    for (int i = 0; i < 4; ++i) CHECK(out.val()[i] == doctest::Approx(v[i]).epsilon(1e-9));
}

TEST_CASE("attention: equal key rows give uniform weights, output = mean of V") {
    Tape<double> t;
    Rng rng(4);
    auto q = random_tensor(rng, {3, 4});
    Tensor<double> k({5, 4});
    for (int j = 0; j < 5; ++j)
        for (int c = 0; c < 4; ++c) k[j * 4 + c] = 0.7 - 0.1 * c;
    auto v = random_tensor(rng, {5, 2});
    auto out = ops::attention(constant(t, q), constant(t, k), constant(t, v));
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 2; ++c) {
            double mean = 0;
            for (int j = 0; j < 5; ++j) mean += v[j * 2 + c];
            mean /= 5;
            CHECK(out.val()[i * 2 + c] == doctest::Approx(mean).epsilon(1e-12));
        }
}

TEST_CASE("attention matches hand-rolled reference on random shapes") {
    Rng rng(5);
    auto q = random_tensor(rng, {3, 4});
    auto k = random_tensor(rng, {3, 4});
    auto v = random_tensor(rng, {3, 2});
    Tape<double> t;
    auto out = ops::attention(constant(t, q), constant(t, k), constant(t, v));
    auto ref = attention_reference(q, k, v);
    for (int64_t i = 0; i < ref.numel(); ++i) CHECK(out.val()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("attention output stays within per-column V bounds (convexity)") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        auto q = random_tensor(rng, {4, 3}, -2, 2);
        auto k = random_tensor(rng, {6, 3}, -2, 2);
        auto v = random_tensor(rng, {6, 2}, -3, 3);
        Tape<double> t;
        auto out = ops::attention(constant(t, q), constant(t, k), constant(t, v));
        for (int c = 0; c < 2; ++c) {
            double lo = 1e30, hi = -1e30;
            for (int j = 0; j < 6; ++j) {
                lo = std::min(lo, v[j * 2 + c]);
                hi = std::max(hi, v[j * 2 + c]);
            }
            for (int i = 0; i < 4; ++i) {
                CHECK(out.val()[i * 2 + c] >= lo - 1e-12);
                CHECK(out.val()[i * 2 + c] <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("attention is invariant to permuting K and V rows together") {
    Rng rng(7);
    auto q = random_tensor(rng, {3, 4});
    auto k = random_tensor(rng, {5, 4});
    auto v = random_tensor(rng, {5, 3});
    std::vector<int> perm{3, 0, 4, 1, 2};
    Tensor<double> kp({5, 4}), vp({5, 3});
    for (int j = 0; j < 5; ++j) {
        for (int c = 0; c < 4; ++c) kp[j * 4 + c] = k[perm[size_t(j)] * 4 + c];
        for (int c = 0; c < 3; ++c) vp[j * 3 + c] = v[perm[size_t(j)] * 3 + c];
    }
    Tape<double> t;
    auto a = ops::attention(constant(t, q), constant(t, k), constant(t, v));
    auto b = ops::attention(constant(t, q), constant(t, kp), constant(t, vp));
    for (int64_t i = 0; i < a.val().numel(); ++i)
        CHECK(a.val()[i] == doctest::Approx(b.val()[i]).epsilon(1e-12));
}

TEST_CASE("attention gradient vs finite differences") {
    Rng rng(8);
    for (int trial = 0; trial < 3; ++trial) {
        auto q = random_tensor(rng, {3, 4});
        auto k = random_tensor(rng, {5, 4});
        auto v = random_tensor(rng, {5, 2});
        double err = grad_check_max_rel_err(
            [](Tape<double>& t, const std::vector<Var<double>>& vars) {
                auto o = ops::attention(vars[0], vars[1], vars[2]);
                return ops::sum_all(ops::mul(o, o));
            },
            {q, k, v});
        CHECK(err < 1e-5);
    }
}

TEST_CASE("multihead attention equals per-head single attention") {
    Rng rng(9);
    int B = 2, T = 5, C = 8, heads = 2, dh = C / heads;
    auto q = random_tensor(rng, {B * T, C});
    auto k = random_tensor(rng, {B * T, C});
    auto v = random_tensor(rng, {B * T, C});
    Tape<double> t;
    auto fused = ops::multihead_attention(constant(t, q), constant(t, k), constant(t, v), B, heads);
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < heads; ++h) {
            Tensor<double> qs({T, dh}), ks({T, dh}), vs({T, dh});
            for (int i = 0; i < T; ++i)
                for (int c = 0; c < dh; ++c) {
                    qs[i * dh + c] = q[(b * T + i) * C + h * dh + c];
                    ks[i * dh + c] = k[(b * T + i) * C + h * dh + c];
                    vs[i * dh + c] = v[(b * T + i) * C + h * dh + c];
                }
            auto ref = attention_reference(qs, ks, vs);
            for (int i = 0; i < T; ++i)
                for (int c = 0; c < dh; ++c)
                    CHECK(fused.val()[(b * T + i) * C + h * dh + c] ==
                          doctest::Approx(ref[i * dh + c]).epsilon(1e-12));
        }
}

TEST_CASE("multihead attention gradient") {
    Rng rng(10);
    auto q = random_tensor(rng, {4, 4});
    auto k = random_tensor(rng, {4, 4});
    auto v = random_tensor(rng, {4, 4});
    double err = grad_check_max_rel_err(
        [](Tape<double>& t, const std::vector<Var<double>>& vars) {
            auto o = ops::multihead_attention(vars[0], vars[1], vars[2], 2, 2);
            return ops::mean_all(ops::mul(o, o));
        },
        {q, k, v});
    CHECK(err < 1e-5);
}

TEST_CASE("dwconv3 gradient and zero propagation") {
    Rng rng(11);
    auto x = random_tensor(rng, {1, 3, 4, 3, 2});
    auto w = random_tensor(rng, {27, 2});
    auto b = random_tensor(rng, {2});
    double err = grad_check_max_rel_err(
        [](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto o = ops::dwconv3(v[0], v[1], v[2]);
            return ops::mean_all(ops::mul(o, o));
        },
        {x, w, b});
    CHECK(err < 1e-5);

    Tape<double> t;
    Tensor<double> zx({1, 3, 3, 3, 2});
    Tensor<double> zb({2});
    auto o = ops::dwconv3(constant(t, zx), constant(t, w), constant(t, zb));
    for (auto v : o.val().data) CHECK(v == 0.0);
}

TEST_CASE("patch_embed shape arithmetic and gradient") {
    Rng rng(12);
    auto x = random_tensor(rng, {1, 5, 4, 7, 3});
    auto w = random_tensor(rng, {2 * 2 * 2 * 3, 4});
    auto b = random_tensor(rng, {4});
    Tape<double> t;
    auto o = ops::patch_embed(constant(t, x), constant(t, w), constant(t, b), {2, 2, 2});
    CHECK(o.val().shape == std::vector<int>{1, 3, 2, 4, 4});
    double err = grad_check_max_rel_err(
        [](Tape<double>& tp, const std::vector<Var<double>>& v) {
            auto y = ops::patch_embed(v[0], v[1], v[2], {2, 2, 2});
            return ops::mean_all(ops::mul(y, y));
        },
        {x, w, b});
    CHECK(err < 1e-5);
}

TEST_CASE("adaptive pool: octant means, constants, identity, gradient") {
    Rng rng(13);
    auto x = random_tensor(rng, {1, 4, 4, 4, 2});
    Tape<double> t;
    auto o = ops::adaptive_avg_pool3d(constant(t, x), {2, 2, 2});
    // brute-force block means
    for (int gi = 0; gi < 2; ++gi)
        for (int gj = 0; gj < 2; ++gj)
            for (int gk = 0; gk < 2; ++gk)
                for (int c = 0; c < 2; ++c) {
                    double acc = 0;
                    for (int i = gi * 2; i < gi * 2 + 2; ++i)
                        for (int j = gj * 2; j < gj * 2 + 2; ++j)
                            for (int k = gk * 2; k < gk * 2 + 2; ++k)
                                acc += x[(((i * 4) + j) * 4 + k) * 2 + c];
                    acc /= 8;
                    CHECK(o.val()[(((gi * 2) + gj) * 2 + gk) * 2 + c] == doctest::Approx(acc).epsilon(1e-12));
                }

    Tensor<double> cmap({1, 3, 5, 4, 1}, 2.5);
    auto oc = ops::adaptive_avg_pool3d(constant(t, cmap), {2, 2, 2});
    for (auto v : oc.val().data) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));

    auto oid = ops::adaptive_avg_pool3d(constant(t, x), {4, 4, 4});
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(oid.val()[i] == x[i]);

    CHECK_THROWS_AS((void)ops::adaptive_avg_pool3d(constant(t, cmap), {4, 4, 4}), ContractError);

    double err = grad_check_max_rel_err(
        [](Tape<double>& tp, const std::vector<Var<double>>& v) {
            auto y = ops::adaptive_avg_pool3d(v[0], {2, 2, 2});
            return ops::mean_all(ops::mul(y, y));
        },
        {random_tensor(rng, {1, 4, 5, 4, 2})});
    CHECK(err < 1e-6);
}

TEST_CASE("trilinear upsample: identity at same dims, gradient") {
    Rng rng(14);
    auto x = random_tensor(rng, {1, 3, 4, 5, 2});
    Tape<double> t;
    auto o = ops::upsample_trilinear(constant(t, x), {3, 4, 5});
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(o.val()[i] == doctest::Approx(x[i]).epsilon(1e-12));
    double err = grad_check_max_rel_err(
        [](Tape<double>& tp, const std::vector<Var<double>>& v) {
            auto y = ops::upsample_trilinear(v[0], {5, 6, 9});
            return ops::mean_all(ops::mul(y, y));
        },
        {random_tensor(rng, {1, 2, 3, 4, 2})});
    CHECK(err < 1e-6);
}
