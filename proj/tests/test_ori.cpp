#include <doctest.h>

#include <cstring>

#include "moon/ori.hpp"
#include "support/gradcheck.hpp"

using namespace moon;
using moontest::fd_grads;
using moontest::max_rel_err;
using moontest::random_tensor;

namespace {

OriPair<double> make_pair(uint64_t seed, int c, int heads, Dims3 grid) {
    Rng rng(seed);
    OriPair<double> p;
    p.init(rng, c, heads, grid);
    return p;
}

std::vector<Tensor<double>> pair_param_values(OriPair<double>& p) {
    ParamList<double> ps;
    p.collect("p", ps);
    std::vector<Tensor<double>> vals;
    for (auto* q : ps) vals.push_back(q->value);
    return vals;
}

void set_pair_params(OriPair<double>& p, const std::vector<Tensor<double>>& vals) {
    ParamList<double> ps;
    p.collect("p", ps);
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = vals[i];
}

} // namespace

TEST_CASE("pool_to_common_grid basics") {
    Tape<double> t;
    Tensor<double> cmap({1, 4, 6, 5, 3}, 1.25);
    auto pooled = ops::pool_to_common_grid(constant(t, cmap), {2, 2, 2});
    for (auto v : pooled.val().data) CHECK(v == doctest::Approx(1.25).epsilon(1e-12));
    Rng rng(1);
    auto x = random_tensor(rng, {1, 3, 3, 3, 2});
    auto same = ops::pool_to_common_grid(constant(t, x), {3, 3, 3});
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(same.val()[i] == x[i]);
    CHECK_THROWS_AS((void)ops::pool_to_common_grid(constant(t, x), {4, 3, 3}), ContractError);
}

TEST_CASE("ori_interact: zero inputs with zero-bias transforms give zero deltas") {
    auto pair = make_pair(2, 4, 2, {2, 2, 2});
    pair.conv_e.b.fill_const(0.0);
    pair.conv_x.b.fill_const(0.0);
    Tape<double> t;
    Tensor<double> fe({2, 4, 4, 4, 4});
    Tensor<double> fx({2, 5, 4, 6, 4});
    auto [de, dx] = ops::ori_interact(t, constant(t, fe), constant(t, fx), pair, 2);
    for (auto v : de.val().data) CHECK(v == 0.0);
    for (auto v : dx.val().data) CHECK(v == 0.0);
}

TEST_CASE("ori_interact: deltas come back at native dims") {
    auto pair = make_pair(3, 4, 2, {4, 4, 4});
    Rng rng(4);
    auto fe = random_tensor(rng, {1, 10, 10, 25, 4});
    auto fx = random_tensor(rng, {1, 6, 7, 5, 4});
    Tape<double> t;
    auto [de, dx] = ops::ori_interact(t, constant(t, fe), constant(t, fx), pair, 1);
    CHECK(de.val().shape == std::vector<int>{1, 10, 10, 25, 4});
    CHECK(dx.val().shape == std::vector<int>{1, 6, 7, 5, 4});
    CHECK_THROWS_AS((void)ops::ori_interact(t, constant(t, fe), constant(t, random_tensor(rng, {1, 6, 7, 5, 2})),
                                            pair, 1),
                    ContractError);
}

TEST_CASE("ori_interact on a single-token grid equals the composed linear maps") {
    int c = 3;
    auto pair = make_pair(5, c, 1, {1, 1, 1});
    Rng rng(6);
    auto fe = random_tensor(rng, {1, 2, 3, 2, c});
    auto fx = random_tensor(rng, {1, 3, 2, 4, c});
    Tape<double> t;
    auto [de, dx] = ops::ori_interact(t, constant(t, fe), constant(t, fx), pair, 1);

    // by hand: global means -> concat token -> (attention over one token = V
    // transform) -> W_P -> split -> pointwise conv; the upsample of a single
    // cell is constant over the map
    auto mean_of = [&](const Tensor<double>& f) {
        std::vector<double> m(size_t(c), 0.0);
        int64_t n = f.numel() / c;
        for (int64_t i = 0; i < f.numel(); ++i) m[size_t(i % c)] += f[i];
        for (auto& v : m) v /= double(n);
        return m;
    };
    std::vector<double> tok;
    for (double v : mean_of(fe)) tok.push_back(v);
    for (double v : mean_of(fx)) tok.push_back(v);
    int c2 = 2 * c;
    auto apply = [&](const Tensor<double>& w, const std::vector<double>& v) {
        std::vector<double> out(size_t(w.dim(1)), 0.0);
        for (int i = 0; i < w.dim(0); ++i)
            for (int j = 0; j < w.dim(1); ++j) out[size_t(j)] += v[size_t(i)] * w[i * w.dim(1) + j];
        return out;
    };
    std::vector<double> vtok = apply(pair.wv.w.value, tok);       // attention of one token = V row
    std::vector<double> proj = apply(pair.wp.value, vtok);        // W_P
    std::vector<double> he(proj.begin(), proj.begin() + c), hx(proj.begin() + c, proj.end());
    std::vector<double> refined_e = apply(pair.conv_e.w.value, he);
    std::vector<double> refined_x = apply(pair.conv_x.w.value, hx);
    for (int j = 0; j < c; ++j) {
        refined_e[size_t(j)] += pair.conv_e.b.value[j];
        refined_x[size_t(j)] += pair.conv_x.b.value[j];
    }
    (void)c2;
    for (int64_t i = 0; i < de.val().numel(); ++i)
        CHECK(de.val()[i] == doctest::Approx(refined_e[size_t(i % c)]).epsilon(1e-10));
    for (int64_t i = 0; i < dx.val().numel(); ++i)
        CHECK(dx.val()[i] == doctest::Approx(refined_x[size_t(i % c)]).epsilon(1e-10));
}

TEST_CASE("apply_ori_stage: zero weights are the exact identity") {
    auto el = make_pair(7, 4, 2, {2, 2, 2});
    auto es = make_pair(8, 4, 2, {2, 2, 2});
    for (OriPair<double>* p : {&el, &es}) {
        ParamList<double> ps;
        p->collect("x", ps);
        for (auto* q : ps) q->value = Tensor<double>(q->value.shape); // zeros
    }
    Rng rng(9);
    auto fe = random_tensor(rng, {2, 4, 4, 4, 4});
    auto fl = random_tensor(rng, {2, 5, 4, 4, 4});
    auto fs = random_tensor(rng, {2, 4, 5, 4, 4});
    Tape<double> t;
    auto out = ops::apply_ori_stage(t, constant(t, fe), constant(t, fl), constant(t, fs), el, es, 2);
    CHECK(std::memcmp(out[0].val().data.data(), fe.data.data(), fe.data.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(out[1].val().data.data(), fl.data.data(), fl.data.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(out[2].val().data.data(), fs.data.data(), fs.data.size() * sizeof(double)) == 0);
}

TEST_CASE("apply_ori_stage symmetry: identical pairs and identical partners") {
    auto el = make_pair(10, 4, 2, {2, 2, 2});
    auto es = el; // identical parameters
    Rng rng(11);
    auto fe = random_tensor(rng, {1, 4, 4, 4, 4});
    auto fl = random_tensor(rng, {1, 5, 4, 4, 4});
    Tape<double> t;
    auto [de_l, dl] = ops::ori_interact(t, constant(t, fe), constant(t, fl), el, 1);
    auto [de_s, ds] = ops::ori_interact(t, constant(t, fe), constant(t, fl), es, 1);
    for (int64_t i = 0; i < de_l.val().numel(); ++i) CHECK(de_l.val()[i] == de_s.val()[i]);

    auto out = ops::apply_ori_stage(t, constant(t, fe), constant(t, fl), constant(t, fl), el, es, 1);
    for (int64_t i = 0; i < fe.numel(); ++i)
        CHECK(out[0].val()[i] == doctest::Approx(fe[i] + de_l.val()[i]).epsilon(1e-12));
}

TEST_CASE("ori: perturbing one liver voxel reaches the esophageal delta") {
    auto pair = make_pair(12, 2, 1, {2, 2, 2});
    Rng rng(13);
    auto fe = random_tensor(rng, {1, 3, 3, 3, 2});
    auto fx = random_tensor(rng, {1, 4, 3, 3, 2});
    auto delta_e_sum = [&](const Tensor<double>& fxv) {
        Tape<double> t;
        t.recording = false;
        auto [de, dx] = ops::ori_interact(t, constant(t, fe), constant(t, fxv), pair, 1);
        double s = 0;
        for (int64_t i = 0; i < de.val().numel(); ++i) s += de.val()[i] * std::cos(double(i));
        return s;
    };
    double base = delta_e_sum(fx);
    Tensor<double> bumped = fx;
    bumped[5] += 1e-3;
    CHECK(std::abs(delta_e_sum(bumped) - base) > 1e-9);
}

TEST_CASE("ori_interact gradient vs finite differences over inputs and parameters") {
    for (uint64_t seed : {21ull, 22ull, 23ull, 24ull, 25ull, 26ull, 27ull, 28ull, 29ull, 30ull}) {
        Rng rng(seed);
        int c = 2;
        auto proto = make_pair(seed * 7 + 1, c, 1, {2, 2, 2});
        auto fe = random_tensor(rng, {1, 3, 2, 3, c});
        auto fx = random_tensor(rng, {1, 2, 3, 2, c});
        std::vector<Tensor<double>> inputs = {fe, fx};
        auto pvals = pair_param_values(proto);
        inputs.insert(inputs.end(), pvals.begin(), pvals.end());

        auto loss_of = [&](Var<double> de, Var<double> dx) {
            // fixed quadratic functional of both deltas
            return ops::add(ops::sum_all(ops::mul(de, de)), ops::sum_all(ops::mul(dx, dx)));
        };
        auto eval = [&](const std::vector<Tensor<double>>& xs) {
            OriPair<double> p = proto;
            set_pair_params(p, {xs.begin() + 2, xs.end()});
            Tape<double> t;
            t.recording = false;
            auto [de, dx] = ops::ori_interact(t, constant(t, xs[0]), constant(t, xs[1]), p, 1);
            return loss_of(de, dx).val()[0];
        };

        OriPair<double> p = proto;
        Tape<double> t;
        Var<double> vfe = {&t, t.push(fe, true)};
        Var<double> vfx = {&t, t.push(fx, true)};
        ParamList<double> ps;
        p.collect("p", ps);
        for (auto* q : ps) q->zero_grad();
        auto [de, dx] = ops::ori_interact(t, vfe, vfx, p, 1);
        t.backward(loss_of(de, dx).id);
        std::vector<Tensor<double>> analytic = {t.grad(vfe.id), t.grad(vfx.id)};
        for (auto* q : ps) analytic.push_back(q->grad);

        auto numeric = fd_grads(eval, inputs);
        CHECK(max_rel_err(analytic, numeric) < 1e-4);
    }
}
