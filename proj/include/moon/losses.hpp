#ifndef MOON_LOSSES_HPP
#define MOON_LOSSES_HPP

#include <Eigen/Eigenvalues>

#include "moon/ops.hpp"

namespace moon {

struct LossConfig {
    double lambda = 0.8;
    double epsilon = 1e-12;
    int cca_min_batch = 4;
    double eig_jitter = 1e-9; // guard against (near-)repeated eigenvalues
    bool use_cca = true;

    void validate() const {
        check(lambda >= 0.0 && lambda <= 1.0, "loss: lambda must be in [0,1]");
        check(epsilon > 0.0, "loss: epsilon must be > 0");
        check(cca_min_batch >= 2, "loss: cca_min_batch must be >= 2");
    }
};

namespace ops {

// Mean per-threshold binary cross-entropy between sigmoid(logits) and the
// 0/1 targets: mean(softplus(h) - t*h).
template <class Real>
Var<Real> ordinal_loss(Var<Real> logits, const Tensor<Real>& targets) {
    Tape<Real>& t = *logits.tape;
    check(logits.val().rank() == 2 && logits.val().dim(0) >= 1, "ordinal_loss: need [n,h] logits, n >= 1");
    check(logits.val().same_shape(targets), "ordinal_loss: target shape mismatch");
    for (Real v : logits.val().data)
        check(std::isfinite(double(v)), "ordinal_loss: non-finite logit");
    Var<Real> tgt = constant(t, targets);
    return mean_all(sub(softplus(logits), mul(logits, tgt)));
}

// Project the standardized logit matrix onto the eigenvectors of its own
// covariance, ordered by descending eigenvalue (Algorithm 1's rotation).
// Eigenvector signs follow a fixed convention so the map is deterministic.
template <class Real>
Var<Real> eig_project(Var<Real> x, Real jitter) {
    Tape<Real>& t = *x.tape;
    check(x.val().rank() == 2, "eig_project: need [n,h]");
    int n = x.val().dim(0), h = x.val().dim(1);
    check(n >= 2, "eig_project: need n >= 2");

    using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
    auto xm = as_mat(x.val(), n, h);
    Mat cov = (xm.transpose() * xm).template cast<Real>() / Real(n - 1);
    cov = ((cov + cov.transpose()) * Real(0.5)).eval();
    cov.diagonal().array() += jitter;
    Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
    check(eig.info() == Eigen::Success, "eig_project: eigendecomposition failed");

    // ascending from Eigen; reorder to descending and fix signs
    std::vector<int> order(static_cast<size_t>(h));
    for (int i = 0; i < h; ++i) order[size_t(i)] = h - 1 - i;
    Mat P(h, h);
    std::vector<Real> sign(size_t(h), Real(1));
    for (int c = 0; c < h; ++c) {
        int src = order[size_t(c)];
        Real maxabs = 0;
        for (int r = 0; r < h; ++r) maxabs = std::max(maxabs, std::abs(eig.eigenvectors()(r, src)));
        // first component at >= half the peak magnitude decides the sign;
        // stable for the +-45 degree eigenvectors standardization produces
        int pick = 0;
        for (int r = 0; r < h; ++r)
            if (std::abs(eig.eigenvectors()(r, src)) >= Real(0.5) * maxabs) { pick = r; break; }
        sign[size_t(c)] = eig.eigenvectors()(pick, src) < Real(0) ? Real(-1) : Real(1);
        P.col(c) = eig.eigenvectors().col(src) * sign[size_t(c)];
    }

    Tensor<Real> out({n, h});
    as_mat(out, n, h).noalias() = xm * P;
    int id = t.push(std::move(out), x.rg());
    if (t.recording) {
        Mat V = eig.eigenvectors();
        Eigen::Vector<Real, Eigen::Dynamic> lam = eig.eigenvalues();
        t.set_backward(id, [xid = x.id, P, V, lam, order, sign, n, h, id](Tape<Real>& tp) {
            auto gy = as_mat(tp.grad(id), n, h);
            auto xv = as_mat(tp.val(xid), n, h);
            auto gx = as_mat(tp.grad(xid), n, h);
            // direct path y = x P
            gx.noalias() += gy * P.transpose();
            // path through P(x): Pbar = x^T gy, mapped back to solver order/sign
            Mat pbar = xv.transpose() * gy;
            Mat vbar = Mat::Zero(h, h);
            for (int c = 0; c < h; ++c) vbar.col(order[size_t(c)]) = pbar.col(c) * sign[size_t(c)];
            Mat m = V.transpose() * vbar;
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < h; ++c)
                    m(r, c) = r == c ? Real(0) : m(r, c) / (lam(c) - lam(r));
            Mat abar = V * m * V.transpose();
            abar = ((abar + abar.transpose()) * Real(0.5)).eval();
            gx.noalias() += xv * (abar + abar.transpose()) / Real(n - 1);
        });
    }
    return {&t, id};
}

// Per-column standardization with the epsilon guard (sample std, n-1).
template <class Real>
Var<Real> standardize_cols(Var<Real> x, Real eps) {
    int n = x.val().dim(0);
    Var<Real> m = col_mean(x);
    Var<Real> centered = add_rowvec(x, neg(m));
    Var<Real> var = scale(col_sum(mul(centered, centered)), Real(1) / Real(n - 1));
    Var<Real> stddev = add_const(sqrt_elem(var), eps);
    return div_rowvec(centered, stddev);
}

// Canonical correlation loss between two logit batches [n,h]:
// standardize, eigen-project each onto its own covariance's top-h basis,
// then return -Tr(cross-cov) / (||H1||_F * ||H2||_F + eps).
template <class Real>
Var<Real> cca_loss(Var<Real> h1, Var<Real> h2, const LossConfig& cfg = {}) {
    Tape<Real>& t = *h1.tape;
    check(h1.val().rank() == 2 && h2.val().rank() == 2, "cca_loss: need [n,h] logits");
    check(h1.val().same_shape(h2.val()), "cca_loss: shape mismatch");
    int n = h1.val().dim(0), h = h1.val().dim(1);
    check(n >= 2, "cca_loss: need batch size n >= 2");
    check(h >= 1, "cca_loss: need h >= 1");
    for (Real v : h1.val().data) check(std::isfinite(double(v)), "cca_loss: non-finite entry in H1");
    for (Real v : h2.val().data) check(std::isfinite(double(v)), "cca_loss: non-finite entry in H2");
    Real eps = Real(cfg.epsilon);

    Var<Real> p1 = eig_project(standardize_cols(h1, eps), Real(cfg.eig_jitter));
    Var<Real> p2 = eig_project(standardize_cols(h2, eps), Real(cfg.eig_jitter));

    Var<Real> tr = scale(sum_all(mul(p1, p2)), Real(1) / Real(n - 1));
    Var<Real> f1 = sqrt_elem(sum_all(mul(p1, p1)));
    Var<Real> f2 = sqrt_elem(sum_all(mul(p2, p2)));
    Var<Real> denom = add_const(mul(f1, f2), eps);
    return neg(div(tr, denom));
}

// lambda * ordinal + (1-lambda) * cca_sum — the composite's affine form.
template <class Real>
Var<Real> combine_overall(Var<Real> ord, Var<Real> cca_sum, Real lambda) {
    return add(scale(ord, lambda), scale(cca_sum, Real(1) - lambda));
}

// Composite objective: lambda * ordinal + (1-lambda) * (cca(E,L) + cca(E,S)).
// The CCA terms drop out entirely when disabled, when lambda == 1, or when
// the batch is below cca_min_batch (the caller logs that event).
template <class Real>
Var<Real> overall_loss(Var<Real> h_f, Var<Real> h_e, Var<Real> h_l, Var<Real> h_s,
                       const Tensor<Real>& targets, const LossConfig& cfg, bool* cca_skipped = nullptr) {
    cfg.validate();
    int n = h_f.val().dim(0);
    check(h_e.val().dim(0) == n && h_l.val().dim(0) == n && h_s.val().dim(0) == n,
          "overall_loss: batch size mismatch across logits");
    Var<Real> ord = ordinal_loss(h_f, targets);
    if (cca_skipped) *cca_skipped = false;
    bool cca_active = cfg.use_cca && cfg.lambda < 1.0;
    if (cca_active && n < cfg.cca_min_batch) {
        cca_active = false;
        if (cca_skipped) *cca_skipped = true;
    }
    if (!cca_active) return scale(ord, Real(cfg.lambda));
    Var<Real> cca = add(cca_loss(h_e, h_l, cfg), cca_loss(h_e, h_s, cfg));
    return combine_overall(ord, cca, Real(cfg.lambda));
}

} // namespace ops
} // namespace moon

#endif
