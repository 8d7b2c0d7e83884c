#ifndef MOON_ATTENTION_HPP
#define MOON_ATTENTION_HPP

#include "moon/ops.hpp"

namespace moon {
namespace ops {

namespace detail {

// softmax backward for one attention block given P (probabilities) and dP.
template <class Real>
inline void softmax_rows_backward(const Eigen::Ref<const EMat<Real>>& P,
                                  const Eigen::Ref<const EMat<Real>>& dP, EMat<Real>& dS) {
    dS.resize(P.rows(), P.cols());
    for (int i = 0; i < P.rows(); ++i) {
        Real dot = P.row(i).dot(dP.row(i));
        dS.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix();
    }
}

} // namespace detail

// Scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V.
// Q is [N,d_k], K is [M,d_k], V is [M,d_v]; output [N,d_v].
template <class Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v) {
    Tape<Real>& t = *q.tape;
    check(q.val().rank() == 2 && k.val().rank() == 2 && v.val().rank() == 2,
          "attention: Q,K,V must be rank-2 token matrices");
    int N = q.val().dim(0), dk = q.val().dim(1);
    int M = k.val().dim(0), dv = v.val().dim(1);
    check(dk > 0, "attention: key dim must be positive");
    check(k.val().dim(1) == dk, "attention: Q/K dim mismatch");
    check(v.val().dim(0) == M, "attention: K/V row mismatch");

    Real inv_sqrt = Real(1.0 / std::sqrt(double(dk)));
    Tensor<Real> probs({N, M});
    auto P = as_mat(probs, N, M);
    P.noalias() = as_mat(q.val(), N, dk) * as_mat(k.val(), M, dk).transpose();
    P *= inv_sqrt;
    for (int i = 0; i < N; ++i) {
        Real mx = P.row(i).maxCoeff();
        P.row(i) = (P.row(i).array() - mx).exp().matrix();
        P.row(i) /= P.row(i).sum();
    }
    Tensor<Real> out({N, dv});
    as_mat(out, N, dv).noalias() = P * as_mat(v.val(), M, dv);

    int id = t.push(std::move(out), q.rg() || k.rg() || v.rg());
    if (t.recording)
        t.set_backward(id, [qid = q.id, kid = k.id, vid = v.id, qrg = q.rg(), krg = k.rg(), vrg = v.rg(),
                            probs = std::move(probs), N, M, dk, dv, inv_sqrt, id](Tape<Real>& tp) {
            auto P = as_mat(probs, N, M);
            auto dO = as_mat(tp.grad(id), N, dv);
            if (vrg) as_mat(tp.grad(vid), M, dv).noalias() += P.transpose() * dO;
            if (!qrg && !krg) return;
            EMat<Real> dP(N, M), dS(N, M);
            dP.noalias() = dO * as_mat(tp.val(vid), M, dv).transpose();
            detail::softmax_rows_backward<Real>(P, dP, dS);
            dS *= inv_sqrt;
            if (qrg) as_mat(tp.grad(qid), N, dk).noalias() += dS * as_mat(tp.val(kid), M, dk);
            if (krg) as_mat(tp.grad(kid), M, dk).noalias() += dS.transpose() * as_mat(tp.val(qid), N, dk);
        });
    return {&t, id};
}

// Fused multi-head attention over a batch of token sequences.
// q is [B*Tq, C], k/v are [B*Tk, C] / [B*Tk, Cv]; heads divide C and Cv.
// Head h of item b attends independently; outputs are re-concatenated.
template <class Real>
Var<Real> multihead_attention(Var<Real> q, Var<Real> k, Var<Real> v, int batch, int heads) {
    Tape<Real>& t = *q.tape;
    int C = q.val().cols(), Cv = v.val().cols();
    check(batch >= 1 && heads >= 1, "multihead_attention: bad batch/heads");
    check(q.val().rows() % batch == 0 && k.val().rows() % batch == 0, "multihead_attention: rows not divisible by batch");
    check(C % heads == 0 && Cv % heads == 0, "multihead_attention: heads must divide channels");
    check(k.val().cols() == C, "multihead_attention: Q/K dim mismatch");
    check(v.val().rows() == k.val().rows(), "multihead_attention: K/V row mismatch");
    int Tq = q.val().rows() / batch, Tk = k.val().rows() / batch;
    int dh = C / heads, dvh = Cv / heads;
    Real inv_sqrt = Real(1.0 / std::sqrt(double(dh)));

    Tensor<Real> out({batch * Tq, Cv});
    Tensor<Real> probs({batch * heads * Tq, Tk});
    EMat<Real> Qh(Tq, dh), Kh(Tk, dh), Vh(Tk, dvh);
    for (int b = 0; b < batch; ++b) {
        auto Qb = as_mat(q.val(), batch * Tq, C).middleRows(b * Tq, Tq);
        auto Kb = as_mat(k.val(), batch * Tk, C).middleRows(b * Tk, Tk);
        auto Vb = as_mat(v.val(), batch * Tk, Cv).middleRows(b * Tk, Tk);
        for (int h = 0; h < heads; ++h) {
            Qh = Qb.middleCols(h * dh, dh);
            Kh = Kb.middleCols(h * dh, dh);
            Vh = Vb.middleCols(h * dvh, dvh);
            auto P = as_mat(probs, batch * heads * Tq, Tk).middleRows((b * heads + h) * Tq, Tq);
            P.noalias() = Qh * Kh.transpose();
            P *= inv_sqrt;
            for (int i = 0; i < Tq; ++i) {
                Real mx = P.row(i).maxCoeff();
                P.row(i) = (P.row(i).array() - mx).exp().matrix();
                P.row(i) /= P.row(i).sum();
            }
            as_mat(out, batch * Tq, Cv).middleRows(b * Tq, Tq).middleCols(h * dvh, dvh).noalias() = P * Vh;
        }
    }
    int id = t.push(std::move(out), q.rg() || k.rg() || v.rg());
    if (t.recording)
        t.set_backward(id, [qid = q.id, kid = k.id, vid = v.id, qrg = q.rg(), krg = k.rg(), vrg = v.rg(),
                            probs = std::move(probs), batch, heads, Tq, Tk, dh, dvh, C, Cv, inv_sqrt,
                            id](Tape<Real>& tp) {
            auto dOall = as_mat(tp.grad(id), batch * Tq, Cv);
            EMat<Real> dP(Tq, Tk), dS(Tq, Tk), Qh(Tq, dh), Kh(Tk, dh), Vh(Tk, dvh), dO(Tq, dvh);
            for (int b = 0; b < batch; ++b) {
                auto Qb = as_mat(tp.val(qid), batch * Tq, C).middleRows(b * Tq, Tq);
                auto Kb = as_mat(tp.val(kid), batch * Tk, C).middleRows(b * Tk, Tk);
                auto Vb = as_mat(tp.val(vid), batch * Tk, Cv).middleRows(b * Tk, Tk);
                for (int h = 0; h < heads; ++h) {
                    auto P = as_mat(probs, batch * heads * Tq, Tk).middleRows((b * heads + h) * Tq, Tq);
                    dO = dOall.middleRows(b * Tq, Tq).middleCols(h * dvh, dvh);
                    if (vrg)
                        as_mat(tp.grad(vid), batch * Tk, Cv)
                            .middleRows(b * Tk, Tk)
                            .middleCols(h * dvh, dvh)
                            .noalias() += P.transpose() * dO;
                    if (!qrg && !krg) continue;
                    Vh = Vb.middleCols(h * dvh, dvh);
                    dP.noalias() = dO * Vh.transpose();
                    EMat<Real> Pc = P;
                    detail::softmax_rows_backward<Real>(Pc, dP, dS);
                    dS *= inv_sqrt;
                    if (qrg) {
                        Kh = Kb.middleCols(h * dh, dh);
                        as_mat(tp.grad(qid), batch * Tq, C).middleRows(b * Tq, Tq).middleCols(h * dh, dh).noalias() +=
                            dS * Kh;
                    }
                    if (krg) {
                        Qh = Qb.middleCols(h * dh, dh);
                        as_mat(tp.grad(kid), batch * Tk, C).middleRows(b * Tk, Tk).middleCols(h * dh, dh).noalias() +=
                            dS.transpose() * Qh;
                    }
                }
            }
        });
    return {&t, id};
}

} // namespace ops
} // namespace moon

#endif
