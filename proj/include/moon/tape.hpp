#ifndef MOON_TAPE_HPP
#define MOON_TAPE_HPP

#include <functional>
#include <utility>

#include "moon/rng.hpp"
#include "moon/tensor.hpp"

namespace moon {

// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so
// creation order is a topological order and backward() is one reverse sweep.
// A tape lives for one forward/backward step and is then cleared.
template <class Real>
class Tape {
public:
    struct Node {
        Tensor<Real> value;
        Tensor<Real> grad;
        std::function<void(Tape&)> backward;
        bool requires_grad = false;
        bool grad_ready = false;
    };

    bool recording = true;

    // requires_grad is forced off while not recording (eval mode).
    int push(Tensor<Real> value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad && recording;
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }

    void set_backward(int id, std::function<void(Tape&)> bw) {
        Node& n = nodes_[size_t(id)];
        if (n.requires_grad) n.backward = std::move(bw);
    }

    Tensor<Real>& val(int id) { return nodes_[size_t(id)].value; }
    const Tensor<Real>& val(int id) const { return nodes_[size_t(id)].value; }
    bool requires_grad(int id) const { return nodes_[size_t(id)].requires_grad; }

    // Gradient buffer, allocated (zeroed) on first touch.
    Tensor<Real>& grad(int id) {
        Node& n = nodes_[size_t(id)];
        if (!n.grad_ready) {
            n.grad = Tensor<Real>(n.value.shape);
            n.grad_ready = true;
        }
        return n.grad;
    }

    bool grad_ready(int id) const { return nodes_[size_t(id)].grad_ready; }

    // Backpropagate from a scalar node.
    void backward(int id) {
        check(val(id).numel() == 1, "backward: root must be a scalar");
        grad(id)[0] = Real(1);
        for (int i = id; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (n.requires_grad && n.grad_ready && n.backward) n.backward(*this);
        }
    }

    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

template <class Real>
struct Var {
    Tape<Real>* tape = nullptr;
    int id = -1;

    const Tensor<Real>& val() const { return tape->val(id); }
    bool rg() const { return tape->requires_grad(id); }
};

template <class Real>
struct Param;

template <class Real>
using ParamList = std::vector<Param<Real>*>;

template <class Real>
inline Var<Real> constant(Tape<Real>& t, Tensor<Real> value) {
    return {&t, t.push(std::move(value), false)};
}

// A trainable tensor living outside any tape, with its accumulated gradient
// and Adam state. use() makes it a leaf of the current tape.
template <class Real>
struct Param {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;
    Tensor<Real> adam_m, adam_v;
    double lr_scale = 1.0;

    void init_shape(std::vector<int> shape) {
        value = Tensor<Real>(std::move(shape));
        grad = Tensor<Real>(value.shape);
    }

    void fill_uniform(Rng& rng, double lo, double hi) {
        for (auto& x : value.data) x = Real(rng.uniform(lo, hi));
    }
    void fill_normal(Rng& rng, double mean, double stddev) {
        for (auto& x : value.data) x = Real(rng.normal(mean, stddev));
    }
    void fill_const(Real c) {
        for (auto& x : value.data) x = c;
    }

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), Real(0)); }

    Var<Real> use(Tape<Real>& t) {
        int id = t.push(value, true);
        Param* self = this;
        t.set_backward(id, [self, id](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad(id);
            for (int64_t i = 0; i < g.numel(); ++i) self->grad[i] += g[i];
        });
        return {&t, id};
    }
};

} // namespace moon

#endif
