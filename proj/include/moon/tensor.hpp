#ifndef MOON_TENSOR_HPP
#define MOON_TENSOR_HPP

#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace moon {

// Raised when an operation's shape/value contract is violated.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// 64-byte aligned storage. Keeping every buffer at the same alignment makes
// Eigen's vectorized kernels take identical code paths run-to-run, which the
// bit-exact determinism contract depends on.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

// Dense row-major tensor. Last dimension is contiguous, so feature maps are
// stored channel-last ([B,H,W,D,C]) and token matrices are plain [N,C] rows.
template <class Real>
struct Tensor {
    using Storage = std::vector<Real, AlignedAllocator<Real>>;

    std::vector<int> shape;
    Storage data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(size_t(count(shape)), Real(0)) {}
    Tensor(std::vector<int> s, Real fill) : shape(std::move(s)), data(size_t(count(shape)), fill) {}
    Tensor(std::vector<int> s, std::initializer_list<Real> d) : shape(std::move(s)), data(d) {
        if (int64_t(data.size()) != count(shape)) throw ContractError("tensor: data size does not match shape");
    }
    Tensor(std::vector<int> s, Storage d) : shape(std::move(s)), data(std::move(d)) {
        if (int64_t(data.size()) != count(shape)) throw ContractError("tensor: data size does not match shape");
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw ContractError("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return int64_t(data.size()); }
    int dim(int i) const { return shape[size_t(i)]; }
    int rank() const { return int(shape.size()); }

    Real* ptr() { return data.data(); }
    const Real* ptr() const { return data.data(); }
    Real& operator[](int64_t i) { return data[size_t(i)]; }
    Real operator[](int64_t i) const { return data[size_t(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // rows/cols view of a rank-2 tensor (or [numel] as a single row)
    int rows() const { return rank() == 2 ? shape[0] : 1; }
    int cols() const { return rank() == 2 ? shape[1] : int(numel()); }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }

    template <class Other>
    Tensor<Other> cast() const {
        Tensor<Other> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = Other(data[i]);
        return out;
    }
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

} // namespace moon

#endif
