#pragma once

// Dense row-major tensors with reverse-mode autodiff on a per-forward-pass
// tape. Templated on the scalar type: double for oracles and tight-tolerance
// tests, float for training.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "segkit/common.hpp"

namespace segkit {

inline std::atomic<bool>& debug_validate_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}
inline void set_debug_validate(bool on) { debug_validate_flag() = on; }

template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

    struct Node {
        std::vector<int64_t> shape;
        std::vector<T> data;
        std::vector<T> grad;
        bool requires_grad = false;
    };

public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false) {
        Tensor t;
        t.n_ = std::make_shared<Node>();
        t.n_->shape = std::move(shape);
        t.n_->data.assign(static_cast<size_t>(numel_of(t.n_->shape)), T(0));
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(std::vector<int64_t> shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.n_->data.begin(), t.n_->data.end(), value);
        if (!std::isfinite(static_cast<double>(value)))
            throw ValueError("tensor fill value is not finite");
        return t;
    }

    static Tensor ones(std::vector<int64_t> shape, bool requires_grad = false) {
        return full(std::move(shape), T(1), requires_grad);
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return full({}, value, requires_grad);
    }

    static Tensor from_data(std::vector<int64_t> shape, std::vector<T> data,
                            bool requires_grad = false) {
        if (numel_of(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        for (size_t i = 0; i < data.size(); ++i)
            if (!std::isfinite(static_cast<double>(data[i])))
                throw ValueError("non-finite value at flat index " + std::to_string(i) +
                                 " in tensor construction");
        Tensor t;
        t.n_ = std::make_shared<Node>();
        t.n_->shape = std::move(shape);
        t.n_->data = std::move(data);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor randn(std::vector<int64_t> shape, Rng& rng, T stddev = T(1),
                        bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.n_->data) v = static_cast<T>(rng.next_normal()) * stddev;
        return t;
    }

    static Tensor uniform(std::vector<int64_t> shape, Rng& rng, T lo, T hi,
                          bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.n_->data) v = lo + static_cast<T>(rng.next_double()) * (hi - lo);
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const std::vector<int64_t>& shape() const { return n_->shape; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int64_t dim(int i) const {
        if (i < 0) i += ndim();
        return n_->shape[static_cast<size_t>(i)];
    }
    int64_t numel() const { return numel_of(n_->shape); }

    T* data() { return n_->data.data(); }
    const T* data() const { return n_->data.data(); }
    std::vector<T>& vec() { return n_->data; }
    const std::vector<T>& vec() const { return n_->data; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return n_->data[0];
    }

    T& operator()(int64_t i) { return n_->data[static_cast<size_t>(i)]; }
    T operator()(int64_t i) const { return n_->data[static_cast<size_t>(i)]; }
    T& operator()(int64_t i, int64_t j) { return n_->data[static_cast<size_t>(i * dim(-1) + j)]; }
    T operator()(int64_t i, int64_t j) const {
        return n_->data[static_cast<size_t>(i * dim(-1) + j)];
    }
    T& operator()(int64_t i, int64_t j, int64_t k) {
        return n_->data[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
    }
    T operator()(int64_t i, int64_t j, int64_t k) const {
        return n_->data[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
    }

    bool requires_grad() const { return n_ && n_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        n_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return n_ && !n_->grad.empty(); }
    void ensure_grad() {
        if (n_->grad.empty()) n_->grad.assign(n_->data.size(), T(0));
    }
    T* grad() { return n_->grad.data(); }
    const T* grad() const { return n_->grad.data(); }
    const std::vector<T>& grad_vec() const { return n_->grad; }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }
    void drop_grad() { n_->grad.clear(); }

    Tensor clone() const {
        Tensor t;
        t.n_ = std::make_shared<Node>();
        t.n_->shape = n_->shape;
        t.n_->data = n_->data;
        t.n_->requires_grad = n_->requires_grad;
        return t;
    }

    bool same_node(const Tensor& other) const { return n_ == other.n_; }

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
            n *= d;
        }
        return n;
    }

private:
    std::shared_ptr<Node> n_;
};

// Ordered record of backward closures for one forward pass. Execution order
// is already topological, so replaying in reverse visits every consumer
// before its producers.
template <typename T>
class Tape {
public:
    Tape() {
        prev_ = active_;
        active_ = this;
    }
    ~Tape() { active_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
    size_t size() const { return nodes_.size(); }

    void run_backward(Tensor<T> loss) {
        if (!loss.defined() || loss.numel() != 1)
            throw ShapeError("backward requires a scalar loss, got shape " +
                             (loss.defined() ? shape_str(loss.shape()) : std::string("<empty>")));
        if (!loss.requires_grad())
            throw Error("backward: loss is not on the tape");
        if (replayed_) throw Error("backward: tape already replayed");
        replayed_ = true;
        loss.ensure_grad();
        loss.grad()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    inline static thread_local Tape* active_ = nullptr;
    Tape* prev_ = nullptr;
    std::vector<std::function<void()>> nodes_;
    bool replayed_ = false;
};

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!Tape<T>::active()) throw Error("backward: no active tape");
    Tape<T>::active()->run_backward(loss);
}

namespace detail {

template <typename T>
bool recording(std::initializer_list<Tensor<T>> inputs) {
    if (!Tape<T>::active()) return false;
    for (const auto& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

template <typename T>
void mark_output(Tensor<T>& out) {
    out.set_requires_grad(true);
    out.ensure_grad();
}

template <typename T>
void accum(Tensor<T>& t, int64_t idx, T v) {
    if (!t.requires_grad()) return;
    t.ensure_grad();
    t.grad()[idx] += v;
}

template <typename T>
void maybe_validate(const Tensor<T>& t, const char* op) {
    if (!debug_validate_flag().load(std::memory_order_relaxed)) return;
    const T* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(static_cast<double>(p[i])))
            throw ValueError(std::string(op) + " produced non-finite value at flat index " +
                             std::to_string(i));
}

struct BcastPlan {
    std::vector<int64_t> out_shape;
    std::vector<int64_t> a_stride, b_stride;
    int64_t out_numel = 1;
};

inline BcastPlan broadcast_plan(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                                const char* op) {
    BcastPlan p;
    const int nd = static_cast<int>(std::max(a.size(), b.size()));
    p.out_shape.resize(nd);
    p.a_stride.assign(nd, 0);
    p.b_stride.assign(nd, 0);
    std::vector<int64_t> ae(nd, 1), be(nd, 1);
    for (size_t i = 0; i < a.size(); ++i) ae[nd - a.size() + i] = a[i];
    for (size_t i = 0; i < b.size(); ++i) be[nd - b.size() + i] = b[i];
    for (int d = 0; d < nd; ++d) {
        if (ae[d] == be[d]) p.out_shape[d] = ae[d];
        else if (ae[d] == 1) p.out_shape[d] = be[d];
        else if (be[d] == 1) p.out_shape[d] = ae[d];
        else
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcast-compatible");
    }
    int64_t as = 1, bs = 1;
    for (int d = nd - 1; d >= 0; --d) {
        p.a_stride[d] = (ae[d] == 1) ? 0 : as;
        p.b_stride[d] = (be[d] == 1) ? 0 : bs;
        as *= ae[d];
        bs *= be[d];
    }
    for (int64_t d : p.out_shape) p.out_numel *= d;
    return p;
}

template <class F>
void bcast_iterate(const BcastPlan& p, F&& f) {
    const int nd = static_cast<int>(p.out_shape.size());
    if (p.out_numel == 0) return;
    if (nd == 0) {
        f(int64_t(0), int64_t(0), int64_t(0));
        return;
    }
    std::vector<int64_t> idx(nd, 0);
    int64_t ao = 0, bo = 0;
    for (int64_t lin = 0;; ++lin) {
        f(lin, ao, bo);
        int d = nd - 1;
        for (; d >= 0; --d) {
            ++idx[d];
            ao += p.a_stride[d];
            bo += p.b_stride[d];
            if (idx[d] < p.out_shape[d]) break;
            ao -= p.a_stride[d] * p.out_shape[d];
            bo -= p.b_stride[d] * p.out_shape[d];
            idx[d] = 0;
        }
        if (d < 0) break;
    }
}

// Zeroed-output inner product kernels shared by matmul and its adjoints.
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n) {
    parallel_for(m, [&](int64_t i) {
        T* crow = C + i * n;
        const T* arow = A + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T a = arow[p];
            const T* brow = B + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    });
}

// dA[i,p] += sum_j dC[i,j] * B[p,j]
template <typename T>
void gemm_acc_da(const T* dC, const T* B, T* dA, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* crow = dC + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const T* brow = B + p * n;
            T s = 0;
            for (int64_t j = 0; j < n; ++j) s += crow[j] * brow[j];
            dA[i * k + p] += s;
        }
    }
}

// dB[p,j] += sum_i A[i,p] * dC[i,j]
template <typename T>
void gemm_acc_db(const T* A, const T* dC, T* dB, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* crow = dC + i * n;
        const T* arow = A + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T a = arow[p];
            T* brow = dB + p * n;
            for (int64_t j = 0; j < n; ++j) brow[j] += a * crow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with numpy-style broadcasting.

template <typename T, class Fwd, class Bwd>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Bwd bwd) {
    auto plan = detail::broadcast_plan(a.shape(), b.shape(), name);
    Tensor<T> out = Tensor<T>::zeros(plan.out_shape);
    {
        const T* pa = a.data();
        const T* pb = b.data();
        T* po = out.data();
        detail::bcast_iterate(plan, [&](int64_t o, int64_t ao, int64_t bo) {
            po[o] = fwd(pa[ao], pb[bo]);
        });
    }
    if (detail::recording<T>({a, b})) {
        detail::mark_output(out);
        Tensor<T> ac = a, bc = b, oc = out;
        Tape<T>::active()->record([ac, bc, oc, plan, bwd]() mutable {
            const T* go = oc.grad();
            const T* pa = ac.data();
            const T* pb = bc.data();
            detail::bcast_iterate(plan, [&](int64_t o, int64_t ao, int64_t bo) {
                T da, db;
                bwd(pa[ao], pb[bo], go[o], da, db);
                detail::accum(ac, ao, da);
                detail::accum(bc, bo, db);
            });
        });
    }
    detail::maybe_validate(out, name);
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T, T, T g, T& da, T& db) {
            da = g;
            db = g;
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T, T, T g, T& da, T& db) {
            da = g;
            db = -g;
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T x, T y, T g, T& da, T& db) {
            da = g * y;
            db = g * x;
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
    if (detail::recording<T>({a})) {
        detail::mark_output(out);
        Tensor<T> ac = a, oc = out;
        Tape<T>::active()->record([ac, oc, c]() mutable {
            const T* go = oc.grad();
            for (int64_t i = 0; i < ac.numel(); ++i) detail::accum(ac, i, go[i] * c);
        });
    }
    detail::maybe_validate(out, "scale");
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = 0;
    const T* pa = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) s += pa[i];
    Tensor<T> out = Tensor<T>::scalar(s);
    if (detail::recording<T>({a})) {
        detail::mark_output(out);
        Tensor<T> ac = a, oc = out;
        Tape<T>::active()->record([ac, oc]() mutable {
            const T g = oc.grad()[0];
            for (int64_t i = 0; i < ac.numel(); ++i) detail::accum(ac, i, g);
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// matmul: [..,m,k] x [..,k,n] -> [..,m,n], batch dims broadcast.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() < 2 || b.ndim() < 2)
        throw ShapeError("matmul requires rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int64_t m = a.dim(-2), k = a.dim(-1);
    const int64_t kb = b.dim(-2), n = b.dim(-1);
    if (k != kb)
        throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<int64_t> abatch(a.shape().begin(), a.shape().end() - 2);
    std::vector<int64_t> bbatch(b.shape().begin(), b.shape().end() - 2);
    auto plan = detail::broadcast_plan(abatch, bbatch, "matmul");
    // batch strides are in units of one matrix
    std::vector<int64_t> out_shape = plan.out_shape;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out = Tensor<T>::zeros(out_shape);

    const int64_t a_mat = m * k, b_mat = kb * n, o_mat = m * n;
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    detail::bcast_iterate(plan, [&](int64_t o, int64_t ao, int64_t bo) {
        detail::gemm_nn(pa + ao * a_mat, pb + bo * b_mat, po + o * o_mat, m, k, n);
    });

    if (detail::recording<T>({a, b})) {
        detail::mark_output(out);
        Tensor<T> ac = a, bc = b, oc = out;
        Tape<T>::active()->record([ac, bc, oc, plan, m, k, n, a_mat, b_mat, o_mat]() mutable {
            const T* go = oc.grad();
            detail::bcast_iterate(plan, [&](int64_t o, int64_t ao, int64_t bo) {
                if (ac.requires_grad()) {
                    ac.ensure_grad();
                    detail::gemm_acc_da(go + o * o_mat, bc.data() + bo * b_mat,
                                        ac.grad() + ao * a_mat, m, k, n);
                }
                if (bc.requires_grad()) {
                    bc.ensure_grad();
                    detail::gemm_acc_db(ac.data() + ao * a_mat, go + o * o_mat,
                                        bc.grad() + bo * b_mat, m, k, n);
                }
            });
        });
    }
    detail::maybe_validate(out, "matmul");
    return out;
}

// ---------------------------------------------------------------------------
// Structural ops.

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int64_t> shape) {
    if (Tensor<T>::numel_of(shape) != a.numel())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    Tensor<T> out = Tensor<T>::zeros(shape);
    std::copy(a.data(), a.data() + a.numel(), out.data());
    if (detail::recording<T>({a})) {
        detail::mark_output(out);
        Tensor<T> ac = a, oc = out;
        Tape<T>::active()->record([ac, oc]() mutable {
            const T* go = oc.grad();
            for (int64_t i = 0; i < ac.numel(); ++i) detail::accum(ac, i, go[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm) {
    const int nd = a.ndim();
    if (static_cast<int>(perm.size()) != nd)
        throw ShapeError("permute order has " + std::to_string(perm.size()) +
                         " entries for tensor of rank " + std::to_string(nd));
    std::vector<int64_t> out_shape(nd);
    for (int d = 0; d < nd; ++d) out_shape[d] = a.dim(perm[d]);
    std::vector<int64_t> in_stride(nd, 1);
    for (int d = nd - 2; d >= 0; --d) in_stride[d] = in_stride[d + 1] * a.dim(d + 1);
    std::vector<int64_t> src_stride(nd);
    for (int d = 0; d < nd; ++d) src_stride[d] = in_stride[perm[d]];

    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const T* pa = a.data();
    T* po = out.data();
    std::vector<int64_t> idx(nd, 0);
    int64_t src = 0;
    const int64_t total = out.numel();
    for (int64_t lin = 0; lin < total; ++lin) {
        po[lin] = pa[src];
        for (int d = nd - 1; d >= 0; --d) {
            ++idx[d];
            src += src_stride[d];
            if (idx[d] < out_shape[d]) break;
            src -= src_stride[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    if (detail::recording<T>({a})) {
        detail::mark_output(out);
        Tensor<T> ac = a, oc = out;
        Tape<T>::active()->record([ac, oc, out_shape, src_stride, nd]() mutable {
            if (!ac.requires_grad()) return;
            ac.ensure_grad();
            const T* go = oc.grad();
            T* ga = ac.grad();
            std::vector<int64_t> idx(nd, 0);
            int64_t src = 0;
            const int64_t total = oc.numel();
            for (int64_t lin = 0; lin < total; ++lin) {
                ga[src] += go[lin];
                for (int d = nd - 1; d >= 0; --d) {
                    ++idx[d];
                    src += src_stride[d];
                    if (idx[d] < out_shape[d]) break;
                    src -= src_stride[d] * out_shape[d];
                    idx[d] = 0;
                }
            }
        });
    }
    return out;
}

// Swap the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    std::vector<int> perm(a.ndim());
    std::iota(perm.begin(), perm.end(), 0);
    if (a.ndim() < 2) throw ShapeError("transpose requires rank >= 2, got " + shape_str(a.shape()));
    std::swap(perm[a.ndim() - 2], perm[a.ndim() - 1]);
    return permute(a, perm);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int64_t start, int64_t len) {
    if (axis < 0) axis += a.ndim();
    if (axis < 0 || axis >= a.ndim())
        throw ShapeError("slice axis out of range for shape " + shape_str(a.shape()));
    if (start < 0 || len < 0 || start + len > a.dim(axis))
        throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for shape " + shape_str(a.shape()));
    std::vector<int64_t> out_shape = a.shape();
    out_shape[axis] = len;
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.dim(d);
    for (int d = axis + 1; d < a.ndim(); ++d) inner *= a.dim(d);
    const int64_t asz = a.dim(axis);
    const T* pa = a.data();
    T* po = out.data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(pa + (o * asz + start) * inner, pa + (o * asz + start + len) * inner,
                  po + o * len * inner);
    if (detail::recording<T>({a})) {
        detail::mark_output(out);
        Tensor<T> ac = a, oc = out;
        Tape<T>::active()->record([ac, oc, outer, inner, asz, start, len]() mutable {
            if (!ac.requires_grad()) return;
            ac.ensure_grad();
            const T* go = oc.grad();
            T* ga = ac.grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < len * inner; ++i)
                    ga[(o * asz + start) * inner + i] += go[o * len * inner + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of empty list");
    int nd = parts[0].ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd)
        throw ShapeError("concat axis out of range for shape " + shape_str(parts[0].shape()));
    std::vector<int64_t> out_shape = parts[0].shape();
    int64_t total_axis = 0;
    for (const auto& p : parts) {
        if (p.ndim() != nd)
            throw ShapeError("concat rank mismatch: " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        for (int d = 0; d < nd; ++d)
            if (d != axis && p.dim(d) != out_shape[d])
                throw ShapeError("concat extent mismatch: " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        total_axis += p.dim(axis);
    }
    out_shape[axis] = total_axis;
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[d];
    for (int d = axis + 1; d < nd; ++d) inner *= out_shape[d];
    T* po = out.data();
    int64_t offset = 0;
    for (const auto& p : parts) {
        const int64_t psz = p.dim(axis);
        const T* pp = p.data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(pp + o * psz * inner, pp + (o + 1) * psz * inner,
                      po + (o * total_axis + offset) * inner);
        offset += psz;
    }
    bool rec = false;
    if (Tape<T>::active())
        for (const auto& p : parts)
            if (p.requires_grad()) rec = true;
    if (rec) {
        detail::mark_output(out);
        std::vector<Tensor<T>> pc = parts;
        Tensor<T> oc = out;
        Tape<T>::active()->record([pc, oc, outer, inner, total_axis]() mutable {
            const T* go = oc.grad();
            int64_t offset = 0;
            for (auto& p : pc) {
                const int64_t psz = p.numel() / (outer * inner);
                if (p.requires_grad()) {
                    p.ensure_grad();
                    T* gp = p.grad();
                    for (int64_t o = 0; o < outer; ++o)
                        for (int64_t i = 0; i < psz * inner; ++i)
                            gp[o * psz * inner + i] += go[(o * total_axis + offset) * inner + i];
                }
                offset += psz;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, int axis) {
    return concat(std::vector<Tensor<T>>(parts), axis);
}

template <typename T>
Tensor<T> flip(const Tensor<T>& a, int axis) {
    if (axis < 0) axis += a.ndim();
    if (axis < 0 || axis >= a.ndim())
        throw ShapeError("flip axis out of range for shape " + shape_str(a.shape()));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.dim(d);
    for (int d = axis + 1; d < a.ndim(); ++d) inner *= a.dim(d);
    const int64_t asz = a.dim(axis);
    const T* pa = a.data();
    T* po = out.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < asz; ++j)
            std::copy(pa + (o * asz + j) * inner, pa + (o * asz + j + 1) * inner,
                      po + (o * asz + (asz - 1 - j)) * inner);
    if (detail::recording<T>({a})) {
        detail::mark_output(out);
        Tensor<T> ac = a, oc = out;
        Tape<T>::active()->record([ac, oc, outer, inner, asz]() mutable {
            if (!ac.requires_grad()) return;
            ac.ensure_grad();
            const T* go = oc.grad();
            T* ga = ac.grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t j = 0; j < asz; ++j)
                    for (int64_t i = 0; i < inner; ++i)
                        ga[(o * asz + j) * inner + i] += go[(o * asz + (asz - 1 - j)) * inner + i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Nonlinear ops.

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    if (axis < 0) axis += x.ndim();
    if (axis < 0 || axis >= x.ndim())
        throw ShapeError("softmax axis out of range for shape " + shape_str(x.shape()));
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= x.dim(d);
    for (int d = axis + 1; d < x.ndim(); ++d) inner *= x.dim(d);
    const int64_t len = x.dim(axis);
    const T* px = x.data();
    T* po = out.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * len * inner + i;
            T mx = px[base];
            for (int64_t j = 1; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
            T s = 0;
            for (int64_t j = 0; j < len; ++j) {
                const T e = std::exp(px[base + j * inner] - mx);
                po[base + j * inner] = e;
                s += e;
            }
            const T inv = T(1) / s;
            for (int64_t j = 0; j < len; ++j) po[base + j * inner] *= inv;
        }
    if (detail::recording<T>({x})) {
        detail::mark_output(out);
        Tensor<T> xc = x, oc = out;
        Tape<T>::active()->record([xc, oc, outer, inner, len]() mutable {
            if (!xc.requires_grad()) return;
            xc.ensure_grad();
            const T* y = oc.data();
            const T* gy = oc.grad();
            T* gx = xc.grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    const int64_t base = o * len * inner + i;
                    T dot = 0;
                    for (int64_t j = 0; j < len; ++j)
                        dot += gy[base + j * inner] * y[base + j * inner];
                    for (int64_t j = 0; j < len; ++j)
                        gx[base + j * inner] +=
                            y[base + j * inner] * (gy[base + j * inner] - dot);
                }
        });
    }
    detail::maybe_validate(out, "softmax");
    return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const T inv_sqrt2 = T(0.70710678118654752440);
    for (int64_t i = 0; i < x.numel(); ++i)
        po[i] = T(0.5) * px[i] * (T(1) + std::erf(px[i] * inv_sqrt2));
    if (detail::recording<T>({x})) {
        detail::mark_output(out);
        Tensor<T> xc = x, oc = out;
        Tape<T>::active()->record([xc, oc, inv_sqrt2]() mutable {
            if (!xc.requires_grad()) return;
            xc.ensure_grad();
            const T* px = xc.data();
            const T* gy = oc.grad();
            T* gx = xc.grad();
            const T inv_sqrt2pi = T(0.39894228040143267794);
            for (int64_t i = 0; i < xc.numel(); ++i) {
                const T v = px[i];
                const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
                gx[i] += gy[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

// Normalization over the last axis with learned gain/bias of that extent.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
    const int64_t c = x.dim(-1);
    if (gain.numel() != c || bias.numel() != c)
        throw ShapeError("layer_norm gain/bias must have extent " + std::to_string(c));
    const int64_t lanes = x.numel() / c;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    std::vector<T> inv_std(lanes), mean_l(lanes);
    const T* px = x.data();
    const T* pg = gain.data();
    const T* pb = bias.data();
    T* po = out.data();
    for (int64_t l = 0; l < lanes; ++l) {
        const T* row = px + l * c;
        T mu = 0;
        for (int64_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<T>(c);
        T var = 0;
        for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(c);
        const T ist = T(1) / std::sqrt(var + eps);
        mean_l[l] = mu;
        inv_std[l] = ist;
        T* orow = po + l * c;
        for (int64_t j = 0; j < c; ++j) orow[j] = pg[j] * (row[j] - mu) * ist + pb[j];
    }
    if (detail::recording<T>({x, gain, bias})) {
        detail::mark_output(out);
        Tensor<T> xc = x, gc = gain, bc = bias, oc = out;
        Tape<T>::active()->record([xc, gc, bc, oc, inv_std, mean_l, c, lanes]() mutable {
            const T* px = xc.data();
            const T* pg = gc.data();
            const T* gy = oc.grad();
            for (int64_t l = 0; l < lanes; ++l) {
                const T* row = px + l * c;
                const T* gyr = gy + l * c;
                const T mu = mean_l[l], ist = inv_std[l];
                T m_dxhat = 0, m_dxhat_xhat = 0;
                for (int64_t j = 0; j < c; ++j) {
                    const T xhat = (row[j] - mu) * ist;
                    const T dxhat = gyr[j] * pg[j];
                    m_dxhat += dxhat;
                    m_dxhat_xhat += dxhat * xhat;
                    detail::accum(gc, j, gyr[j] * xhat);
                    detail::accum(bc, j, gyr[j]);
                }
                m_dxhat /= static_cast<T>(c);
                m_dxhat_xhat /= static_cast<T>(c);
                if (xc.requires_grad()) {
                    xc.ensure_grad();
                    T* gx = xc.grad() + l * c;
                    for (int64_t j = 0; j < c; ++j) {
                        const T xhat = (row[j] - mu) * ist;
                        const T dxhat = gyr[j] * pg[j];
                        gx[j] += ist * (dxhat - m_dxhat - xhat * m_dxhat_xhat);
                    }
                }
            }
        });
    }
    detail::maybe_validate(out, "layer_norm");
    return out;
}

// Rotate channel pairs (2j, 2j+1) of row n by angle direction * pos[n] * theta[j].
template <typename T>
Tensor<T> rotate_pairs(const Tensor<T>& x, const std::vector<T>& theta,
                       const std::vector<int64_t>& positions, int direction) {
    if (x.ndim() != 2) throw ShapeError("rotate_pairs expects [N,d], got " + shape_str(x.shape()));
    const int64_t n = x.dim(0), d = x.dim(1);
    if (d % 2 != 0) throw ShapeError("rotate_pairs needs an even channel count, got " +
                                     std::to_string(d));
    if (static_cast<int64_t>(theta.size()) != d / 2)
        throw ShapeError("rotate_pairs needs one angle per channel pair: expected " +
                         std::to_string(d / 2) + ", got " + std::to_string(theta.size()));
    if (static_cast<int64_t>(positions.size()) != n)
        throw ShapeError("rotate_pairs needs one position per row");
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int64_t i = 0; i < n; ++i) {
        const T* row = px + i * d;
        T* orow = po + i * d;
        for (int64_t j = 0; j < d / 2; ++j) {
            const T ang = static_cast<T>(direction) * static_cast<T>(positions[i]) * theta[j];
            const T cs = std::cos(ang), sn = std::sin(ang);
            const T a = row[2 * j], b = row[2 * j + 1];
            orow[2 * j] = cs * a - sn * b;
            orow[2 * j + 1] = sn * a + cs * b;
        }
    }
    if (detail::recording<T>({x})) {
        detail::mark_output(out);
        Tensor<T> xc = x, oc = out;
        Tape<T>::active()->record([xc, oc, theta, positions, direction, n, d]() mutable {
            if (!xc.requires_grad()) return;
            xc.ensure_grad();
            const T* gy = oc.grad();
            T* gx = xc.grad();
            for (int64_t i = 0; i < n; ++i) {
                const T* gyr = gy + i * d;
                T* gxr = gx + i * d;
                for (int64_t j = 0; j < d / 2; ++j) {
                    const T ang =
                        static_cast<T>(direction) * static_cast<T>(positions[i]) * theta[j];
                    const T cs = std::cos(ang), sn = std::sin(ang);
                    const T ga = gyr[2 * j], gb = gyr[2 * j + 1];
                    gxr[2 * j] += cs * ga + sn * gb;
                    gxr[2 * j + 1] += -sn * ga + cs * gb;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> apply_rotation(const Tensor<T>& x, const std::vector<T>& theta, int direction) {
    std::vector<int64_t> pos(static_cast<size_t>(x.dim(0)));
    std::iota(pos.begin(), pos.end(), 0);
    return rotate_pairs(x, theta, pos, direction);
}

// ---------------------------------------------------------------------------
// Image-layout ops ([C,h,w] tensors).

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, int block) {
    if (x.ndim() != 3)
        throw ShapeError("space_to_depth expects [C,h,w], got " + shape_str(x.shape()));
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), b = block;
    if (b < 1 || h % b != 0 || w % b != 0)
        throw ShapeError("space_to_depth block " + std::to_string(block) +
                         " does not divide spatial extents of " + shape_str(x.shape()));
    const int64_t oh = h / b, ow = w / b;
    Tensor<T> out = Tensor<T>::zeros({c * b * b, oh, ow});
    const T* px = x.data();
    T* po = out.data();
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t dy = 0; dy < b; ++dy)
            for (int64_t dx = 0; dx < b; ++dx) {
                const int64_t oc = (ci * b + dy) * b + dx;
                for (int64_t y = 0; y < oh; ++y)
                    for (int64_t xx = 0; xx < ow; ++xx)
                        po[(oc * oh + y) * ow + xx] =
                            px[(ci * h + y * b + dy) * w + xx * b + dx];
            }
    if (detail::recording<T>({x})) {
        detail::mark_output(out);
        Tensor<T> xc = x, oc_t = out;
        Tape<T>::active()->record([xc, oc_t, c, h, w, b, oh, ow]() mutable {
            if (!xc.requires_grad()) return;
            xc.ensure_grad();
            const T* go = oc_t.grad();
            T* gx = xc.grad();
            for (int64_t ci = 0; ci < c; ++ci)
                for (int64_t dy = 0; dy < b; ++dy)
                    for (int64_t dx = 0; dx < b; ++dx) {
                        const int64_t oc = (ci * b + dy) * b + dx;
                        for (int64_t y = 0; y < oh; ++y)
                            for (int64_t xx = 0; xx < ow; ++xx)
                                gx[(ci * h + y * b + dy) * w + xx * b + dx] +=
                                    go[(oc * oh + y) * ow + xx];
                    }
        });
    }
    return out;
}

// Per-pixel affine map over channels; equivalent to a matmul on the
// flattened spatial axis.
template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.ndim() != 3)
        throw ShapeError("pointwise_conv expects x [C_in,h,w], got " + shape_str(x.shape()));
    if (w.ndim() != 2)
        throw ShapeError("pointwise_conv expects w [C_out,C_in], got " + shape_str(w.shape()));
    const int64_t cin = x.dim(0), h = x.dim(1), ww = x.dim(2);
    const int64_t cout = w.dim(0);
    if (w.dim(1) != cin)
        throw ShapeError("pointwise_conv channel mismatch: x " + shape_str(x.shape()) + " vs w " +
                         shape_str(w.shape()));
    if (b.numel() != cout)
        throw ShapeError("pointwise_conv bias must have extent " + std::to_string(cout) +
                         ", got " + shape_str(b.shape()));
    const int64_t hw = h * ww;
    Tensor<T> out = Tensor<T>::zeros({cout, h, ww});
    detail::gemm_nn(w.data(), x.data(), out.data(), cout, cin, hw);
    {
        T* po = out.data();
        const T* pb = b.data();
        for (int64_t co = 0; co < cout; ++co)
            for (int64_t p = 0; p < hw; ++p) po[co * hw + p] += pb[co];
    }
    if (detail::recording<T>({x, w, b})) {
        detail::mark_output(out);
        Tensor<T> xc = x, wc = w, bc = b, oc = out;
        Tape<T>::active()->record([xc, wc, bc, oc, cin, cout, hw]() mutable {
            const T* go = oc.grad();
            if (wc.requires_grad()) {
                wc.ensure_grad();
                detail::gemm_acc_da(go, xc.data(), wc.grad(), cout, cin, hw);
            }
            if (xc.requires_grad()) {
                xc.ensure_grad();
                detail::gemm_acc_db(wc.data(), go, xc.grad(), cout, cin, hw);
            }
            if (bc.requires_grad()) {
                bc.ensure_grad();
                T* gb = bc.grad();
                for (int64_t co = 0; co < cout; ++co) {
                    T s = 0;
                    for (int64_t p = 0; p < hw; ++p) s += go[co * hw + p];
                    gb[co] += s;
                }
            }
        });
    }
    detail::maybe_validate(out, "pointwise_conv");
    return out;
}

namespace detail {

struct ResizeTap {
    int64_t lo, hi;
    double frac;
};

// Half-pixel-center source coordinate (align_corners = false).
inline ResizeTap resize_tap(int64_t dst, int64_t out_size, int64_t in_size) {
    ResizeTap t;
    double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in_size) /
                     static_cast<double>(out_size) -
                 0.5;
    if (src < 0.0) src = 0.0;
    const double fl = std::floor(src);
    t.lo = static_cast<int64_t>(fl);
    if (t.lo >= in_size - 1) {
        t.lo = in_size - 1;
        t.hi = in_size - 1;
        t.frac = 0.0;
    } else {
        t.hi = t.lo + 1;
        t.frac = src - fl;
    }
    return t;
}

}  // namespace detail

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
    if (x.ndim() != 3)
        throw ShapeError("bilinear_resize expects [C,h,w], got " + shape_str(x.shape()));
    if (out_h < 1 || out_w < 1)
        throw ShapeError("bilinear_resize target " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " must be at least 1x1");
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (out_h == h && out_w == w) {
        Tensor<T> out = Tensor<T>::zeros(x.shape());
        std::copy(x.data(), x.data() + x.numel(), out.data());
        if (detail::recording<T>({x})) {
            detail::mark_output(out);
            Tensor<T> xc = x, oc = out;
            Tape<T>::active()->record([xc, oc]() mutable {
                const T* go = oc.grad();
                for (int64_t i = 0; i < xc.numel(); ++i) detail::accum(xc, i, go[i]);
            });
        }
        return out;
    }
    std::vector<detail::ResizeTap> ty(static_cast<size_t>(out_h)), tx(static_cast<size_t>(out_w));
    for (int64_t y = 0; y < out_h; ++y) ty[y] = detail::resize_tap(y, out_h, h);
    for (int64_t xx = 0; xx < out_w; ++xx) tx[xx] = detail::resize_tap(xx, out_w, w);

    Tensor<T> out = Tensor<T>::zeros({c, out_h, out_w});
    const T* px = x.data();
    T* po = out.data();
    for (int64_t ci = 0; ci < c; ++ci) {
        const T* plane = px + ci * h * w;
        for (int64_t y = 0; y < out_h; ++y) {
            const auto& t0 = ty[y];
            const T fy = static_cast<T>(t0.frac);
            for (int64_t xx = 0; xx < out_w; ++xx) {
                const auto& t1 = tx[xx];
                const T fx = static_cast<T>(t1.frac);
                const T v00 = plane[t0.lo * w + t1.lo], v01 = plane[t0.lo * w + t1.hi];
                const T v10 = plane[t0.hi * w + t1.lo], v11 = plane[t0.hi * w + t1.hi];
                // lerp form keeps constants exact
                const T top = v00 + fx * (v01 - v00);
                const T bot = v10 + fx * (v11 - v10);
                po[(ci * out_h + y) * out_w + xx] = top + fy * (bot - top);
            }
        }
    }
    if (detail::recording<T>({x})) {
        detail::mark_output(out);
        Tensor<T> xc = x, oc = out;
        Tape<T>::active()->record([xc, oc, ty, tx, c, h, w, out_h, out_w]() mutable {
            if (!xc.requires_grad()) return;
            xc.ensure_grad();
            const T* go = oc.grad();
            T* gx = xc.grad();
            for (int64_t ci = 0; ci < c; ++ci) {
                T* gplane = gx + ci * h * w;
                for (int64_t y = 0; y < out_h; ++y) {
                    const auto& t0 = ty[y];
                    const T fy = static_cast<T>(t0.frac);
                    for (int64_t xx = 0; xx < out_w; ++xx) {
                        const auto& t1 = tx[xx];
                        const T fx = static_cast<T>(t1.frac);
                        const T g = go[(ci * out_h + y) * out_w + xx];
                        const T gtop = g * (T(1) - fy), gbot = g * fy;
                        gplane[t0.lo * w + t1.lo] += gtop * (T(1) - fx);
                        gplane[t0.lo * w + t1.hi] += gtop * fx;
                        gplane[t0.hi * w + t1.lo] += gbot * (T(1) - fx);
                        gplane[t0.hi * w + t1.hi] += gbot * fx;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Label maps and the classification loss.

struct LabelMap {
    int64_t h = 0, w = 0;
    std::vector<int32_t> v;

    LabelMap() = default;
    LabelMap(int64_t hh, int64_t ww, int32_t fill = 0)
        : h(hh), w(ww), v(static_cast<size_t>(hh * ww), fill) {}

    int32_t& at(int64_t y, int64_t x) { return v[static_cast<size_t>(y * w + x)]; }
    int32_t at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
    bool operator==(const LabelMap&) const = default;
};

// Mean negative log-softmax over non-ignored pixels. When every pixel is
// ignored the loss is 0 and *n_valid_out reports 0.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const LabelMap& target, int32_t ignore_index,
                        int64_t* n_valid_out = nullptr) {
    if (logits.ndim() != 3)
        throw ShapeError("cross_entropy expects logits [K,h,w], got " + shape_str(logits.shape()));
    const int64_t k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    if (target.h != h || target.w != w)
        throw ShapeError("cross_entropy target " + std::to_string(target.h) + "x" +
                         std::to_string(target.w) + " does not match logits " +
                         shape_str(logits.shape()));
    const int64_t hw = h * w;
    const T* pz = logits.data();
    int64_t n_valid = 0;
    double total = 0.0;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const int32_t t = target.at(y, x);
            if (t == ignore_index) continue;
            if (t < 0 || t >= k)
                throw ValueError("cross_entropy label " + std::to_string(t) +
                                 " out of range [0," + std::to_string(k) + ") at pixel (y=" +
                                 std::to_string(y) + ",x=" + std::to_string(x) + ")");
            const int64_t p = y * w + x;
            T mx = pz[p];
            for (int64_t c = 1; c < k; ++c) mx = std::max(mx, pz[c * hw + p]);
            double s = 0.0;
            for (int64_t c = 0; c < k; ++c)
                s += std::exp(static_cast<double>(pz[c * hw + p] - mx));
            total += std::log(s) - static_cast<double>(pz[t * hw + p] - mx);
            ++n_valid;
        }
    if (n_valid_out) *n_valid_out = n_valid;
    const T loss_val = n_valid ? static_cast<T>(total / static_cast<double>(n_valid)) : T(0);
    // built without the finite-value factory guard: a diverging loss must
    // surface as a number the training loop can inspect, not as a throw here
    Tensor<T> out = Tensor<T>::zeros({});
    out.data()[0] = loss_val;
    if (detail::recording<T>({logits}) && n_valid > 0) {
        detail::mark_output(out);
        Tensor<T> zc = logits, oc = out;
        LabelMap tc = target;
        Tape<T>::active()->record([zc, oc, tc, ignore_index, k, h, w, hw, n_valid]() mutable {
            if (!zc.requires_grad()) return;
            zc.ensure_grad();
            const T g = oc.grad()[0] / static_cast<T>(n_valid);
            const T* pz = zc.data();
            T* gz = zc.grad();
            std::vector<T> prob(static_cast<size_t>(k));
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    const int32_t t = tc.at(y, x);
                    if (t == ignore_index) continue;
                    const int64_t p = y * w + x;
                    T mx = pz[p];
                    for (int64_t c = 1; c < k; ++c) mx = std::max(mx, pz[c * hw + p]);
                    T s = 0;
                    for (int64_t c = 0; c < k; ++c) {
                        prob[c] = std::exp(pz[c * hw + p] - mx);
                        s += prob[c];
                    }
                    const T inv = T(1) / s;
                    for (int64_t c = 0; c < k; ++c)
                        gz[c * hw + p] += g * (prob[c] * inv - (c == t ? T(1) : T(0)));
                }
        });
    }
    return out;
}

// Per-pixel argmax over the class axis; ties take the lowest class index.
template <typename T>
LabelMap argmax_channels(const Tensor<T>& logits) {
    if (logits.ndim() != 3)
        throw ShapeError("argmax_channels expects [K,h,w], got " + shape_str(logits.shape()));
    const int64_t k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    const int64_t hw = h * w;
    LabelMap out(h, w);
    const T* pz = logits.data();
    for (int64_t p = 0; p < hw; ++p) {
        int32_t best = 0;
        T bv = pz[p];
        for (int64_t c = 1; c < k; ++c)
            if (pz[c * hw + p] > bv) {
                bv = pz[c * hw + p];
                best = static_cast<int32_t>(c);
            }
        out.v[static_cast<size_t>(p)] = best;
    }
    return out;
}

template <typename T>
void validate_finite(const Tensor<T>& t) {
    const T* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(static_cast<double>(p[i])))
            throw ValueError("tensor holds non-finite value " +
                             std::to_string(static_cast<double>(p[i])) + " at flat index " +
                             std::to_string(i));
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    T m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace segkit
