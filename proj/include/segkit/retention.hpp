#pragma once

// Retention attention kernels: causal retention in its three equivalent
// paradigms, bidirectional retention, the dense 2D Manhattan-decay form, and
// the axis-decomposed form. All kernels run on projected Q/K/V matrices and
// record on the active tape through the tensor ops they are built from.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "segkit/tensor.hpp"

namespace segkit {

// powers[k] = gamma^k as the left-associated running product; every decay
// builder draws from the same table so factorization identities hold bitwise.
template <typename T>
std::vector<T> decay_powers(int64_t count, T gamma) {
    std::vector<T> p(static_cast<size_t>(count));
    if (count == 0) return p;
    p[0] = T(1);
    for (int64_t k = 1; k < count; ++k)
        p[static_cast<size_t>(k)] = p[static_cast<size_t>(k - 1)] * gamma;
    return p;
}

template <typename T>
Tensor<T> build_causal_decay(int64_t n, T gamma) {
    auto pw = decay_powers(n, gamma);
    Tensor<T> d = Tensor<T>::zeros({n, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j <= i; ++j) d(i, j) = pw[static_cast<size_t>(i - j)];
    return d;
}

template <typename T>
Tensor<T> build_bidirectional_decay(int64_t n, T gamma) {
    auto pw = decay_powers(n, gamma);
    Tensor<T> d = Tensor<T>::zeros({n, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) d(i, j) = pw[static_cast<size_t>(std::abs(i - j))];
    return d;
}

// Tokens are row-major over the (h, w) grid; entry (p, q) decays with the
// Manhattan distance between the two pixels.
template <typename T>
Tensor<T> build_2d_decay(int64_t h, int64_t w, T gamma) {
    auto pw = decay_powers(std::max(h, w), gamma);
    const int64_t n = h * w;
    Tensor<T> d = Tensor<T>::zeros({n, n});
    for (int64_t p = 0; p < n; ++p) {
        const int64_t py = p / w, px = p % w;
        for (int64_t q = 0; q < n; ++q) {
            const int64_t qy = q / w, qx = q % w;
            d(p, q) = pw[static_cast<size_t>(std::abs(py - qy))] *
                      pw[static_cast<size_t>(std::abs(px - qx))];
        }
    }
    return d;
}

enum class Axis { H, W };

// [h,h] mask over rows (Axis::H) or [w,w] over columns (Axis::W) of the grid.
template <typename T>
Tensor<T> build_axial_decay(int64_t h, int64_t w, T gamma, Axis axis) {
    return build_bidirectional_decay(axis == Axis::H ? h : w, gamma);
}

template <typename T>
void mask_to_csv(const Tensor<T>& m, std::ostream& os) {
    if (m.ndim() != 2) throw ShapeError("mask_to_csv expects a 2-D mask, got " +
                                        shape_str(m.shape()));
    const auto old_prec = os.precision(17);
    for (int64_t i = 0; i < m.dim(0); ++i) {
        for (int64_t j = 0; j < m.dim(1); ++j) {
            if (j) os << ',';
            os << m(i, j);
        }
        os << '\n';
    }
    os.precision(old_prec);
}

// Rotation angles theta_j = base^(-2j / d_k), one per channel pair.
template <typename T>
std::vector<T> default_theta(int64_t d_k, T base = T(10000)) {
    if (d_k % 2 != 0) throw ShapeError("rotation needs an even head dim, got " +
                                       std::to_string(d_k));
    std::vector<T> theta(static_cast<size_t>(d_k / 2));
    for (int64_t j = 0; j < d_k / 2; ++j)
        theta[static_cast<size_t>(j)] =
            std::pow(base, static_cast<T>(-2 * j) / static_cast<T>(d_k));
    return theta;
}

template <typename T>
struct RetentionParams {
    T gamma = T(0.9);
    bool use_rotation = false;
    std::vector<T> theta;   // d_k/2 angles when use_rotation is set
    int rot_direction = 1;  // +1 forward phase, -1 the inverse
};

namespace detail {

template <typename T>
void check_qkv(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
        throw ShapeError("retention expects rank-2 q/k/v, got " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
    if (q.shape() != k.shape())
        throw ShapeError("retention q/k shapes differ: " + shape_str(q.shape()) + " vs " +
                         shape_str(k.shape()));
    if (v.dim(0) != q.dim(0))
        throw ShapeError("retention q/v token counts differ: " + shape_str(q.shape()) + " vs " +
                         shape_str(v.shape()));
}

// Rotate rows n of q and k by phase positions[n]; shared by every kernel so
// the paradigms agree by construction.
template <typename T>
void rotate_qk(Tensor<T>& q, Tensor<T>& k, const RetentionParams<T>& p,
               const std::vector<int64_t>& positions) {
    if (!p.use_rotation) return;
    q = rotate_pairs(q, p.theta, positions, p.rot_direction);
    k = rotate_pairs(k, p.theta, positions, p.rot_direction);
}

inline std::vector<int64_t> iota_positions(int64_t n, int64_t start = 0) {
    std::vector<int64_t> pos(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = start + i;
    return pos;
}

}  // namespace detail

// Parallel form: (Q K^T . D) V with the causal decay mask.
template <typename T>
Tensor<T> retention_parallel(Tensor<T> q, Tensor<T> k, const Tensor<T>& v,
                             const RetentionParams<T>& p) {
    detail::check_qkv(q, k, v);
    const int64_t n = q.dim(0);
    detail::rotate_qk(q, k, p, detail::iota_positions(n));
    Tensor<T> d = build_causal_decay(n, p.gamma);
    return matmul(mul(matmul(q, transpose(k)), d), v);
}

template <typename T>
struct RecurrentState {
    Tensor<T> s;      // [d_k, d_v] accumulated outer products
    int64_t pos = 0;  // absolute position of the next token
};

// Recurrent form: S_n = gamma S_{n-1} + k_n^T v_n, o_n = q_n S_n. Pass a
// state to stream a sequence through in segments.
template <typename T>
Tensor<T> retention_recurrent(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                              const RetentionParams<T>& p, RecurrentState<T>* state = nullptr) {
    detail::check_qkv(q, k, v);
    const int64_t n = q.dim(0), dk = q.dim(1), dv = v.dim(1);
    Tensor<T> s = (state && state->s.defined()) ? state->s : Tensor<T>::zeros({dk, dv});
    const int64_t pos0 = state ? state->pos : 0;
    std::vector<Tensor<T>> rows;
    rows.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Tensor<T> qi = slice(q, 0, i, 1);
        Tensor<T> ki = slice(k, 0, i, 1);
        Tensor<T> vi = slice(v, 0, i, 1);
        if (p.use_rotation) {
            const std::vector<int64_t> pos{pos0 + i};
            qi = rotate_pairs(qi, p.theta, pos, p.rot_direction);
            ki = rotate_pairs(ki, p.theta, pos, p.rot_direction);
        }
        s = add(scale(s, p.gamma), matmul(transpose(ki), vi));
        rows.push_back(matmul(qi, s));
    }
    if (state) {
        state->s = s;
        state->pos = pos0 + n;
    }
    return concat(rows, 0);
}

// Chunkwise form: parallel inside each chunk, recurrent state across chunks.
template <typename T>
Tensor<T> retention_chunkwise(Tensor<T> q, Tensor<T> k, const Tensor<T>& v,
                              const RetentionParams<T>& p, int64_t chunk) {
    detail::check_qkv(q, k, v);
    if (chunk < 1) throw ValueError("chunk size must be positive, got " + std::to_string(chunk));
    const int64_t n = q.dim(0), dk = q.dim(1), dv = v.dim(1);
    detail::rotate_qk(q, k, p, detail::iota_positions(n));
    Tensor<T> s = Tensor<T>::zeros({dk, dv});
    std::vector<Tensor<T>> outs;
    for (int64_t a = 0; a < n; a += chunk) {
        const int64_t len = std::min(chunk, n - a);
        Tensor<T> qc = slice(q, 0, a, len);
        Tensor<T> kc = slice(k, 0, a, len);
        Tensor<T> vc = slice(v, 0, a, len);
        Tensor<T> inner =
            matmul(mul(matmul(qc, transpose(kc)), build_causal_decay(len, p.gamma)), vc);
        auto pw = decay_powers(len + 1, p.gamma);
        if (a > 0) {
            // o_{a+i} += gamma^(i+1) q_{a+i} S
            Tensor<T> cross_decay = Tensor<T>::zeros({len, 1});
            for (int64_t i = 0; i < len; ++i) cross_decay(i, 0) = pw[static_cast<size_t>(i + 1)];
            inner = add(inner, mul(matmul(qc, s), cross_decay));
        }
        outs.push_back(inner);
        // S <- gamma^len S + sum_j gamma^(len-1-j) k_j^T v_j
        Tensor<T> state_decay = Tensor<T>::zeros({len, 1});
        for (int64_t j = 0; j < len; ++j)
            state_decay(j, 0) = pw[static_cast<size_t>(len - 1 - j)];
        Tensor<T> inflow = matmul(transpose(kc), mul(vc, state_decay));
        s = (a == 0) ? inflow : add(scale(s, pw[static_cast<size_t>(len)]), inflow);
    }
    return outs.size() == 1 ? outs[0] : concat(outs, 0);
}

// Bidirectional retention. With use_softmax the scores pass through a scaled
// softmax before masking, which is the attention flavor the spatial kernels
// build on; without it this is the plain masked bilinear form.
template <typename T>
Tensor<T> bi_retention(Tensor<T> q, Tensor<T> k, const Tensor<T>& v,
                       const RetentionParams<T>& p, bool use_softmax) {
    detail::check_qkv(q, k, v);
    const int64_t n = q.dim(0), dk = q.dim(1);
    detail::rotate_qk(q, k, p, detail::iota_positions(n));
    Tensor<T> scores = matmul(q, transpose(k));
    if (use_softmax)
        scores = softmax(scale(scores, T(1) / std::sqrt(static_cast<T>(dk))), 1);
    return matmul(mul(scores, build_bidirectional_decay(n, p.gamma)), v);
}

// Dense spatial attention: softmax(Q K^T / sqrt(d_k)) masked by the 2D
// Manhattan decay. Rotation phase of a pixel is x + y, matching the sum of
// the two axial phases the decomposed form applies.
template <typename T>
Tensor<T> masa_full(Tensor<T> q, Tensor<T> k, const Tensor<T>& v, int64_t h, int64_t w,
                    const RetentionParams<T>& p) {
    detail::check_qkv(q, k, v);
    const int64_t n = q.dim(0), dk = q.dim(1);
    if (n != h * w)
        throw ShapeError("masa_full token count " + std::to_string(n) + " does not match grid " +
                         std::to_string(h) + "x" + std::to_string(w));
    if (p.use_rotation) {
        std::vector<int64_t> pos(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = i / w + i % w;
        q = rotate_pairs(q, p.theta, pos, p.rot_direction);
        k = rotate_pairs(k, p.theta, pos, p.rot_direction);
    }
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));
    if (!detail::recording<T>({q, k, v})) {
        // Streaming path: one score row at a time, never an n x n buffer.
        const int64_t dv = v.dim(1);
        const auto pw = decay_powers(std::max(h, w), p.gamma);
        Tensor<T> out = Tensor<T>::zeros({n, dv});
        std::vector<T> row(static_cast<size_t>(n));
        const T* pq = q.data();
        const T* pk = k.data();
        const T* pv = v.data();
        T* po = out.data();
        for (int64_t i = 0; i < n; ++i) {
            const T* qi = pq + i * dk;
            for (int64_t j = 0; j < n; ++j) {
                const T* kj = pk + j * dk;
                T s = 0;
                for (int64_t t = 0; t < dk; ++t) s += qi[t] * kj[t];
                row[static_cast<size_t>(j)] = s * inv_sqrt;
            }
            T mx = row[0];
            for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[static_cast<size_t>(j)]);
            T z = 0;
            for (int64_t j = 0; j < n; ++j) {
                const T e = std::exp(row[static_cast<size_t>(j)] - mx);
                row[static_cast<size_t>(j)] = e;
                z += e;
            }
            const T inv_z = T(1) / z;
            const int64_t iy = i / w, ix = i % w;
            T* oi = po + i * dv;
            for (int64_t j = 0; j < n; ++j) {
                const T wj = row[static_cast<size_t>(j)] * inv_z *
                             pw[static_cast<size_t>(std::abs(iy - j / w))] *
                             pw[static_cast<size_t>(std::abs(ix - j % w))];
                const T* vj = pv + j * dv;
                for (int64_t c = 0; c < dv; ++c) oi[c] += wj * vj[c];
            }
        }
        return out;
    }
    Tensor<T> scores = softmax(scale(matmul(q, transpose(k)), inv_sqrt), 1);
    return matmul(mul(scores, build_2d_decay(h, w, p.gamma)), v);
}

// Axis-decomposed spatial attention: attend within rows under the W decay,
// then within columns under the H decay on that result.
template <typename T>
Tensor<T> resa_decomposed(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int64_t h,
                          int64_t w, const RetentionParams<T>& p) {
    detail::check_qkv(q, k, v);
    const int64_t n = q.dim(0), dk = q.dim(1), dv = v.dim(1);
    if (n != h * w)
        throw ShapeError("resa_decomposed token count " + std::to_string(n) +
                         " does not match grid " + std::to_string(h) + "x" + std::to_string(w));
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));

    auto rotated = [&](const Tensor<T>& t, bool along_w) {
        if (!p.use_rotation) return t;
        std::vector<int64_t> pos(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = along_w ? i % w : i / w;
        return rotate_pairs(t, p.theta, pos, p.rot_direction);
    };

    if (!detail::recording<T>({q, k, v})) {
        // Streaming path mirroring the tape path below, one score row at a time.
        const auto pw = decay_powers(std::max(h, w), p.gamma);
        Tensor<T> qw = rotated(q, true), kw = rotated(k, true);
        Tensor<T> qh = rotated(q, false), kh = rotated(k, false);
        Tensor<T> v1 = Tensor<T>::zeros({n, dv});
        Tensor<T> out = Tensor<T>::zeros({n, dv});
        std::vector<T> row(static_cast<size_t>(std::max(h, w)));
        auto block = [&](const T* qi, const T* kb, int64_t len, int64_t stride) {
            for (int64_t j = 0; j < len; ++j) {
                const T* kj = kb + j * stride * dk;
                T s = 0;
                for (int64_t t = 0; t < dk; ++t) s += qi[t] * kj[t];
                row[static_cast<size_t>(j)] = s * inv_sqrt;
            }
            T mx = row[0];
            for (int64_t j = 1; j < len; ++j) mx = std::max(mx, row[static_cast<size_t>(j)]);
            T z = 0;
            for (int64_t j = 0; j < len; ++j) {
                const T e = std::exp(row[static_cast<size_t>(j)] - mx);
                row[static_cast<size_t>(j)] = e;
                z += e;
            }
            const T inv_z = T(1) / z;
            for (int64_t j = 0; j < len; ++j) row[static_cast<size_t>(j)] *= inv_z;
        };
        for (int64_t r = 0; r < h; ++r) {
            const T* qb = qw.data() + r * w * dk;
            const T* kb = kw.data() + r * w * dk;
            const T* vb = v.data() + r * w * dv;
            T* ob = v1.data() + r * w * dv;
            for (int64_t x1 = 0; x1 < w; ++x1) {
                block(qb + x1 * dk, kb, w, 1);
                T* oi = ob + x1 * dv;
                for (int64_t x2 = 0; x2 < w; ++x2) {
                    const T wj = row[static_cast<size_t>(x2)] *
                                 pw[static_cast<size_t>(std::abs(x1 - x2))];
                    const T* vj = vb + x2 * dv;
                    for (int64_t c = 0; c < dv; ++c) oi[c] += wj * vj[c];
                }
            }
        }
        for (int64_t c = 0; c < w; ++c) {
            const T* qb = qh.data() + c * dk;
            const T* kb = kh.data() + c * dk;
            for (int64_t y1 = 0; y1 < h; ++y1) {
                block(qb + y1 * w * dk, kb, h, w);
                T* oi = out.data() + (y1 * w + c) * dv;
                for (int64_t y2 = 0; y2 < h; ++y2) {
                    const T wj = row[static_cast<size_t>(y2)] *
                                 pw[static_cast<size_t>(std::abs(y1 - y2))];
                    const T* vj = v1.data() + (y2 * w + c) * dv;
                    for (int64_t ch = 0; ch < dv; ++ch) oi[ch] += wj * vj[ch];
                }
            }
        }
        return out;
    }

    // row stage
    Tensor<T> qw = reshape(rotated(q, true), {h, w, dk});
    Tensor<T> kw = reshape(rotated(k, true), {h, w, dk});
    Tensor<T> v3 = reshape(v, {h, w, dv});
    Tensor<T> aw = softmax(scale(matmul(qw, transpose(kw)), inv_sqrt), 2);
    aw = mul(aw, build_axial_decay(h, w, p.gamma, Axis::W));
    Tensor<T> v1 = matmul(aw, v3);  // [h,w,dv]

    // column stage on the row-stage output
    Tensor<T> qh = permute(reshape(rotated(q, false), {h, w, dk}), {1, 0, 2});
    Tensor<T> kh = permute(reshape(rotated(k, false), {h, w, dk}), {1, 0, 2});
    Tensor<T> v1p = permute(v1, {1, 0, 2});  // [w,h,dv]
    Tensor<T> ah = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 2);
    ah = mul(ah, build_axial_decay(h, w, p.gamma, Axis::H));
    Tensor<T> v2 = matmul(ah, v1p);  // [w,h,dv]
    return reshape(permute(v2, {1, 0, 2}), {n, dv});
}

}  // namespace segkit
