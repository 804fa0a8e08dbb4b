#pragma once

// Wall-clock comparison of full-grid attention vs its axis decomposition and
// of the three retention paradigms. Correctness gates run before any timing.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "segkit/retention.hpp"

namespace segkit {

struct BenchRecord {
    std::string kernel;
    int64_t h = 0;
    int64_t w = 0;
    int64_t n = 0;
    int64_t d_k = 0;
    int64_t heads = 1;
    int64_t ns_median = 0;
    double flops_est = 0.0;
};

struct BenchOptions {
    int trials = 7;
    int warmup = 2;
    int64_t d_k = 4;
    int64_t d_v = 4;
    double gamma = 0.9;
    bool use_rotation = true;
    uint64_t seed = 1234;
    // largest allowed element count for any [n,n] intermediate
    int64_t budget_elems = int64_t(1) << 25;
};

namespace detail {

template <class F>
int64_t time_median_ns(F&& fn, int trials, int warmup) {
    if (trials < 5) throw ValueError("benchmark needs at least 5 trials");
    for (int i = 0; i < warmup; ++i) fn();
    std::vector<int64_t> ns(static_cast<size_t>(trials));
    for (int i = 0; i < trials; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        ns[static_cast<size_t>(i)] =
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    }
    std::sort(ns.begin(), ns.end());
    return ns[ns.size() / 2];
}

inline RetentionParams<double> bench_params(const BenchOptions& opt) {
    RetentionParams<double> p;
    p.gamma = opt.gamma;
    p.use_rotation = opt.use_rotation;
    if (opt.use_rotation) p.theta = default_theta<double>(opt.d_k);
    return p;
}

struct BenchInputs {
    Tensor<double> q, k, v;
};

inline BenchInputs bench_inputs(int64_t n, const BenchOptions& opt) {
    Rng rng(opt.seed + static_cast<uint64_t>(n));
    BenchInputs in;
    in.q = Tensor<double>::randn({n, opt.d_k}, rng, 0.5);
    in.k = Tensor<double>::randn({n, opt.d_k}, rng, 0.5);
    in.v = Tensor<double>::randn({n, opt.d_v}, rng, 0.5);
    return in;
}

}  // namespace detail

// FLOP models behind the reported estimates; multiply-add counted as two.
inline double flops_full_attention(int64_t n, int64_t d_k, int64_t d_v) {
    return 2.0 * static_cast<double>(n) * static_cast<double>(n) *
           static_cast<double>(d_k + d_v);
}

inline double flops_decomposed_attention(int64_t h, int64_t w, int64_t d_k, int64_t d_v) {
    return 2.0 * static_cast<double>(h * w) * static_cast<double>(h + w) *
           static_cast<double>(d_k + d_v);
}

inline double flops_retention_parallel(int64_t n, int64_t d_k, int64_t d_v) {
    return flops_full_attention(n, d_k, d_v);
}

inline double flops_retention_recurrent(int64_t n, int64_t d_k, int64_t d_v) {
    return 4.0 * static_cast<double>(n) * static_cast<double>(d_k) * static_cast<double>(d_v);
}

inline double flops_retention_chunkwise(int64_t n, int64_t chunk, int64_t d_k, int64_t d_v) {
    return 2.0 * static_cast<double>(n) * static_cast<double>(chunk) *
               static_cast<double>(d_k + d_v) +
           flops_retention_recurrent(n / std::max<int64_t>(1, chunk) + 1, d_k, d_v) *
               static_cast<double>(chunk);
}

// Times masa_full against resa_decomposed on identical inputs. The two are
// first checked to agree on a degenerate one-row grid; disagreement is an
// error, not a benchmark record.
inline std::vector<BenchRecord> run_attention_sweep(
    const std::vector<std::pair<int64_t, int64_t>>& sizes, const BenchOptions& opt,
    std::vector<std::string>* notes = nullptr) {
    const auto params = detail::bench_params(opt);

    {
        auto in = detail::bench_inputs(16, opt);
        auto full = masa_full(in.q, in.k, in.v, 1, 16, params);
        auto dec = resa_decomposed(in.q, in.k, in.v, 1, 16, params);
        if (max_abs_diff(full, dec) >= 1e-10)
            throw Error("benchmark correctness gate failed: full and decomposed attention "
                        "disagree on a one-row grid");
    }

    std::vector<BenchRecord> out;
    for (const auto& [h, w] : sizes) {
        const int64_t n = h * w;
        if (h < 1 || w < 1) throw ValueError("benchmark grid sizes must be positive");
        if (n * n > opt.budget_elems) {
            if (notes)
                notes->push_back("skipped " + std::to_string(h) + "x" + std::to_string(w) +
                                 ": an " + std::to_string(n) + "^2 mask exceeds the memory budget");
            continue;
        }
        auto in = detail::bench_inputs(n, opt);
        BenchRecord full{"masa_full", h, w, n, opt.d_k, 1, 0,
                         flops_full_attention(n, opt.d_k, opt.d_v)};
        full.ns_median = detail::time_median_ns(
            [&]() { masa_full(in.q, in.k, in.v, h, w, params); }, opt.trials, opt.warmup);
        BenchRecord dec{"resa_decomposed", h, w, n, opt.d_k, 1, 0,
                        flops_decomposed_attention(h, w, opt.d_k, opt.d_v)};
        dec.ns_median = detail::time_median_ns(
            [&]() { resa_decomposed(in.q, in.k, in.v, h, w, params); }, opt.trials, opt.warmup);
        out.push_back(full);
        out.push_back(dec);
    }
    return out;
}

// Times parallel, recurrent, and chunkwise retention after asserting that
// they produce the same outputs on a small shared case.
inline std::vector<BenchRecord> run_paradigm_sweep(const std::vector<int64_t>& lengths,
                                                   const BenchOptions& opt,
                                                   std::vector<std::string>* notes = nullptr) {
    const auto params = detail::bench_params(opt);

    {
        auto in = detail::bench_inputs(32, opt);
        auto par = retention_parallel(in.q, in.k, in.v, params);
        auto rec = retention_recurrent(in.q, in.k, in.v, params);
        auto chk = retention_chunkwise(in.q, in.k, in.v, params, 8);
        if (max_abs_diff(par, rec) >= 1e-10 || max_abs_diff(par, chk) >= 1e-10)
            throw Error("benchmark correctness gate failed: retention paradigms disagree");
    }

    std::vector<BenchRecord> out;
    for (int64_t n : lengths) {
        if (n < 1) throw ValueError("benchmark sequence lengths must be positive");
        if (n * n > opt.budget_elems) {
            if (notes)
                notes->push_back("skipped N=" + std::to_string(n) +
                                 ": the parallel mask exceeds the memory budget");
            continue;
        }
        auto in = detail::bench_inputs(n, opt);
        const int64_t chunk =
            std::max<int64_t>(1, static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(n)))));

        BenchRecord par{"retention_parallel", 0, 0, n, opt.d_k, 1, 0,
                        flops_retention_parallel(n, opt.d_k, opt.d_v)};
        par.ns_median = detail::time_median_ns(
            [&]() { retention_parallel(in.q, in.k, in.v, params); }, opt.trials, opt.warmup);
        BenchRecord rec{"retention_recurrent", 0, 0, n, opt.d_k, 1, 0,
                        flops_retention_recurrent(n, opt.d_k, opt.d_v)};
        rec.ns_median = detail::time_median_ns(
            [&]() { retention_recurrent(in.q, in.k, in.v, params); }, opt.trials, opt.warmup);
        BenchRecord chk{"retention_chunkwise", 0, 0, n, opt.d_k, 1, 0,
                        flops_retention_chunkwise(n, chunk, opt.d_k, opt.d_v)};
        chk.ns_median = detail::time_median_ns(
            [&]() { retention_chunkwise(in.q, in.k, in.v, params, chunk); }, opt.trials,
            opt.warmup);
        out.push_back(par);
        out.push_back(rec);
        out.push_back(chk);
    }
    return out;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records) {
    os << "kernel,H,W,N,d,heads,ns_median,flops_est\n";
    for (const auto& r : records)
        os << r.kernel << "," << r.h << "," << r.w << "," << r.n << "," << r.d_k << ","
           << r.heads << "," << r.ns_median << "," << r.flops_est << "\n";
}

inline void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path + " for writing");
    write_bench_csv(os, records);
}

}  // namespace segkit
