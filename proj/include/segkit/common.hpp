#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace segkit {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class ValueError : public Error {
public:
    explicit ValueError(const std::string& msg) : Error(msg) {}
};

class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Thread cap for data-parallel loops inside single operations.
// SEGKIT_THREADS overrides; default 1 (fully deterministic either way:
// parallel regions only ever split disjoint output ranges).
inline int& thread_cap_ref() {
    static int cap = [] {
        if (const char* env = std::getenv("SEGKIT_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        return 1;
    }();
    return cap;
}

inline int thread_cap() { return thread_cap_ref(); }
inline void set_thread_cap(int n) { thread_cap_ref() = n < 1 ? 1 : n; }

template <class F>
void parallel_for(int64_t n, F&& body) {
    const int cap = thread_cap();
    if (cap <= 1 || n < 256) {
        for (int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    const int workers = static_cast<int>(std::min<int64_t>(cap, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const int64_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int64_t lo = w * chunk;
        const int64_t hi = std::min<int64_t>(lo + chunk, n);
        pool.emplace_back([lo, hi, &body] {
            for (int64_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seeded RNG with platform-independent derived draws (the std distributions
// are implementation-defined, so sampling is done by hand).
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, n) by modular reduction.
    uint64_t next_below(uint64_t n) { return n ? gen_() % n : 0; }

    int64_t next_range(int64_t lo, int64_t hi_inclusive) {
        return lo + static_cast<int64_t>(next_below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Uniform double in [0, 1).
    double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    bool next_bool() { return (gen_() & 1ULL) != 0; }

    // Box-Muller; one spare kept between calls.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    std::mt19937_64& engine() { return gen_; }

    // Engine state as text; the spare travels as its exact bit pattern.
    std::string state_string() const {
        std::ostringstream os;
        os << gen_;
        uint64_t bits;
        std::memcpy(&bits, &spare_, sizeof(bits));
        os << " " << (have_spare_ ? 1 : 0) << " " << bits;
        return os.str();
    }

    void restore_state(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
        int flag = 0;
        uint64_t bits = 0;
        is >> flag >> bits;
        if (!is) throw Error("malformed rng state string");
        std::memcpy(&spare_, &bits, sizeof(bits));
        have_spare_ = flag != 0;
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string fnv1a64_hex(const std::string& s) {
    const uint64_t h = fnv1a64(s.data(), s.size());
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = digits[(h >> (4 * i)) & 0xf];
    return out;
}

}  // namespace segkit
