#pragma once

// Central-difference gradient oracle used to validate every backward pass.

#include <functional>
#include <string>
#include <vector>

#include "segkit/tensor.hpp"

namespace segkit {

template <typename T>
struct GradCheckReport {
    std::string name;
    T max_rel_err = 0;
    int worst_input = -1;
    int64_t worst_index = -1;
    T analytic_at_worst = 0;
    T numeric_at_worst = 0;
    T tol = 0;
    bool passed = false;
};

template <typename T>
T guarded_rel_err(T analytic, T numeric, T floor_mag = T(1e-4)) {
    const T denom = std::max({std::abs(analytic), std::abs(numeric), floor_mag});
    return std::abs(analytic - numeric) / denom;
}

// fwd maps the inputs to a scalar loss tensor. It is evaluated once under a
// tape for the analytic gradients, then repeatedly without one for the
// central differences (f(x+h) - f(x-h)) / 2h.
template <typename T, class Forward>
GradCheckReport<T> check_gradients(const std::string& name, std::vector<Tensor<T>> inputs,
                                   Forward fwd, T h = T(1e-5), T tol = T(1e-5),
                                   T floor_mag = T(1e-4)) {
    GradCheckReport<T> rep;
    rep.name = name;
    rep.tol = tol;

    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.drop_grad();
    }
    {
        Tape<T> tape;
        Tensor<T> loss = fwd(inputs);
        backward(loss);
    }
    std::vector<std::vector<T>> analytic;
    for (auto& t : inputs) {
        t.ensure_grad();
        analytic.push_back(t.grad_vec());
        t.set_requires_grad(false);
    }

    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor<T>& t = inputs[ti];
        for (int64_t i = 0; i < t.numel(); ++i) {
            const T orig = t.data()[i];
            t.data()[i] = orig + h;
            const T fp = fwd(inputs).item();
            t.data()[i] = orig - h;
            const T fm = fwd(inputs).item();
            t.data()[i] = orig;
            const T numeric = (fp - fm) / (2 * h);
            const T a = analytic[ti][static_cast<size_t>(i)];
            const T e = guarded_rel_err(a, numeric, floor_mag);
            if (e >= rep.max_rel_err) {
                rep.max_rel_err = e;
                rep.worst_input = static_cast<int>(ti);
                rep.worst_index = i;
                rep.analytic_at_worst = a;
                rep.numeric_at_worst = numeric;
            }
        }
    }
    rep.passed = rep.max_rel_err < tol;
    return rep;
}

template <typename T>
std::string describe(const GradCheckReport<T>& rep) {
    std::ostringstream os;
    os << rep.name << ": max_rel_err=" << rep.max_rel_err << " tol=" << rep.tol
       << (rep.passed ? " ok" : " FAIL");
    if (rep.worst_input >= 0)
        os << " (input " << rep.worst_input << " elem " << rep.worst_index
           << ": analytic=" << rep.analytic_at_worst << " numeric=" << rep.numeric_at_worst << ")";
    return os.str();
}

}  // namespace segkit
