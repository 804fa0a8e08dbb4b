#pragma once

// One gradient check per differentiable op, shared by the gradcheck CLI
// command and the acceptance gate. Each case reduces the op's output to a
// scalar through a fixed weight tensor so every output element contributes.

#include <string>
#include <vector>

#include "segkit/gradcheck.hpp"
#include "segkit/retention.hpp"

namespace segkit {

template <typename T>
std::vector<GradCheckReport<T>> run_gradient_suite(T h, T tol, T floor_mag) {
    std::vector<GradCheckReport<T>> reports;
    Rng rng(20240229);

    auto weights = [&](const std::vector<int64_t>& shape) {
        return Tensor<T>::uniform(shape, rng, T(0.5), T(1.5));
    };
    auto weighted = [](const Tensor<T>& y, const Tensor<T>& w) { return sum(mul(y, w)); };
    auto run = [&](const std::string& name, std::vector<Tensor<T>> inputs, auto fwd) {
        reports.push_back(check_gradients<T>(name, std::move(inputs), fwd, h, tol, floor_mag));
    };

    {
        Tensor<T> w = weights({3, 4});
        run("add", {Tensor<T>::randn({3, 4}, rng), Tensor<T>::randn({3, 4}, rng)},
            [=](const std::vector<Tensor<T>>& in) { return weighted(add(in[0], in[1]), w); });
    }
    {
        Tensor<T> w = weights({3, 4});
        run("sub", {Tensor<T>::randn({3, 4}, rng), Tensor<T>::randn({3, 4}, rng)},
            [=](const std::vector<Tensor<T>>& in) { return weighted(sub(in[0], in[1]), w); });
    }
    {
        Tensor<T> w = weights({3, 4});
        run("mul", {Tensor<T>::randn({3, 4}, rng), Tensor<T>::randn({3, 4}, rng)},
            [=](const std::vector<Tensor<T>>& in) { return weighted(mul(in[0], in[1]), w); });
    }
    {
        Tensor<T> w = weights({3, 4});
        run("scale", {Tensor<T>::randn({3, 4}, rng)},
            [=](const std::vector<Tensor<T>>& in) { return weighted(scale(in[0], T(1.7)), w); });
    }
    run("sum", {Tensor<T>::randn({3, 4}, rng)},
        [](const std::vector<Tensor<T>>& in) { return sum(in[0]); });
    run("mean", {Tensor<T>::randn({3, 4}, rng)},
        [](const std::vector<Tensor<T>>& in) { return mean(in[0]); });
    {
        Tensor<T> w = weights({3, 5});
        run("matmul", {Tensor<T>::randn({3, 4}, rng), Tensor<T>::randn({4, 5}, rng)},
            [=](const std::vector<Tensor<T>>& in) { return weighted(matmul(in[0], in[1]), w); });
    }
    {
        Tensor<T> w = weights({3, 4});
        run("reshape", {Tensor<T>::randn({2, 6}, rng)}, [=](const std::vector<Tensor<T>>& in) {
            return weighted(reshape(in[0], {3, 4}), w);
        });
    }
    {
        Tensor<T> w = weights({4, 2, 3});
        run("permute", {Tensor<T>::randn({2, 3, 4}, rng)}, [=](const std::vector<Tensor<T>>& in) {
            return weighted(permute(in[0], {2, 0, 1}), w);
        });
    }
    {
        Tensor<T> w = weights({5, 3});
        run("transpose", {Tensor<T>::randn({3, 5}, rng)},
            [=](const std::vector<Tensor<T>>& in) { return weighted(transpose(in[0]), w); });
    }
    {
        Tensor<T> w = weights({3, 2});
        run("slice", {Tensor<T>::randn({3, 5}, rng)}, [=](const std::vector<Tensor<T>>& in) {
            return weighted(slice(in[0], 1, 1, 2), w);
        });
    }
    {
        Tensor<T> w = weights({3, 5});
        run("concat", {Tensor<T>::randn({3, 2}, rng), Tensor<T>::randn({3, 3}, rng)},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(concat({in[0], in[1]}, 1), w);
            });
    }
    {
        Tensor<T> w = weights({4, 3});
        run("flip", {Tensor<T>::randn({4, 3}, rng)},
            [=](const std::vector<Tensor<T>>& in) { return weighted(flip(in[0], 0), w); });
    }
    {
        Tensor<T> w = weights({3, 5});
        run("softmax", {Tensor<T>::randn({3, 5}, rng)},
            [=](const std::vector<Tensor<T>>& in) { return weighted(softmax(in[0], 1), w); });
    }
    {
        Tensor<T> w = weights({3, 4});
        run("gelu", {Tensor<T>::randn({3, 4}, rng)},
            [=](const std::vector<Tensor<T>>& in) { return weighted(gelu(in[0]), w); });
    }
    {
        Tensor<T> w = weights({4, 6});
        run("layer_norm",
            {Tensor<T>::randn({4, 6}, rng), Tensor<T>::uniform({6}, rng, T(0.5), T(1.5)),
             Tensor<T>::randn({6}, rng)},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(layer_norm(in[0], in[1], in[2]), w);
            });
    }
    {
        const std::vector<T> theta = default_theta<T>(6);
        const std::vector<int64_t> pos{0, 1, 2, 3, 4};
        Tensor<T> w = weights({5, 6});
        run("rotate_pairs", {Tensor<T>::randn({5, 6}, rng)},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(rotate_pairs(in[0], theta, pos, 1), w);
            });
        Tensor<T> w2 = weights({5, 6});
        run("apply_rotation", {Tensor<T>::randn({5, 6}, rng)},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(apply_rotation(in[0], theta, 1), w2);
            });
    }
    {
        Tensor<T> w = weights({8, 2, 3});
        run("space_to_depth", {Tensor<T>::randn({2, 4, 6}, rng)},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(space_to_depth(in[0], 2), w);
            });
    }
    {
        Tensor<T> w = weights({2, 4, 5});
        run("pointwise_conv",
            {Tensor<T>::randn({3, 4, 5}, rng), Tensor<T>::randn({2, 3}, rng),
             Tensor<T>::randn({2}, rng)},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(pointwise_conv(in[0], in[1], in[2]), w);
            });
    }
    {
        Tensor<T> w_up = weights({2, 6, 6});
        run("bilinear_resize_up", {Tensor<T>::randn({2, 4, 4}, rng)},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(bilinear_resize(in[0], 6, 6), w_up);
            });
        Tensor<T> w_dn = weights({2, 3, 3});
        run("bilinear_resize_down", {Tensor<T>::randn({2, 4, 4}, rng)},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(bilinear_resize(in[0], 3, 3), w_dn);
            });
    }
    {
        LabelMap target(4, 4);
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t x = 0; x < 4; ++x)
                target.at(y, x) = static_cast<int32_t>(rng.next_below(3));
        target.at(0, 0) = 255;
        run("cross_entropy", {Tensor<T>::randn({3, 4, 4}, rng)},
            [=](const std::vector<Tensor<T>>& in) { return cross_entropy(in[0], target, 255); });
    }
    {
        RetentionParams<T> p;
        p.gamma = T(0.9);
        p.use_rotation = true;
        p.theta = default_theta<T>(4);
        Tensor<T> w = weights({6, 4});
        auto qkv = [&] { return Tensor<T>::randn({6, 4}, rng, T(0.5)); };
        run("retention_parallel", {qkv(), qkv(), qkv()},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(retention_parallel(in[0], in[1], in[2], p), w);
            });
        Tensor<T> w2 = weights({6, 4});
        run("retention_chunkwise", {qkv(), qkv(), qkv()},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(retention_chunkwise(in[0], in[1], in[2], p, 2), w2);
            });
        Tensor<T> w3 = weights({6, 4});
        run("bi_retention", {qkv(), qkv(), qkv()},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(bi_retention(in[0], in[1], in[2], p, false), w3);
            });
        Tensor<T> w4 = weights({6, 4});
        run("masa_full", {qkv(), qkv(), qkv()},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(masa_full(in[0], in[1], in[2], 2, 3, p), w4);
            });
        Tensor<T> w5 = weights({6, 4});
        run("resa_decomposed", {qkv(), qkv(), qkv()},
            [=](const std::vector<Tensor<T>>& in) {
                return weighted(resa_decomposed(in[0], in[1], in[2], 2, 3, p), w5);
            });
    }
    return reports;
}

}  // namespace segkit
