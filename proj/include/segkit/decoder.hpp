#pragma once

// Lightweight decoder: per level a linear projection to a shared width plus a
// zero-initialized 1x1-conv residual, quarter-resolution fusion by channel
// concatenation, then a linear classifier resized to the input grid.
//
// Two residual wirings ship. literal: F'_i = f_i + ZeroConv(F_i), keeping the
// level's own channel count. projected: F'_i = F_i + ZeroConv(f_i), keeping
// the shared width so the fused map always has n_levels * C channels.

#include <cstdint>
#include <string>
#include <vector>

#include "segkit/backbone.hpp"
#include "segkit/tensor.hpp"

namespace segkit {

struct DecoderConfig {
    int64_t C = 256;
    int64_t n_cls = 2;
    std::string variant = "literal";  // literal | projected
    bool zir_enabled = true;

    void validate() const {
        if (C < 1) throw ValueError("decoder C must be >= 1, got " + std::to_string(C));
        if (n_cls < 2) throw ValueError("decoder n_cls must be >= 2, got " +
                                        std::to_string(n_cls));
        if (variant != "literal" && variant != "projected")
            throw ValueError("decoder variant must be literal or projected, got '" + variant +
                             "'");
    }
    bool literal() const { return variant == "literal"; }
};

template <typename T>
struct DecoderLevelParams {
    Tensor<T> lin_w, lin_b;  // [C, C_i], [C]
    Tensor<T> zc_w, zc_b;    // literal: [C_i, C]; projected: [C, C_i]
};

template <typename T>
class Decoder {
public:
    DecoderConfig cfg;
    std::vector<int64_t> in_channels;
    std::vector<DecoderLevelParams<T>> levels;
    Tensor<T> cls_w, cls_b;

    void init(Rng& rng) {
        cfg.validate();
        if (in_channels.empty()) throw ValueError("decoder needs the pyramid channel list");
        levels.clear();
        for (int64_t ci : in_channels) {
            DecoderLevelParams<T> lv;
            lv.lin_w = Tensor<T>::randn({cfg.C, ci}, rng,
                                        static_cast<T>(1.0 / std::sqrt(double(ci))), true);
            lv.lin_b = Tensor<T>::zeros({cfg.C}, true);
            if (cfg.literal()) {
                lv.zc_w = Tensor<T>::zeros({ci, cfg.C}, true);
                lv.zc_b = Tensor<T>::zeros({ci}, true);
            } else {
                lv.zc_w = Tensor<T>::zeros({cfg.C, ci}, true);
                lv.zc_b = Tensor<T>::zeros({cfg.C}, true);
            }
            levels.push_back(std::move(lv));
        }
        const int64_t fused = fused_channels();
        cls_w = Tensor<T>::randn({cfg.n_cls, fused}, rng,
                                 static_cast<T>(1.0 / std::sqrt(double(fused))), true);
        cls_b = Tensor<T>::zeros({cfg.n_cls}, true);
    }

    int64_t fused_channels() const {
        if (!cfg.literal()) return static_cast<int64_t>(in_channels.size()) * cfg.C;
        int64_t s = 0;
        for (int64_t ci : in_channels) s += ci;
        return s;
    }

    Tensor<T> linear_project(const Tensor<T>& f, int level) const {
        const auto& lv = levels[static_cast<size_t>(level)];
        if (f.dim(0) != in_channels[static_cast<size_t>(level)])
            throw ShapeError("decoder level " + std::to_string(level) + " expects " +
                             std::to_string(in_channels[static_cast<size_t>(level)]) +
                             " channels, got " + shape_str(f.shape()));
        return pointwise_conv(f, lv.lin_w, lv.lin_b);
    }

    Tensor<T> zir_residual(const Tensor<T>& f, const Tensor<T>& proj, int level) const {
        if (f.dim(1) != proj.dim(1) || f.dim(2) != proj.dim(2))
            throw ShapeError("zir_residual spatial mismatch: " + shape_str(f.shape()) + " vs " +
                             shape_str(proj.shape()));
        const auto& lv = levels[static_cast<size_t>(level)];
        if (!cfg.zir_enabled) return cfg.literal() ? f : proj;
        if (cfg.literal()) return add(f, pointwise_conv(proj, lv.zc_w, lv.zc_b));
        return add(proj, pointwise_conv(f, lv.zc_w, lv.zc_b));
    }

    static Tensor<T> upsample_quarter(const Tensor<T>& x, int64_t img_h, int64_t img_w) {
        if (img_h % 4 != 0 || img_w % 4 != 0)
            throw ShapeError("input size " + std::to_string(img_h) + "x" +
                             std::to_string(img_w) + " must be a multiple of 4");
        return bilinear_resize(x, img_h / 4, img_w / 4);
    }

    Tensor<T> classify(const Tensor<T>& m, int64_t img_h, int64_t img_w) const {
        return bilinear_resize(pointwise_conv(m, cls_w, cls_b), img_h, img_w);
    }

    Tensor<T> forward(const FeaturePyramid<T>& pyr, int64_t img_h, int64_t img_w) const {
        if (pyr.f.size() != in_channels.size())
            throw ShapeError("decoder built for " + std::to_string(in_channels.size()) +
                             " levels, pyramid has " + std::to_string(pyr.f.size()));
        std::vector<Tensor<T>> ups;
        for (size_t i = 0; i < pyr.f.size(); ++i) {
            Tensor<T> proj = linear_project(pyr.f[i], static_cast<int>(i));
            Tensor<T> res = zir_residual(pyr.f[i], proj, static_cast<int>(i));
            ups.push_back(upsample_quarter(res, img_h, img_w));
        }
        Tensor<T> m = ups.size() == 1 ? ups[0] : concat(ups, 0);
        return classify(m, img_h, img_w);
    }

    int64_t count_params() const { return count_params(cfg, in_channels); }

    static int64_t count_params(const DecoderConfig& cfg, const std::vector<int64_t>& cin) {
        int64_t total = 0;
        int64_t fused = 0;
        for (int64_t ci : cin) {
            total += ci * cfg.C + cfg.C;  // linear
            if (cfg.zir_enabled)
                total += cfg.literal() ? (cfg.C * ci + ci) : (ci * cfg.C + cfg.C);
            fused += cfg.literal() ? ci : cfg.C;
        }
        total += fused * cfg.n_cls + cfg.n_cls;  // classifier
        return total;
    }

    template <class F>
    void visit_params(F&& f) {
        for (size_t i = 0; i < levels.size(); ++i) {
            const std::string lp = "level" + std::to_string(i) + ".";
            f(lp + "lin.w", levels[i].lin_w);
            f(lp + "lin.b", levels[i].lin_b);
            if (cfg.zir_enabled) {
                f(lp + "zc.w", levels[i].zc_w);
                f(lp + "zc.b", levels[i].zc_b);
            }
        }
        f(std::string("cls.w"), cls_w);
        f(std::string("cls.b"), cls_b);
    }
};

}  // namespace segkit
