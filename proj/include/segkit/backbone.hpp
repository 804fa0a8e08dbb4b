#pragma once

// Hierarchical 4-stage encoder. Each stage downsamples (stride 4 at the stem,
// stride 2 after) with a patch projection and stacks pre-norm blocks of
// multi-head spatial retention plus a GELU FFN. Stages can run the axis
// decomposed kernel or the dense one; by default only the last, smallest
// stage goes dense.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "segkit/retention.hpp"
#include "segkit/tensor.hpp"

namespace segkit {

enum class AttentionMode { decomposed, full };

inline AttentionMode attention_mode_from(const std::string& s) {
    if (s == "decomposed") return AttentionMode::decomposed;
    if (s == "full") return AttentionMode::full;
    throw ValueError("unknown attention mode '" + s + "' (expected decomposed or full)");
}

inline const char* to_string(AttentionMode m) {
    return m == AttentionMode::full ? "full" : "decomposed";
}

struct BackboneConfig {
    std::vector<int64_t> channels{16, 32, 64, 128};
    std::vector<int64_t> depths{1, 1, 2, 1};
    std::vector<int64_t> heads{2, 2, 4, 4};
    std::vector<AttentionMode> attention{AttentionMode::decomposed, AttentionMode::decomposed,
                                         AttentionMode::decomposed, AttentionMode::full};
    // per stage, per head; empty entries fall back to 1 - 2^-(5+head)
    std::vector<std::vector<double>> gammas;
    int64_t ffn_ratio = 4;
    bool use_rotation = true;
    bool zero_init_residual_out = false;

    void validate() const {
        if (channels.size() != 4 || depths.size() != 4 || heads.size() != 4 ||
            attention.size() != 4)
            throw ValueError("backbone config needs exactly 4 stages");
        for (size_t s = 0; s < 4; ++s) {
            if (channels[s] < 1 || heads[s] < 1 || depths[s] < 0)
                throw ValueError("backbone stage " + std::to_string(s) +
                                 " has a non-positive extent");
            if (s > 0 && channels[s] < channels[s - 1])
                throw ValueError("backbone channels must be nondecreasing");
            if (channels[s] % heads[s] != 0)
                throw ValueError("stage " + std::to_string(s) + " channels " +
                                 std::to_string(channels[s]) + " not divisible by " +
                                 std::to_string(heads[s]) + " heads");
            if ((channels[s] / heads[s]) % 2 != 0)
                throw ValueError("stage " + std::to_string(s) +
                                 " head dim must be even for pair rotation");
        }
        if (ffn_ratio < 1) throw ValueError("ffn_ratio must be at least 1");
        if (!gammas.empty() && gammas.size() != 4)
            throw ValueError("gamma schedule must list all 4 stages when given");
    }

    double gamma_for(int stage, int head) const {
        if (!gammas.empty() && !gammas[static_cast<size_t>(stage)].empty()) {
            const auto& g = gammas[static_cast<size_t>(stage)];
            return g[static_cast<size_t>(head) % g.size()];
        }
        return 1.0 - std::pow(2.0, -5.0 - static_cast<double>(head));
    }

    // Named sizes. Micro is the test workhorse; the larger ones are
    // editable approximations in the spirit of the usual T/S/B/L ladders.
    static BackboneConfig preset(const std::string& name) {
        BackboneConfig c;
        if (name == "micro") {
            // defaults above
        } else if (name == "tiny") {
            c.channels = {64, 128, 256, 512};
            c.depths = {2, 2, 8, 2};
            c.heads = {4, 4, 8, 16};
        } else if (name == "small") {
            c.channels = {64, 128, 256, 512};
            c.depths = {3, 4, 18, 4};
            c.heads = {4, 4, 8, 16};
        } else if (name == "base") {
            c.channels = {80, 160, 320, 512};
            c.depths = {4, 8, 25, 8};
            c.heads = {5, 5, 10, 16};
        } else if (name == "large") {
            c.channels = {112, 224, 448, 640};
            c.depths = {4, 8, 25, 8};
            c.heads = {7, 7, 14, 20};
        } else {
            throw ValueError("unknown backbone preset '" + name + "'");
        }
        c.validate();
        return c;
    }
};

template <typename T>
struct FeaturePyramid {
    std::vector<Tensor<T>> f;  // strides 4, 8, 16, 32
};

template <typename T>
struct MsrBlockParams {
    Tensor<T> ln1_g, ln1_b;
    std::vector<Tensor<T>> wq, wk, wv;  // per head [C, d_head]
    Tensor<T> wo, bo;                   // [C, C], [C]
    Tensor<T> ln2_g, ln2_b;
    Tensor<T> w1, b1, w2, b2;  // FFN
};

template <typename T>
struct StageParams {
    Tensor<T> down_w, down_b;  // patch projection after space_to_depth
    std::vector<MsrBlockParams<T>> blocks;
};

namespace detail {

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {  // [C,h,w] -> [h*w, C]
    return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

template <typename T>
Tensor<T> to_image(const Tensor<T>& tokens, int64_t h, int64_t w) {  // [h*w, C] -> [C,h,w]
    return reshape(transpose(tokens), {tokens.dim(1), h, w});
}

}  // namespace detail

template <typename T>
class Backbone {
public:
    BackboneConfig cfg;
    std::vector<StageParams<T>> stages;

    void init(Rng& rng) {
        cfg.validate();
        stages.clear();
        stages.resize(4);
        int64_t c_in = 3;
        for (int s = 0; s < 4; ++s) {
            const int64_t c = cfg.channels[static_cast<size_t>(s)];
            const int64_t b = s == 0 ? 4 : 2;
            auto& st = stages[static_cast<size_t>(s)];
            const int64_t fan = c_in * b * b;
            st.down_w = Tensor<T>::randn({c, fan}, rng,
                                         static_cast<T>(1.0 / std::sqrt(double(fan))), true);
            st.down_b = Tensor<T>::zeros({c}, true);
            const int64_t nh = cfg.heads[static_cast<size_t>(s)];
            const int64_t dh = c / nh;
            const T wsd = static_cast<T>(1.0 / std::sqrt(double(c)));
            const int64_t hid = cfg.ffn_ratio * c;
            for (int64_t d = 0; d < cfg.depths[static_cast<size_t>(s)]; ++d) {
                MsrBlockParams<T> blk;
                blk.ln1_g = Tensor<T>::ones({c}, true);
                blk.ln1_b = Tensor<T>::zeros({c}, true);
                for (int64_t hd = 0; hd < nh; ++hd) {
                    blk.wq.push_back(Tensor<T>::randn({c, dh}, rng, wsd, true));
                    blk.wk.push_back(Tensor<T>::randn({c, dh}, rng, wsd, true));
                    blk.wv.push_back(Tensor<T>::randn({c, dh}, rng, wsd, true));
                }
                blk.wo = cfg.zero_init_residual_out ? Tensor<T>::zeros({c, c}, true)
                                                    : Tensor<T>::randn({c, c}, rng, wsd, true);
                blk.bo = Tensor<T>::zeros({c}, true);
                blk.ln2_g = Tensor<T>::ones({c}, true);
                blk.ln2_b = Tensor<T>::zeros({c}, true);
                blk.w1 = Tensor<T>::randn({c, hid}, rng, wsd, true);
                blk.b1 = Tensor<T>::zeros({hid}, true);
                blk.w2 = cfg.zero_init_residual_out
                             ? Tensor<T>::zeros({hid, c}, true)
                             : Tensor<T>::randn({hid, c}, rng,
                                                static_cast<T>(1.0 / std::sqrt(double(hid))),
                                                true);
                blk.b2 = Tensor<T>::zeros({c}, true);
                st.blocks.push_back(std::move(blk));
            }
            c_in = c;
        }
    }

    // Stride-4 stem: space_to_depth(4) then the stage-0 patch projection.
    Tensor<T> patch_embed(const Tensor<T>& image) const {
        check_input(image);
        return pointwise_conv(space_to_depth(image, 4), stages[0].down_w, stages[0].down_b);
    }

    Tensor<T> block_forward(const Tensor<T>& x, int stage, int block) const {
        const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
        if (c != cfg.channels[static_cast<size_t>(stage)])
            throw ShapeError("block input has " + std::to_string(c) + " channels, stage " +
                             std::to_string(stage) + " expects " +
                             std::to_string(cfg.channels[static_cast<size_t>(stage)]));
        Tensor<T> tokens = detail::to_tokens(x);
        tokens = block_tokens(tokens, h, w, stage, block);
        return detail::to_image(tokens, h, w);
    }

    FeaturePyramid<T> forward(const Tensor<T>& image) const {
        check_input(image);
        FeaturePyramid<T> pyr;
        Tensor<T> x = image;
        for (int s = 0; s < 4; ++s) {
            const auto& st = stages[static_cast<size_t>(s)];
            x = pointwise_conv(space_to_depth(x, s == 0 ? 4 : 2), st.down_w, st.down_b);
            const int64_t h = x.dim(1), w = x.dim(2);
            if (!st.blocks.empty()) {
                Tensor<T> tokens = detail::to_tokens(x);
                for (size_t b = 0; b < st.blocks.size(); ++b)
                    tokens = block_tokens(tokens, h, w, s, static_cast<int>(b));
                x = detail::to_image(tokens, h, w);
            }
            pyr.f.push_back(x);
        }
        return pyr;
    }

    int64_t count_params() const {
        int64_t total = 0;
        int64_t c_in = 3;
        for (int s = 0; s < 4; ++s) {
            const int64_t c = cfg.channels[static_cast<size_t>(s)];
            const int64_t b = s == 0 ? 4 : 2;
            const int64_t r = cfg.ffn_ratio;
            total += c * (c_in * b * b + 1);
            total += cfg.depths[static_cast<size_t>(s)] * ((4 + 2 * r) * c * c + (6 + r) * c);
            c_in = c;
        }
        return total;
    }

    template <class F>
    void visit_params(F&& f) {
        for (size_t s = 0; s < stages.size(); ++s) {
            const std::string sp = "stage" + std::to_string(s) + ".";
            auto& st = stages[s];
            f(sp + "down.w", st.down_w);
            f(sp + "down.b", st.down_b);
            for (size_t b = 0; b < st.blocks.size(); ++b) {
                const std::string bp = sp + "block" + std::to_string(b) + ".";
                auto& blk = st.blocks[b];
                f(bp + "ln1.g", blk.ln1_g);
                f(bp + "ln1.b", blk.ln1_b);
                for (size_t hd = 0; hd < blk.wq.size(); ++hd) {
                    f(bp + "wq" + std::to_string(hd), blk.wq[hd]);
                    f(bp + "wk" + std::to_string(hd), blk.wk[hd]);
                    f(bp + "wv" + std::to_string(hd), blk.wv[hd]);
                }
                f(bp + "attn_out.w", blk.wo);
                f(bp + "attn_out.b", blk.bo);
                f(bp + "ln2.g", blk.ln2_g);
                f(bp + "ln2.b", blk.ln2_b);
                f(bp + "ffn1.w", blk.w1);
                f(bp + "ffn1.b", blk.b1);
                f(bp + "ffn2.w", blk.w2);
                f(bp + "ffn2.b", blk.b2);
            }
        }
    }

private:
    static void check_input(const Tensor<T>& image) {
        if (image.ndim() != 3 || image.dim(0) != 3)
            throw ShapeError("backbone expects a [3,H,W] image, got " +
                             shape_str(image.shape()));
        if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
            throw ShapeError("backbone input " + std::to_string(image.dim(1)) + "x" +
                             std::to_string(image.dim(2)) +
                             " must be a multiple of 32; pad the image first");
    }

    Tensor<T> block_tokens(const Tensor<T>& tokens, int64_t h, int64_t w, int stage,
                           int block) const {
        const auto& blk = stages[static_cast<size_t>(stage)].blocks[static_cast<size_t>(block)];
        const int64_t nh = cfg.heads[static_cast<size_t>(stage)];
        const int64_t dh = cfg.channels[static_cast<size_t>(stage)] / nh;
        const AttentionMode mode = cfg.attention[static_cast<size_t>(stage)];

        Tensor<T> t = layer_norm(tokens, blk.ln1_g, blk.ln1_b);
        std::vector<Tensor<T>> head_outs;
        head_outs.reserve(static_cast<size_t>(nh));
        for (int64_t hd = 0; hd < nh; ++hd) {
            Tensor<T> q = matmul(t, blk.wq[static_cast<size_t>(hd)]);
            Tensor<T> k = matmul(t, blk.wk[static_cast<size_t>(hd)]);
            Tensor<T> v = matmul(t, blk.wv[static_cast<size_t>(hd)]);
            RetentionParams<T> p;
            p.gamma = static_cast<T>(cfg.gamma_for(stage, static_cast<int>(hd)));
            p.use_rotation = cfg.use_rotation;
            if (p.use_rotation) p.theta = default_theta<T>(dh);
            head_outs.push_back(mode == AttentionMode::full
                                    ? masa_full(q, k, v, h, w, p)
                                    : resa_decomposed(q, k, v, h, w, p));
        }
        Tensor<T> cat = nh == 1 ? head_outs[0] : concat(head_outs, 1);
        Tensor<T> x = add(tokens, add(matmul(cat, blk.wo), blk.bo));

        Tensor<T> u = layer_norm(x, blk.ln2_g, blk.ln2_b);
        Tensor<T> hdn = gelu(add(matmul(u, blk.w1), blk.b1));
        return add(x, add(matmul(hdn, blk.w2), blk.b2));
    }
};

}  // namespace segkit
