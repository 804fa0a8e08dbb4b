#pragma once

// Backbone + decoder wired end to end: [3,H,W] image in, [n_cls,H,W] logits out.

#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "segkit/backbone.hpp"
#include "segkit/decoder.hpp"

namespace segkit {

struct ModelConfig {
    BackboneConfig backbone;
    DecoderConfig decoder;

    void validate() const {
        backbone.validate();
        decoder.validate();
    }
};

// Canonical one-line rendering of every architectural field; hashing it gives
// a digest that checkpoints use to refuse weights from a different model.
inline std::string canonical_config_string(const ModelConfig& cfg) {
    std::ostringstream os;
    os << std::setprecision(17);
    auto list = [&os](const char* key, const std::vector<int64_t>& v) {
        os << key << "=";
        for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
        os << ";";
    };
    list("channels", cfg.backbone.channels);
    list("depths", cfg.backbone.depths);
    list("heads", cfg.backbone.heads);
    os << "attention=";
    for (size_t i = 0; i < cfg.backbone.attention.size(); ++i)
        os << (i ? "," : "") << to_string(cfg.backbone.attention[i]);
    os << ";gammas=";
    for (size_t s = 0; s < cfg.backbone.gammas.size(); ++s) {
        if (s) os << "|";
        for (size_t h = 0; h < cfg.backbone.gammas[s].size(); ++h)
            os << (h ? "," : "") << cfg.backbone.gammas[s][h];
    }
    os << ";ffn_ratio=" << cfg.backbone.ffn_ratio;
    os << ";use_rotation=" << (cfg.backbone.use_rotation ? 1 : 0);
    os << ";zero_init_residual_out=" << (cfg.backbone.zero_init_residual_out ? 1 : 0);
    os << ";decoder.C=" << cfg.decoder.C;
    os << ";decoder.n_cls=" << cfg.decoder.n_cls;
    os << ";decoder.variant=" << cfg.decoder.variant;
    os << ";decoder.zir=" << (cfg.decoder.zir_enabled ? 1 : 0);
    return os.str();
}

inline std::string config_digest(const ModelConfig& cfg) {
    return fnv1a64_hex(canonical_config_string(cfg));
}

template <typename T>
class SegModel {
public:
    ModelConfig cfg;
    Backbone<T> backbone;
    Decoder<T> decoder;

    void init(Rng& rng) {
        cfg.validate();
        backbone.cfg = cfg.backbone;
        backbone.init(rng);
        decoder.cfg = cfg.decoder;
        decoder.in_channels = cfg.backbone.channels;
        decoder.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& image) const {
        return decoder.forward(backbone.forward(image), image.dim(1), image.dim(2));
    }

    int64_t count_params() const { return backbone.count_params() + decoder.count_params(); }

    template <class F>
    void visit_params(F&& f) {
        backbone.visit_params([&](const std::string& n, Tensor<T>& t) { f("backbone." + n, t); });
        decoder.visit_params([&](const std::string& n, Tensor<T>& t) { f("decoder." + n, t); });
    }

    std::vector<std::pair<std::string, Tensor<T>>> named_params() {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        visit_params([&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, t); });
        return out;
    }
};

}  // namespace segkit
