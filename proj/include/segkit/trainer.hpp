#pragma once

// AdamW, the warmup/poly learning-rate schedule, the training loop, and
// checkpointing with an architecture digest guard.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "segkit/data.hpp"
#include "segkit/model.hpp"
#include "segkit/serialize.hpp"

namespace segkit {

struct AdamwConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 0.0;  // <= 0 disables clipping

    void validate() const {
        if (lr < 0) throw ValueError("adamw lr must be nonnegative");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ValueError("adamw betas must lie in [0,1)");
        if (eps <= 0) throw ValueError("adamw eps must be positive");
        if (weight_decay < 0) throw ValueError("adamw weight decay must be nonnegative");
    }
};

namespace detail {

template <typename To, typename From>
Tensor<To> to_precision(const Tensor<From>& src) {
    if constexpr (std::is_same_v<To, From>) {
        return src;
    } else {
        Tensor<To> out = Tensor<To>::zeros(src.shape());
        const From* in = src.data();
        To* dst = out.data();
        for (int64_t i = 0; i < src.numel(); ++i) dst[i] = static_cast<To>(in[i]);
        return out;
    }
}

}  // namespace detail

// Decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
template <typename T>
class Adamw {
public:
    AdamwConfig cfg;
    int64_t t = 0;
    std::map<std::string, Tensor<T>> m, v;

    void ensure_state(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
        for (const auto& [name, p] : params) {
            slot(m, name, p);
            slot(v, name, p);
        }
    }

    void step(std::vector<std::pair<std::string, Tensor<T>>>& params, double lr_override = -1.0) {
        cfg.validate();
        const double lr = lr_override >= 0.0 ? lr_override : cfg.lr;
        ++t;
        double clip_scale = 1.0;
        if (cfg.clip_norm > 0.0) {
            double sq = 0.0;
            for (auto& [name, p] : params)
                if (p.has_grad())
                    for (T g : p.grad_vec()) sq += static_cast<double>(g) * static_cast<double>(g);
            const double norm = std::sqrt(sq);
            if (norm > cfg.clip_norm) clip_scale = cfg.clip_norm / norm;
        }
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (auto& [name, p] : params) {
            if (!p.has_grad()) {
                if (warned_.insert(name).second)
                    std::cerr << "warning: no gradient for parameter '" << name
                              << "', skipping its update\n";
                continue;
            }
            Tensor<T>& mt = slot(m, name, p);
            Tensor<T>& vt = slot(v, name, p);
            const T* g = p.grad();
            T* pm = mt.data();
            T* pv = vt.data();
            T* pd = p.data();
            const int64_t n = p.numel();
            for (int64_t i = 0; i < n; ++i) {
                const double gi = static_cast<double>(g[i]) * clip_scale;
                const double mi = cfg.beta1 * static_cast<double>(pm[i]) + (1.0 - cfg.beta1) * gi;
                const double vi =
                    cfg.beta2 * static_cast<double>(pv[i]) + (1.0 - cfg.beta2) * gi * gi;
                pm[i] = static_cast<T>(mi);
                pv[i] = static_cast<T>(vi);
                const double m_hat = mi / bc1;
                const double v_hat = vi / bc2;
                const double upd = m_hat / (std::sqrt(v_hat) + cfg.eps) +
                                   cfg.weight_decay * static_cast<double>(pd[i]);
                pd[i] = static_cast<T>(static_cast<double>(pd[i]) - lr * upd);
            }
        }
    }

private:
    std::set<std::string> warned_;

    Tensor<T>& slot(std::map<std::string, Tensor<T>>& table, const std::string& name,
                    const Tensor<T>& p) {
        auto it = table.find(name);
        if (it == table.end())
            it = table.emplace(name, Tensor<T>::zeros(p.shape())).first;
        else if (it->second.shape() != p.shape())
            throw ShapeError("optimizer state for '" + name + "' has shape " +
                             shape_str(it->second.shape()) + " but the parameter is " +
                             shape_str(p.shape()));
        return it->second;
    }
};

// Linear warmup into either a polynomial decay or a constant plateau.
struct LrSchedule {
    std::string mode = "poly";  // poly | constant
    double base_lr = 1e-4;
    int64_t total_iters = 1000;
    int64_t warmup_iters = 10;
    double power = 1.0;

    void validate() const {
        if (mode != "poly" && mode != "constant")
            throw ValueError("unknown lr schedule mode '" + mode +
                             "' (expected poly or constant)");
        if (base_lr < 0) throw ValueError("base lr must be nonnegative");
        if (warmup_iters < 0) throw ValueError("warmup iteration count must be nonnegative");
        if (mode == "poly" && total_iters <= warmup_iters)
            throw ValueError("poly schedule needs total_iters > warmup_iters");
    }

    double at(int64_t iter) const {
        validate();
        if (iter < warmup_iters)
            return base_lr * static_cast<double>(iter + 1) / static_cast<double>(warmup_iters);
        if (mode == "constant") return base_lr;
        const double span = static_cast<double>(total_iters - warmup_iters);
        double frac = static_cast<double>(iter - warmup_iters) / span;
        if (frac > 1.0) frac = 1.0;
        return base_lr * std::pow(1.0 - frac, power);
    }
};

struct TrainConfig {
    int64_t iters = 100;
    int64_t batch_size = 2;
    uint64_t seed = 0;
    bool augment_flip = false;
    int64_t crop = 0;  // 0 keeps images whole; otherwise square random crop
    int32_t ignore_index = 255;
    int64_t log_every = 10;
    AdamwConfig adamw;
    LrSchedule schedule;

    void validate() const {
        if (iters < 0) throw ValueError("iteration count must be nonnegative");
        if (batch_size < 1) throw ValueError("batch size must be positive");
        if (crop < 0) throw ValueError("crop size must be nonnegative");
        if (crop > 0 && crop % 32 != 0)
            throw ValueError("crop size must be a multiple of 32, got " + std::to_string(crop));
        adamw.validate();
        schedule.validate();
    }
};

struct TrainRow {
    int64_t iter = 0;
    double loss = 0.0;
    double lr = 0.0;
    double pixel_acc = 0.0;
};

inline void write_train_log(std::ostream& os, const std::vector<TrainRow>& rows) {
    os << "iter,loss,lr,pixel_acc_estimate\n";
    os << std::setprecision(17);
    for (const auto& r : rows)
        os << r.iter << "," << r.loss << "," << r.lr << "," << r.pixel_acc << "\n";
}

inline void write_train_log(const std::string& path, const std::vector<TrainRow>& rows) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path + " for writing");
    write_train_log(os, rows);
}

// Everything the loop mutates besides the model itself, so a run can be
// paused, checkpointed, and resumed without drift.
template <typename T>
struct TrainState {
    Adamw<T> opt;
    Rng rng{0};
    int64_t iter = 0;
};

template <typename T>
std::vector<TrainRow> train_loop(SegModel<T>& model, const std::vector<SegmentationSample>& data,
                                 const TrainConfig& cfg, TrainState<T>& st,
                                 std::ostream* echo = nullptr) {
    cfg.validate();
    if (data.empty()) throw ValueError("training needs at least one sample");
    auto params = model.named_params();
    for (auto& [name, p] : params) p.set_requires_grad(true);

    std::vector<TrainRow> rows;
    const int64_t end = st.iter + cfg.iters;
    for (; st.iter < end; ++st.iter) {
        const double lr = cfg.schedule.at(st.iter);
        for (auto& [name, p] : params) p.zero_grad();

        double loss_sum = 0.0;
        int64_t correct = 0, valid = 0;
        for (int64_t b = 0; b < cfg.batch_size; ++b) {
            const auto& picked = data[static_cast<size_t>(st.rng.next_below(data.size()))];
            SegmentationSample s = picked;
            if (cfg.augment_flip) s = random_flip(s, st.rng);
            if (cfg.crop > 0) s = random_crop(s, cfg.crop, cfg.crop, st.rng, cfg.ignore_index);
            Tensor<T> img = detail::to_precision<T>(s.image);

            Tape<T> tape;
            Tensor<T> logits = model.forward(img);
            int64_t n_valid = 0;
            Tensor<T> loss = cross_entropy(logits, s.mask, cfg.ignore_index, &n_valid);
            loss_sum += static_cast<double>(loss.item());
            backward(scale(loss, T(1) / static_cast<T>(cfg.batch_size)));

            if (n_valid > 0) {
                LabelMap pred = argmax_channels(logits);
                for (size_t i = 0; i < pred.v.size(); ++i) {
                    if (s.mask.v[i] == cfg.ignore_index) continue;
                    ++valid;
                    if (pred.v[i] == s.mask.v[i]) ++correct;
                }
            }
        }
        const double loss_mean = loss_sum / static_cast<double>(cfg.batch_size);
        if (!std::isfinite(loss_mean))
            throw DivergenceError("training diverged: loss is not finite at iteration " +
                                  std::to_string(st.iter));
        st.opt.step(params, lr);

        TrainRow row;
        row.iter = st.iter;
        row.loss = loss_mean;
        row.lr = lr;
        row.pixel_acc = valid > 0 ? static_cast<double>(correct) / static_cast<double>(valid) : 0.0;
        rows.push_back(row);
        if (echo && cfg.log_every > 0 && (st.iter % cfg.log_every == 0 || st.iter + 1 == end))
            *echo << "iter " << row.iter << " loss " << row.loss << " lr " << row.lr
                  << " acc " << row.pixel_acc << "\n";
    }
    return rows;
}

inline constexpr const char kCheckpointMagic[] = "SEGKITCKPT1\n";

template <typename T>
void save_checkpoint(const std::string& path, SegModel<T>& model, TrainState<T>& st) {
    auto params = model.named_params();
    st.opt.ensure_state(params);

    nlohmann::json man;
    man["format"] = "segkit-checkpoint-v1";
    man["dtype"] = dtype_name<T>();
    man["config"] = canonical_config_string(model.cfg);
    man["config_digest"] = config_digest(model.cfg);
    man["iter"] = st.iter;
    man["rng_state"] = st.rng.state_string();
    man["adamw"] = {{"lr", st.opt.cfg.lr},
                    {"beta1", st.opt.cfg.beta1},
                    {"beta2", st.opt.cfg.beta2},
                    {"eps", st.opt.cfg.eps},
                    {"weight_decay", st.opt.cfg.weight_decay},
                    {"clip_norm", st.opt.cfg.clip_norm},
                    {"t", st.opt.t}};
    auto& names = man["tensors"] = nlohmann::json::array();
    for (const auto& [name, p] : params) names.push_back(name);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    const std::string ms = man.dump();
    write_u64le(os, ms.size());
    os.write(ms.data(), static_cast<std::streamsize>(ms.size()));
    for (auto& [name, p] : params) {
        write_tensor(os, p);
        write_tensor(os, st.opt.m.at(name));
        write_tensor(os, st.opt.v.at(name));
    }
    if (!os) throw Error("short write while saving checkpoint " + path);
}

template <typename T>
void load_checkpoint(const std::string& path, SegModel<T>& model, TrainState<T>& st) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint " + path);
    char magic[sizeof(kCheckpointMagic) - 1];
    is.read(magic, sizeof(magic));
    if (!is || std::string(magic, sizeof(magic)) != kCheckpointMagic)
        throw Error(path + " is not a segkit checkpoint (bad magic)");
    const uint64_t mlen = read_u64le(is);
    std::string ms(mlen, '\0');
    is.read(ms.data(), static_cast<std::streamsize>(mlen));
    if (!is) throw Error("truncated checkpoint manifest in " + path);
    nlohmann::json man = nlohmann::json::parse(ms);

    const std::string want_digest = config_digest(model.cfg);
    const std::string got_digest = man.at("config_digest").get<std::string>();
    if (got_digest != want_digest)
        throw Error("checkpoint field config_digest mismatch: file has " + got_digest +
                    " but the current model is " + want_digest);
    const std::string got_dtype = man.at("dtype").get<std::string>();
    if (got_dtype != dtype_name<T>())
        throw Error(std::string("checkpoint field dtype mismatch: file has ") + got_dtype +
                    " but the current model is " + dtype_name<T>());

    const auto& aw = man.at("adamw");
    auto check_hyper = [&](const char* key, double current) {
        const double file_v = aw.at(key).get<double>();
        if (file_v != current) {
            std::ostringstream os;
            os << std::setprecision(17) << "checkpoint field adamw." << key
               << " mismatch: file has " << file_v << " but the current optimizer uses "
               << current;
            throw Error(os.str());
        }
    };
    check_hyper("lr", st.opt.cfg.lr);
    check_hyper("beta1", st.opt.cfg.beta1);
    check_hyper("beta2", st.opt.cfg.beta2);
    check_hyper("eps", st.opt.cfg.eps);
    check_hyper("weight_decay", st.opt.cfg.weight_decay);
    check_hyper("clip_norm", st.opt.cfg.clip_norm);

    auto params = model.named_params();
    const auto& names = man.at("tensors");
    if (names.size() != params.size())
        throw Error("checkpoint field tensors mismatch: file lists " +
                    std::to_string(names.size()) + " parameters, the current model has " +
                    std::to_string(params.size()));
    for (size_t i = 0; i < params.size(); ++i)
        if (names[i].get<std::string>() != params[i].first)
            throw Error("checkpoint field tensors mismatch at entry " + std::to_string(i) +
                        ": file has '" + names[i].get<std::string>() + "', the current model has '" +
                        params[i].first + "'");

    std::map<std::string, Tensor<T>> new_m, new_v;
    for (auto& [name, p] : params) {
        Tensor<T> loaded = read_tensor<T>(is);
        if (loaded.shape() != p.shape())
            throw ShapeError("checkpoint tensor '" + name + "' has shape " +
                             shape_str(loaded.shape()) + " but the model expects " +
                             shape_str(p.shape()));
        std::copy(loaded.data(), loaded.data() + loaded.numel(), p.data());
        new_m.emplace(name, read_tensor<T>(is));
        new_v.emplace(name, read_tensor<T>(is));
        if (new_m.at(name).shape() != p.shape() || new_v.at(name).shape() != p.shape())
            throw ShapeError("checkpoint optimizer state for '" + name + "' has the wrong shape");
    }
    if (!is) throw Error("truncated tensor section in checkpoint " + path);

    st.opt.m = std::move(new_m);
    st.opt.v = std::move(new_v);
    st.opt.t = man.at("adamw").at("t").get<int64_t>();
    st.iter = man.at("iter").get<int64_t>();
    st.rng.restore_state(man.at("rng_state").get<std::string>());
}

}  // namespace segkit
