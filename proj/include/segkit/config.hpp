#pragma once

// Run configuration: one struct covering model, training, evaluation, and
// data, loadable from a small TOML dialect or JSON. Unknown keys are
// rejected, and every run can be replayed from its resolved rendering.

#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "segkit/model.hpp"
#include "segkit/trainer.hpp"

namespace segkit {

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct EvalConfig {
    bool ms = false;
    std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
    bool flip = true;
    bool dump_mask = false;

    void validate() const {
        if (scales.empty()) throw ConfigError("eval.scales must not be empty");
        for (double s : scales)
            if (s <= 0.0) throw ConfigError("eval.scales entries must be positive");
    }
};

struct DataConfig {
    std::string source = "synthetic";  // synthetic | folder
    uint64_t seed = 0;
    int64_t n_images = 8;
    int64_t height = 64;
    int64_t width = 64;
    int64_t n_cls = 5;
    int64_t ignore_index = 255;
    std::string images_dir;
    std::string masks_dir;
    std::array<double, 3> normalize_mean{0.0, 0.0, 0.0};
    std::array<double, 3> normalize_std{1.0, 1.0, 1.0};

    void validate() const {
        if (source != "synthetic" && source != "folder")
            throw ConfigError("data.source must be synthetic or folder, got '" + source + "'");
        if (source == "folder" && (images_dir.empty() || masks_dir.empty()))
            throw ConfigError("data.source folder needs images_dir and masks_dir");
        if (n_cls < 2) throw ConfigError("data.n_cls must be at least 2");
        if (ignore_index < 0 || ignore_index > 255)
            throw ConfigError("data.ignore_index must lie in [0,255]");
        for (double s : normalize_std)
            if (s == 0.0) throw ConfigError("data.normalize_std entries must be nonzero");
    }
};

struct RunConfig {
    uint64_t seed = 0;
    std::string output_dir = "runs/out";
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;
    DataConfig data;

    void validate() const {
        model.validate();
        train.validate();
        eval.validate();
        data.validate();
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_str) {
            if (c == '\\') {
                ++i;
            } else if (c == '"') {
                in_str = false;
            }
        } else if (c == '"') {
            in_str = true;
        } else if (c == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

inline bool is_ident(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
    return true;
}

inline nlohmann::json parse_toml_value(const std::string& raw, const std::string& ctx) {
    const std::string s = trim(raw);
    if (s.empty()) throw ConfigError(ctx + ": missing value");
    if (s == "true") return true;
    if (s == "false") return false;
    if (s.front() == '"') {
        std::string out;
        size_t i = 1;
        for (; i < s.size(); ++i) {
            const char c = s[i];
            if (c == '\\') {
                if (i + 1 >= s.size()) throw ConfigError(ctx + ": dangling escape in string");
                const char e = s[++i];
                if (e == '"' || e == '\\')
                    out += e;
                else
                    throw ConfigError(ctx + ": unsupported escape '\\" + std::string(1, e) + "'");
            } else if (c == '"') {
                break;
            } else {
                out += c;
            }
        }
        if (i >= s.size()) throw ConfigError(ctx + ": unterminated string");
        if (!trim(s.substr(i + 1)).empty())
            throw ConfigError(ctx + ": trailing characters after string");
        return out;
    }
    if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError(ctx + ": unterminated array");
        const std::string body = s.substr(1, s.size() - 2);
        nlohmann::json arr = nlohmann::json::array();
        std::string cur;
        bool in_str = false;
        for (size_t i = 0; i < body.size(); ++i) {
            const char c = body[i];
            if (in_str) {
                cur += c;
                if (c == '\\' && i + 1 < body.size())
                    cur += body[++i];
                else if (c == '"')
                    in_str = false;
                continue;
            }
            if (c == '"') {
                cur += c;
                in_str = true;
                continue;
            }
            if (c == '[') throw ConfigError(ctx + ": nested arrays are not supported");
            if (c == ',') {
                if (trim(cur).empty()) throw ConfigError(ctx + ": empty array element");
                arr.push_back(parse_toml_value(cur, ctx));
                cur.clear();
                continue;
            }
            cur += c;
        }
        if (!trim(cur).empty()) arr.push_back(parse_toml_value(cur, ctx));
        return arr;
    }
    bool integral = true;
    for (size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (i == 0 && (c == '+' || c == '-')) continue;
        if (!std::isdigit(static_cast<unsigned char>(c))) integral = false;
    }
    try {
        if (integral) {
            size_t pos = 0;
            const long long v = std::stoll(s, &pos);
            if (pos == s.size()) return static_cast<int64_t>(v);
        } else {
            size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos == s.size()) return v;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError(ctx + ": cannot parse value '" + s + "'");
}

}  // namespace detail

// [section] headers, key = value lines, # comments, scalar and flat-array
// values. Returns the same tree shape a JSON config produces.
inline nlohmann::json parse_toml_subset(std::istream& is, const std::string& path) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* cur = &root;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string ctx = path + ":" + std::to_string(lineno);
        const std::string s = detail::trim(detail::strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError(ctx + ": malformed section header");
            const std::string name = detail::trim(s.substr(1, s.size() - 2));
            if (!detail::is_ident(name)) throw ConfigError(ctx + ": bad section name '" + name + "'");
            if (root.contains(name)) throw ConfigError(ctx + ": duplicate section [" + name + "]");
            root[name] = nlohmann::json::object();
            cur = &root[name];
            continue;
        }
        size_t eq = std::string::npos;
        bool in_str = false;
        for (size_t i = 0; i < s.size(); ++i) {
            if (in_str) {
                if (s[i] == '\\')
                    ++i;
                else if (s[i] == '"')
                    in_str = false;
            } else if (s[i] == '"') {
                in_str = true;
            } else if (s[i] == '=') {
                eq = i;
                break;
            }
        }
        if (eq == std::string::npos) throw ConfigError(ctx + ": expected key = value");
        const std::string key = detail::trim(s.substr(0, eq));
        if (!detail::is_ident(key)) throw ConfigError(ctx + ": bad key '" + key + "'");
        if (cur->contains(key)) throw ConfigError(ctx + ": duplicate key '" + key + "'");
        (*cur)[key] = detail::parse_toml_value(s.substr(eq + 1), ctx);
    }
    return root;
}

namespace detail {

// Strict typed access to one section; every key must be consumed or the
// reader reports it as unknown.
class SectionReader {
public:
    SectionReader(const nlohmann::json& sec, std::string label, std::string path)
        : sec_(&sec), label_(std::move(label)), path_(std::move(path)) {}

    bool has(const std::string& key) const { return sec_->contains(key); }

    int64_t i64(const std::string& key, int64_t dflt) {
        const nlohmann::json* v = fetch(key);
        if (!v) return dflt;
        if (!v->is_number_integer()) type_err(key, "an integer");
        return v->get<int64_t>();
    }

    uint64_t u64(const std::string& key, uint64_t dflt) {
        const nlohmann::json* v = fetch(key);
        if (!v) return dflt;
        if (!v->is_number_integer() || (v->is_number_integer() && v->get<int64_t>() < 0))
            type_err(key, "a nonnegative integer");
        return v->get<uint64_t>();
    }

    double f64(const std::string& key, double dflt) {
        const nlohmann::json* v = fetch(key);
        if (!v) return dflt;
        if (!v->is_number()) type_err(key, "a number");
        return v->get<double>();
    }

    bool boolean(const std::string& key, bool dflt) {
        const nlohmann::json* v = fetch(key);
        if (!v) return dflt;
        if (!v->is_boolean()) type_err(key, "true or false");
        return v->get<bool>();
    }

    std::string str(const std::string& key, const std::string& dflt) {
        const nlohmann::json* v = fetch(key);
        if (!v) return dflt;
        if (!v->is_string()) type_err(key, "a string");
        return v->get<std::string>();
    }

    std::vector<int64_t> vec_i64(const std::string& key, std::vector<int64_t> dflt) {
        const nlohmann::json* v = fetch(key);
        if (!v) return dflt;
        if (!v->is_array()) type_err(key, "an array of integers");
        std::vector<int64_t> out;
        for (const auto& e : *v) {
            if (!e.is_number_integer()) type_err(key, "an array of integers");
            out.push_back(e.get<int64_t>());
        }
        return out;
    }

    std::vector<double> vec_f64(const std::string& key, std::vector<double> dflt) {
        const nlohmann::json* v = fetch(key);
        if (!v) return dflt;
        if (!v->is_array()) type_err(key, "an array of numbers");
        std::vector<double> out;
        for (const auto& e : *v) {
            if (!e.is_number()) type_err(key, "an array of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }

    std::vector<std::string> vec_str(const std::string& key, std::vector<std::string> dflt) {
        const nlohmann::json* v = fetch(key);
        if (!v) return dflt;
        if (!v->is_array()) type_err(key, "an array of strings");
        std::vector<std::string> out;
        for (const auto& e : *v) {
            if (!e.is_string()) type_err(key, "an array of strings");
            out.push_back(e.get<std::string>());
        }
        return out;
    }

    void reject_unknown() const {
        for (auto it = sec_->begin(); it != sec_->end(); ++it)
            if (!used_.count(it.key()))
                throw ConfigError(path_ + ": unknown key '" + it.key() + "' in " + label_);
    }

private:
    const nlohmann::json* sec_;
    std::string label_;
    std::string path_;
    std::set<std::string> used_;

    const nlohmann::json* fetch(const std::string& key) {
        used_.insert(key);
        auto it = sec_->find(key);
        return it == sec_->end() ? nullptr : &*it;
    }

    [[noreturn]] void type_err(const std::string& key, const char* want) const {
        throw ConfigError(path_ + ": " + label_ + " key '" + key + "' must be " + want);
    }
};

inline std::array<double, 3> triple(const std::vector<double>& v, const std::string& path,
                                    const char* key, std::array<double, 3> dflt) {
    if (v.empty()) return dflt;
    if (v.size() != 3)
        throw ConfigError(path + ": " + key + " needs exactly 3 entries, got " +
                          std::to_string(v.size()));
    return {v[0], v[1], v[2]};
}

}  // namespace detail

inline RunConfig run_config_from_tree(const nlohmann::json& tree, const std::string& path) {
    if (!tree.is_object()) throw ConfigError(path + ": config root must be a table");
    RunConfig cfg;
    std::set<std::string> used;

    {
        detail::SectionReader top(tree, "the top level", path);
        cfg.seed = top.u64("seed", cfg.seed);
        cfg.output_dir = top.str("output_dir", cfg.output_dir);
        used.insert("seed");
        used.insert("output_dir");
    }

    auto section = [&](const char* name) -> const nlohmann::json* {
        used.insert(name);
        auto it = tree.find(name);
        if (it == tree.end()) return nullptr;
        if (!it->is_object()) throw ConfigError(path + ": [" + name + "] must be a section");
        return &*it;
    };

    if (const nlohmann::json* b = section("backbone")) {
        detail::SectionReader r(*b, "[backbone]", path);
        const std::string preset = r.str("preset", "");
        if (!preset.empty()) {
            try {
                cfg.model.backbone = BackboneConfig::preset(preset);
            } catch (const Error& e) {
                throw ConfigError(path + ": [backbone] preset: " + e.what());
            }
        }
        cfg.model.backbone.channels = r.vec_i64("channels", cfg.model.backbone.channels);
        cfg.model.backbone.depths = r.vec_i64("depths", cfg.model.backbone.depths);
        cfg.model.backbone.heads = r.vec_i64("heads", cfg.model.backbone.heads);
        if (r.has("attention")) {
            std::vector<AttentionMode> modes;
            try {
                for (const auto& s : r.vec_str("attention", {})) modes.push_back(attention_mode_from(s));
            } catch (const Error& e) {
                throw ConfigError(path + ": [backbone] attention: " + e.what());
            }
            cfg.model.backbone.attention = modes;
        }
        if (r.has("gammas")) {
            cfg.model.backbone.gammas.clear();
            const auto flat = r.vec_f64("gammas", {});
            if (!flat.empty()) {
                if (flat.size() != 4)
                    throw ConfigError(path + ": [backbone] gammas needs one value per stage (4)");
                for (double g : flat) cfg.model.backbone.gammas.push_back({g});
            }
        }
        cfg.model.backbone.ffn_ratio = r.i64("ffn_ratio", cfg.model.backbone.ffn_ratio);
        cfg.model.backbone.use_rotation = r.boolean("use_rotation", cfg.model.backbone.use_rotation);
        cfg.model.backbone.zero_init_residual_out =
            r.boolean("zero_init_residual_out", cfg.model.backbone.zero_init_residual_out);
        r.reject_unknown();
    }

    bool n_cls_given = false;
    if (const nlohmann::json* d = section("decoder")) {
        detail::SectionReader r(*d, "[decoder]", path);
        cfg.model.decoder.C = r.i64("c", cfg.model.decoder.C);
        n_cls_given = r.has("n_cls");
        cfg.model.decoder.n_cls = r.i64("n_cls", cfg.model.decoder.n_cls);
        cfg.model.decoder.variant = r.str("variant", cfg.model.decoder.variant);
        cfg.model.decoder.zir_enabled = r.boolean("zir", cfg.model.decoder.zir_enabled);
        r.reject_unknown();
    }

    if (const nlohmann::json* t = section("train")) {
        detail::SectionReader r(*t, "[train]", path);
        cfg.train.iters = r.i64("iters", cfg.train.iters);
        cfg.train.batch_size = r.i64("batch_size", cfg.train.batch_size);
        const double lr = r.f64("lr", cfg.train.adamw.lr);
        cfg.train.adamw.lr = lr;
        cfg.train.schedule.base_lr = lr;
        cfg.train.adamw.weight_decay = r.f64("weight_decay", cfg.train.adamw.weight_decay);
        cfg.train.adamw.beta1 = r.f64("beta1", cfg.train.adamw.beta1);
        cfg.train.adamw.beta2 = r.f64("beta2", cfg.train.adamw.beta2);
        cfg.train.adamw.eps = r.f64("eps", cfg.train.adamw.eps);
        cfg.train.adamw.clip_norm = r.f64("clip_norm", cfg.train.adamw.clip_norm);
        cfg.train.schedule.mode = r.str("schedule", cfg.train.schedule.mode);
        cfg.train.schedule.warmup_iters = r.i64("warmup_iters", cfg.train.schedule.warmup_iters);
        cfg.train.schedule.power = r.f64("power", cfg.train.schedule.power);
        cfg.train.schedule.total_iters = r.i64("total_iters", -1);
        cfg.train.augment_flip = r.boolean("augment_flip", cfg.train.augment_flip);
        cfg.train.crop = r.i64("crop", cfg.train.crop);
        cfg.train.log_every = r.i64("log_every", cfg.train.log_every);
        r.reject_unknown();
    }

    if (const nlohmann::json* e = section("eval")) {
        detail::SectionReader r(*e, "[eval]", path);
        cfg.eval.ms = r.boolean("ms", cfg.eval.ms);
        cfg.eval.scales = r.vec_f64("scales", cfg.eval.scales);
        cfg.eval.flip = r.boolean("flip", cfg.eval.flip);
        cfg.eval.dump_mask = r.boolean("dump_mask", cfg.eval.dump_mask);
        r.reject_unknown();
    }

    if (const nlohmann::json* d = section("data")) {
        detail::SectionReader r(*d, "[data]", path);
        cfg.data.source = r.str("source", cfg.data.source);
        cfg.data.seed = r.u64("seed", cfg.data.seed);
        cfg.data.n_images = r.i64("n_images", cfg.data.n_images);
        if (r.has("size")) {
            const int64_t sz = r.i64("size", 64);
            cfg.data.height = sz;
            cfg.data.width = sz;
        }
        cfg.data.height = r.i64("height", cfg.data.height);
        cfg.data.width = r.i64("width", cfg.data.width);
        cfg.data.n_cls = r.i64("n_cls", cfg.data.n_cls);
        cfg.data.ignore_index = r.i64("ignore_index", cfg.data.ignore_index);
        cfg.data.images_dir = r.str("images_dir", cfg.data.images_dir);
        cfg.data.masks_dir = r.str("masks_dir", cfg.data.masks_dir);
        cfg.data.normalize_mean = detail::triple(r.vec_f64("normalize_mean", {}), path,
                                                 "[data] normalize_mean", cfg.data.normalize_mean);
        cfg.data.normalize_std = detail::triple(r.vec_f64("normalize_std", {}), path,
                                                "[data] normalize_std", cfg.data.normalize_std);
        r.reject_unknown();
    }

    for (auto it = tree.begin(); it != tree.end(); ++it)
        if (!used.count(it.key()))
            throw ConfigError(path + ": unknown section or key '" + it.key() + "'");

    if (!n_cls_given) cfg.model.decoder.n_cls = cfg.data.n_cls;
    cfg.train.seed = cfg.seed;
    cfg.train.ignore_index = static_cast<int32_t>(cfg.data.ignore_index);
    if (cfg.train.schedule.total_iters < 0)
        cfg.train.schedule.total_iters =
            std::max(cfg.train.iters, cfg.train.schedule.warmup_iters + 1);

    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    nlohmann::json tree;
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
        try {
            tree = nlohmann::json::parse(is);
        } catch (const std::exception& e) {
            throw ConfigError(path + ": invalid JSON: " + e.what());
        }
    } else {
        tree = parse_toml_subset(is, path);
    }
    return run_config_from_tree(tree, path);
}

namespace detail {

inline std::string toml_num(double v) { return nlohmann::json(v).dump(); }

inline std::string toml_str(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

template <typename T>
std::string toml_arr(const std::vector<T>& v) {
    std::string out = "[";
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        if constexpr (std::is_same_v<T, double>)
            out += toml_num(v[i]);
        else if constexpr (std::is_same_v<T, std::string>)
            out += toml_str(v[i]);
        else
            out += std::to_string(v[i]);
    }
    return out + "]";
}

}  // namespace detail

// Canonical rendering: parsing it back reproduces the same configuration,
// so the file saved next to a run's outputs is enough to replay it.
inline std::string render_resolved_toml(const RunConfig& cfg) {
    std::ostringstream os;
    os << "seed = " << cfg.seed << "\n";
    os << "output_dir = " << detail::toml_str(cfg.output_dir) << "\n";

    os << "\n[backbone]\n";
    os << "channels = " << detail::toml_arr(cfg.model.backbone.channels) << "\n";
    os << "depths = " << detail::toml_arr(cfg.model.backbone.depths) << "\n";
    os << "heads = " << detail::toml_arr(cfg.model.backbone.heads) << "\n";
    std::vector<std::string> modes;
    for (auto m : cfg.model.backbone.attention) modes.push_back(to_string(m));
    os << "attention = " << detail::toml_arr(modes) << "\n";
    std::vector<double> flat_gammas;
    for (const auto& g : cfg.model.backbone.gammas) {
        if (g.size() != 1)
            throw ConfigError("per-head gamma overrides cannot be rendered to the config format");
        flat_gammas.push_back(g[0]);
    }
    os << "gammas = " << detail::toml_arr(flat_gammas) << "\n";
    os << "ffn_ratio = " << cfg.model.backbone.ffn_ratio << "\n";
    os << "use_rotation = " << (cfg.model.backbone.use_rotation ? "true" : "false") << "\n";
    os << "zero_init_residual_out = "
       << (cfg.model.backbone.zero_init_residual_out ? "true" : "false") << "\n";

    os << "\n[decoder]\n";
    os << "c = " << cfg.model.decoder.C << "\n";
    os << "n_cls = " << cfg.model.decoder.n_cls << "\n";
    os << "variant = " << detail::toml_str(cfg.model.decoder.variant) << "\n";
    os << "zir = " << (cfg.model.decoder.zir_enabled ? "true" : "false") << "\n";

    os << "\n[train]\n";
    os << "iters = " << cfg.train.iters << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "lr = " << detail::toml_num(cfg.train.adamw.lr) << "\n";
    os << "weight_decay = " << detail::toml_num(cfg.train.adamw.weight_decay) << "\n";
    os << "beta1 = " << detail::toml_num(cfg.train.adamw.beta1) << "\n";
    os << "beta2 = " << detail::toml_num(cfg.train.adamw.beta2) << "\n";
    os << "eps = " << detail::toml_num(cfg.train.adamw.eps) << "\n";
    os << "clip_norm = " << detail::toml_num(cfg.train.adamw.clip_norm) << "\n";
    os << "schedule = " << detail::toml_str(cfg.train.schedule.mode) << "\n";
    os << "warmup_iters = " << cfg.train.schedule.warmup_iters << "\n";
    os << "power = " << detail::toml_num(cfg.train.schedule.power) << "\n";
    os << "total_iters = " << cfg.train.schedule.total_iters << "\n";
    os << "augment_flip = " << (cfg.train.augment_flip ? "true" : "false") << "\n";
    os << "crop = " << cfg.train.crop << "\n";
    os << "log_every = " << cfg.train.log_every << "\n";

    os << "\n[eval]\n";
    os << "ms = " << (cfg.eval.ms ? "true" : "false") << "\n";
    os << "scales = " << detail::toml_arr(cfg.eval.scales) << "\n";
    os << "flip = " << (cfg.eval.flip ? "true" : "false") << "\n";
    os << "dump_mask = " << (cfg.eval.dump_mask ? "true" : "false") << "\n";

    os << "\n[data]\n";
    os << "source = " << detail::toml_str(cfg.data.source) << "\n";
    os << "seed = " << cfg.data.seed << "\n";
    os << "n_images = " << cfg.data.n_images << "\n";
    os << "height = " << cfg.data.height << "\n";
    os << "width = " << cfg.data.width << "\n";
    os << "n_cls = " << cfg.data.n_cls << "\n";
    os << "ignore_index = " << cfg.data.ignore_index << "\n";
    os << "images_dir = " << detail::toml_str(cfg.data.images_dir) << "\n";
    os << "masks_dir = " << detail::toml_str(cfg.data.masks_dir) << "\n";
    os << "normalize_mean = "
       << detail::toml_arr(std::vector<double>(cfg.data.normalize_mean.begin(),
                                               cfg.data.normalize_mean.end()))
       << "\n";
    os << "normalize_std = "
       << detail::toml_arr(std::vector<double>(cfg.data.normalize_std.begin(),
                                               cfg.data.normalize_std.end()))
       << "\n";
    return os.str();
}

inline std::string run_config_digest(const RunConfig& cfg) {
    return fnv1a64_hex(render_resolved_toml(cfg));
}

}  // namespace segkit
