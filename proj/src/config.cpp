#include "comics/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace comics {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// shortest text that parses back to the same double
std::string fmt_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const long long i = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + v + "'");
}

struct Binding {
    std::string key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename Member>
Binding bind_double(std::string key, Member member) {
    return {key, [member](const TrainConfig& c) { return fmt_double(member(const_cast<TrainConfig&>(c))); },
            [member, key](TrainConfig& c, const std::string& v) { member(c) = parse_double(key, v); }};
}

template <typename Member>
Binding bind_int(std::string key, Member member) {
    return {key, [member](const TrainConfig& c) { return std::to_string(member(const_cast<TrainConfig&>(c))); },
            [member, key](TrainConfig& c, const std::string& v) {
                member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_int(key, v));
            }};
}

template <typename Member>
Binding bind_bool(std::string key, Member member) {
    return {key, [member](const TrainConfig& c) { return member(const_cast<TrainConfig&>(c)) ? "true" : "false"; },
            [member, key](TrainConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }};
}

template <typename Member>
Binding bind_string(std::string key, Member member) {
    return {key, [member](const TrainConfig& c) { return member(const_cast<TrainConfig&>(c)); },
            [member](TrainConfig& c, const std::string& v) { member(c) = v; }};
}

template <typename Member>
Binding bind_doubles(std::string key, Member member) {
    return {key,
            [member](const TrainConfig& c) {
                std::string out;
                for (double d : member(const_cast<TrainConfig&>(c))) out += (out.empty() ? "" : ",") + fmt_double(d);
                return out;
            },
            [member, key](TrainConfig& c, const std::string& v) {
                auto& target = member(c);
                const auto items = split_list(v);
                if constexpr (requires { target.push_back(0.0); }) {
                    target.clear();
                    for (const auto& it : items) target.push_back(parse_double(key, it));
                    if (target.empty()) throw std::invalid_argument("config key '" + key + "': empty list");
                } else {
                    if (items.size() != target.size())
                        throw std::invalid_argument("config key '" + key + "': expected " +
                                                    std::to_string(target.size()) + " values");
                    for (size_t i = 0; i < items.size(); ++i) target[i] = parse_double(key, items[i]);
                }
            }};
}

template <typename Member>
Binding bind_ints(std::string key, Member member) {
    return {key,
            [member](const TrainConfig& c) {
                std::string out;
                for (int d : member(const_cast<TrainConfig&>(c))) out += (out.empty() ? "" : ",") + std::to_string(d);
                return out;
            },
            [member, key](TrainConfig& c, const std::string& v) {
                auto& target = member(c);
                target.clear();
                for (const auto& it : split_list(v)) target.push_back(static_cast<int>(parse_int(key, it)));
            }};
}

#define M(path) [](TrainConfig& c) -> auto& { return c.path; }

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table = {
        bind_int("model.pyramid_channels", M(model.pyramid_channels)),
        bind_int("model.embed_dim", M(model.embed_dim)),
        bind_int("model.mask_channels", M(model.mask_channels)),
        bind_int("model.mask_size", M(model.mask_size)),
        bind_double("model.roi_scale", M(model.roi_scale)),
        bind_double("model.center_radius", M(model.center_radius)),
        bind_double("model.score_threshold", M(model.score_threshold)),
        bind_double("model.nms_threshold", M(model.nms_threshold)),
        bind_int("model.pre_nms_top_n", M(model.pre_nms_top_n)),
        bind_int("model.max_detections", M(model.max_detections)),
        bind_int("model.train_proposals_per_level", M(model.train_proposals_per_level)),
        bind_int("model.max_mask_rois_per_image", M(model.max_mask_rois_per_image)),

        bind_bool("fea.enabled", M(fea.enabled)),
        bind_string("fea.kernel_set", M(fea.kernel_set)),
        bind_ints("fea.apply_levels", M(fea.apply_levels)),
        bind_int("fea.channels", M(fea.channels)),

        bind_bool("augment.enabled", M(augment.enabled)),
        bind_double("augment.op_probability", M(augment.op_probability)),
        bind_doubles("augment.saturation_range", M(augment.saturation_range)),
        bind_doubles("augment.sharpness_range", M(augment.sharpness_range)),
        bind_doubles("augment.brightness_range", M(augment.brightness_range)),
        bind_doubles("augment.contrast_range", M(augment.contrast_range)),
        bind_int("augment.block_grid", M(augment.block_grid)),
        bind_doubles("augment.block_fraction_range", M(augment.block_fraction_range)),
        bind_doubles("augment.gaussian_variances", M(augment.gaussian_variances)),
        bind_doubles("augment.salt_pepper_fractions", M(augment.salt_pepper_fractions)),
        bind_double("augment.downscale", M(augment.downscale)),
        bind_double("augment.rotation_degrees", M(augment.rotation_degrees)),
        bind_double("augment.min_crop_area", M(augment.min_crop_area)),
        bind_double("augment.flip_probability", M(augment.flip_probability)),
        bind_bool("augment.color_jitter", M(augment.color_jitter)),
        bind_bool("augment.grayscale", M(augment.grayscale)),
        bind_bool("augment.random_block", M(augment.random_block)),
        bind_bool("augment.interpolate", M(augment.interpolate)),
        bind_bool("augment.gaussian_noise", M(augment.gaussian_noise)),
        bind_bool("augment.salt_pepper", M(augment.salt_pepper)),
        bind_bool("augment.debug_log", M(augment.debug_log)),

        bind_bool("coarse.enabled", M(coarse.enabled)),
        bind_double("coarse.tau", M(coarse.tau)),
        bind_double("coarse.beta", M(coarse.beta)),
        bind_double("coarse.alpha", M(coarse.alpha)),
        bind_double("coarse.iou_threshold", M(coarse.iou_threshold)),
        bind_int("coarse.top_k", M(coarse.top_k)),
        bind_int("coarse.queue_capacity", M(coarse.queue_capacity)),
        bind_int("coarse.min_queue_fill", M(coarse.min_queue_fill)),
        bind_doubles("coarse.layer_weights", M(coarse.layer_weights)),

        bind_bool("fine.enabled", M(fine.enabled)),
        bind_double("fine.tau", M(fine.tau)),
        bind_int("fine.erosion_radius", M(fine.erosion_radius)),
        bind_double("fine.binarize_threshold", M(fine.binarize_threshold)),
        bind_int("fine.pair_cap", M(fine.pair_cap)),
        bind_int("fine.warmup_epochs", M(fine.warmup_epochs)),

        bind_double("train.lambda1", M(lambda1)),
        bind_double("train.lambda2", M(lambda2)),
        bind_double("train.lambda3", M(lambda3)),
        bind_double("train.base_lr", M(base_lr)),
        bind_double("train.momentum", M(momentum)),
        bind_double("train.weight_decay", M(weight_decay)),
        bind_int("train.epochs", M(epochs)),
        bind_int("train.batch_size", M(batch_size)),
        bind_int("train.warmup_iters", M(warmup_iters)),
        bind_double("train.grad_clip", M(grad_clip)),
        bind_int("train.max_steps", M(max_steps)),
        bind_int("train.seed", M(seed)),
        bind_bool("train.checkpoint_each_epoch", M(checkpoint_each_epoch)),

        bind_int("data.image_size", M(data.image_size)),
        bind_int("data.faces_min", M(data.faces_min)),
        bind_int("data.faces_max", M(data.faces_max)),
        bind_double("data.fake_fraction", M(data.fake_fraction)),
        bind_int("data.face_size_min", M(data.face_size_min)),
        bind_int("data.face_size_max", M(data.face_size_max)),
        bind_double("data.texture_shift", M(data.texture_shift)),
        bind_double("data.blend_width", M(data.blend_width)),
        bind_int("data.seed", M(data.seed)),
    };
    return table;
}

#undef M

void validate(const TrainConfig& c) {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw std::invalid_argument("invalid config: " + msg);
    };
    require(c.lambda1 >= 0 && c.lambda2 >= 0 && c.lambda3 >= 0, "train.lambda* must be >= 0");
    require(c.coarse.tau > 0, "coarse.tau must be > 0");
    require(c.fine.tau > 0, "fine.tau must be > 0");
    require(c.fine.erosion_radius >= 0, "fine.erosion_radius must be >= 0");
    require(c.coarse.alpha > 0 && c.coarse.alpha < 1, "coarse.alpha must be in (0,1)");
    require(c.coarse.beta >= 0 && c.coarse.beta <= 1, "coarse.beta must be in [0,1]");
    for (double w : c.coarse.layer_weights) require(w >= 0, "coarse.layer_weights must be >= 0");
    require(c.coarse.queue_capacity > 0, "coarse.queue_capacity must be > 0");
    require(c.batch_size > 0 && c.epochs > 0, "train.batch_size and train.epochs must be > 0");
    require(c.fea.kernel_set == "srm3", "fea.kernel_set supports only 'srm3'");
    for (int l : c.fea.apply_levels) require(l >= kMinLevel && l <= kMaxLevel, "fea.apply_levels outside 3..7");
    require(c.data.faces_min >= 1 && c.data.faces_max >= c.data.faces_min, "data.faces_min/max");
    require(c.data.fake_fraction >= 0 && c.data.fake_fraction <= 1, "data.fake_fraction in [0,1]");
    require(c.model.mask_size >= 4, "model.mask_size must be >= 4");
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& source) {
    KeyValueConfig kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": empty key");
        kv.entries_[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

const std::string& KeyValueConfig::at(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw std::out_of_range("missing config key " + key);
    return it->second;
}

std::string KeyValueConfig::serialize() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
}

TrainConfig train_config_from(const KeyValueConfig& kv) {
    TrainConfig cfg;
    const auto& table = bindings();
    for (const auto& [key, value] : kv.entries()) {
        auto it = std::find_if(table.begin(), table.end(), [&](const Binding& b) { return b.key == key; });
        if (it == table.end()) throw std::invalid_argument("unknown config key '" + key + "'");
        it->set(cfg, value);
    }
    validate(cfg);
    return cfg;
}

KeyValueConfig to_key_values(const TrainConfig& cfg) {
    KeyValueConfig kv;
    for (const auto& b : bindings()) kv.set(b.key, b.get(cfg));
    return kv;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& b : bindings()) keys.push_back(b.key);
    return keys;
}

uint64_t config_hash(const TrainConfig& cfg) {
    uint64_t h = 1469598103934665603ull;
    auto feed = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
    };
    for (const auto& b : bindings()) {
        if (b.key.rfind("model.", 0) != 0 && b.key.rfind("fea.", 0) != 0) continue;
        feed(b.key);
        feed("=");
        feed(b.get(cfg));
        feed("\n");
    }
    return h;
}

}  // namespace comics
