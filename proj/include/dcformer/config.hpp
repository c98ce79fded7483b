#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dcformer/common.hpp"

namespace dcformer {

// Architecture and loss hyperparameters. Image geometry mirrors the dataset
// geometry; RunConfig keeps a single source of truth and copies it in here.
struct ModelConfig {
    std::size_t num_tokens = 2;    // N
    std::size_t embed_dim = 32;    // D
    std::size_t depth = 2;
    std::size_t num_heads = 4;
    std::size_t image_height = 32;
    std::size_t image_width = 16;
    std::size_t patch_size = 8;
    std::size_t patch_stride = 4;  // < patch_size means overlapping patches
    std::size_t num_channels = 3;
    std::size_t num_classes = 32;
    double lambda = 1.0;
    bool dwc_enabled = true;
    bool dwc_differentiable = false;  // gradient flows through the pair weights
    double dropout_rate = 0.0;
    double label_smoothing = 0.0;
    bool use_id_loss = true;
    bool use_triplet_loss = true;

    std::size_t grid_h() const { return (image_height - patch_size) / patch_stride + 1; }
    std::size_t grid_w() const { return (image_width - patch_size) / patch_stride + 1; }
    std::size_t num_patches() const { return grid_h() * grid_w(); }
    std::size_t patch_dim() const { return num_channels * patch_size * patch_size; }
    std::size_t seq_len() const { return num_tokens + num_patches(); }

    void validate() const {
        if (num_tokens < 1) throw ConfigError("model.num_tokens must be >= 1");
        if (embed_dim < 1) throw ConfigError("model.embed_dim must be >= 1");
        if (depth < 1) throw ConfigError("model.depth must be >= 1");
        if (num_heads < 1 || embed_dim % num_heads != 0)
            throw ConfigError("model.num_heads must divide model.embed_dim");
        if (patch_size < 1 || patch_stride < 1)
            throw ConfigError("model.patch_size and model.patch_stride must be >= 1");
        if (patch_stride > patch_size)
            throw ConfigError("model.patch_stride must not exceed model.patch_size");
        if (image_height < patch_size || image_width < patch_size)
            throw ConfigError("image extents must be at least one patch");
        if ((image_height - patch_size) % patch_stride != 0 ||
            (image_width - patch_size) % patch_stride != 0)
            throw ConfigError("patch grid does not tile the image: (extent - patch_size) must "
                              "be divisible by patch_stride");
        if (lambda < 0.0) throw ConfigError("loss.lambda must be >= 0");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("model.dropout must be in [0, 1)");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw ConfigError("loss.label_smoothing must be in [0, 1)");
        if (num_classes < 1) throw ConfigError("model num_classes must be >= 1");
    }
};

// Synthetic data generator settings. Identities are rendered from random
// low-dimensional signatures; instances add camera color shifts, integer
// translation jitter and pixel noise. Strengths are bounded at validation so
// the identity signal stays recoverable (signal variance is ~1 per pixel;
// noise_std <= 0.8 keeps per-image SNR comfortably above the matched-filter
// recovery threshold for the default geometry).
struct GeneratorConfig {
    std::size_t num_train_identities = 32;
    std::size_t num_test_identities = 16;
    std::size_t instances_per_identity = 8;
    std::size_t num_cameras = 2;
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 16;
    std::size_t signature_dim = 8;
    double color_shift = 0.2;
    std::size_t jitter = 2;
    double noise_std = 0.3;
    double hflip_prob = 0.5;

    void validate() const {
        if (num_train_identities < 2) throw ConfigError("data.num_identities must be >= 2");
        if (num_test_identities < 2) throw ConfigError("data.num_test_identities must be >= 2");
        if (instances_per_identity < 1)
            throw ConfigError("data.instances_per_identity must be >= 1");
        if (num_cameras < 2)
            throw ConfigError("data.num_cameras must be >= 2: every query needs a "
                              "cross-camera gallery match");
        if (instances_per_identity < 2 * num_cameras)
            throw ConfigError("data.instances_per_identity must be >= 2 * data.num_cameras so "
                              "each camera contributes a query and a gallery instance");
        if (channels < 1 || height < 1 || width < 1)
            throw ConfigError("data geometry must be positive");
        if (signature_dim < 1) throw ConfigError("data.signature_dim must be >= 1");
        if (color_shift < 0.0 || color_shift > 0.9)
            throw ConfigError("data.color_shift must be in [0, 0.9]");
        if (noise_std < 0.0 || noise_std > 0.8)
            throw ConfigError("data.noise_std must be in [0, 0.8]");
        if (jitter >= width || jitter >= height)
            throw ConfigError("data.jitter must be smaller than the image extents");
        if (hflip_prob < 0.0 || hflip_prob > 1.0)
            throw ConfigError("data.hflip_prob must be in [0, 1]");
    }
};

struct OptimConfig {
    double lr = 0.032;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t epochs = 30;

    void validate() const {
        if (lr <= 0.0) throw ConfigError("optim.lr must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optim.momentum must be in [0, 1)");
        if (weight_decay < 0.0) throw ConfigError("optim.weight_decay must be >= 0");
        if (epochs < 1) throw ConfigError("optim.epochs must be >= 1");
    }
};

struct SamplerConfig {
    std::size_t p = 16;  // identities per batch
    std::size_t k = 4;   // instances per identity

    void validate() const {
        if (p < 2) throw ConfigError("sampler.p must be >= 2 (triplet mining needs 2 identities)");
        if (k < 2) throw ConfigError("sampler.k must be >= 2 (each identity needs a positive)");
    }
};

struct RunConfig {
    ModelConfig model;
    GeneratorConfig data;
    OptimConfig optim;
    SamplerConfig sampler;
    std::uint64_t seed = 42;
    std::string out_dir = "runs/default";

    // The model trained by this run: geometry and class count follow the data.
    ModelConfig model_config() const {
        ModelConfig m = model;
        m.image_height = data.height;
        m.image_width = data.width;
        m.num_channels = data.channels;
        m.num_classes = data.num_train_identities;
        return m;
    }

    void validate() const {
        data.validate();
        model_config().validate();
        optim.validate();
        sampler.validate();
        if (sampler.p > data.num_train_identities)
            throw ConfigError("sampler.p exceeds data.num_identities");
        if (sampler.k > data.instances_per_identity)
            throw ConfigError("sampler.k exceeds data.instances_per_identity");
    }
};

// --------------------------------------------------------------------------
// Flat key=value config text
// --------------------------------------------------------------------------

namespace cfgio {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const char* begin = v.data();
    const char* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc() || ptr != end)
        throw ConfigError("config key '" + key + "': invalid number '" + v + "'");
    return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const char* begin = v.data();
    const char* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc() || ptr != end)
        throw ConfigError("config key '" + key + "': invalid unsigned integer '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': invalid bool '" + v + "' (use true/false)");
}

}  // namespace cfgio

inline std::string serialize_config(const RunConfig& c) {
    std::ostringstream os;
    using cfgio::fmt_double;
    os << "seed = " << c.seed << '\n';
    os << "out = " << c.out_dir << '\n';
    os << "model.num_tokens = " << c.model.num_tokens << '\n';
    os << "model.embed_dim = " << c.model.embed_dim << '\n';
    os << "model.depth = " << c.model.depth << '\n';
    os << "model.num_heads = " << c.model.num_heads << '\n';
    os << "model.patch_size = " << c.model.patch_size << '\n';
    os << "model.patch_stride = " << c.model.patch_stride << '\n';
    os << "model.dropout = " << fmt_double(c.model.dropout_rate) << '\n';
    os << "loss.lambda = " << fmt_double(c.model.lambda) << '\n';
    os << "loss.dwc = " << (c.model.dwc_enabled ? "true" : "false") << '\n';
    os << "loss.dwc_differentiable = " << (c.model.dwc_differentiable ? "true" : "false") << '\n';
    os << "loss.label_smoothing = " << fmt_double(c.model.label_smoothing) << '\n';
    os << "loss.use_id = " << (c.model.use_id_loss ? "true" : "false") << '\n';
    os << "loss.use_triplet = " << (c.model.use_triplet_loss ? "true" : "false") << '\n';
    os << "optim.lr = " << fmt_double(c.optim.lr) << '\n';
    os << "optim.momentum = " << fmt_double(c.optim.momentum) << '\n';
    os << "optim.weight_decay = " << fmt_double(c.optim.weight_decay) << '\n';
    os << "optim.epochs = " << c.optim.epochs << '\n';
    os << "sampler.p = " << c.sampler.p << '\n';
    os << "sampler.k = " << c.sampler.k << '\n';
    os << "data.num_identities = " << c.data.num_train_identities << '\n';
    os << "data.num_test_identities = " << c.data.num_test_identities << '\n';
    os << "data.instances_per_identity = " << c.data.instances_per_identity << '\n';
    os << "data.num_cameras = " << c.data.num_cameras << '\n';
    os << "data.channels = " << c.data.channels << '\n';
    os << "data.height = " << c.data.height << '\n';
    os << "data.width = " << c.data.width << '\n';
    os << "data.signature_dim = " << c.data.signature_dim << '\n';
    os << "data.color_shift = " << fmt_double(c.data.color_shift) << '\n';
    os << "data.jitter = " << c.data.jitter << '\n';
    os << "data.noise_std = " << fmt_double(c.data.noise_std) << '\n';
    os << "data.hflip_prob = " << fmt_double(c.data.hflip_prob) << '\n';
    return os.str();
}

// Parses `key = value` lines ('#' starts a comment). Unknown and duplicate
// keys are errors.
inline RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::map<std::string, bool> seen;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = cfgio::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = cfgio::trim(line.substr(0, eq));
        const std::string value = cfgio::trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
        if (seen.count(key))
            throw ConfigError("config key '" + key + "' appears more than once");
        seen[key] = true;

        using namespace cfgio;
        if (key == "seed") c.seed = parse_uint(key, value);
        else if (key == "out") c.out_dir = value;
        else if (key == "model.num_tokens") c.model.num_tokens = parse_uint(key, value);
        else if (key == "model.embed_dim") c.model.embed_dim = parse_uint(key, value);
        else if (key == "model.depth") c.model.depth = parse_uint(key, value);
        else if (key == "model.num_heads") c.model.num_heads = parse_uint(key, value);
        else if (key == "model.patch_size") c.model.patch_size = parse_uint(key, value);
        else if (key == "model.patch_stride") c.model.patch_stride = parse_uint(key, value);
        else if (key == "model.dropout") c.model.dropout_rate = parse_double(key, value);
        else if (key == "loss.lambda") c.model.lambda = parse_double(key, value);
        else if (key == "loss.dwc") c.model.dwc_enabled = parse_bool(key, value);
        else if (key == "loss.dwc_differentiable")
            c.model.dwc_differentiable = parse_bool(key, value);
        else if (key == "loss.label_smoothing") c.model.label_smoothing = parse_double(key, value);
        else if (key == "loss.use_id") c.model.use_id_loss = parse_bool(key, value);
        else if (key == "loss.use_triplet") c.model.use_triplet_loss = parse_bool(key, value);
        else if (key == "optim.lr") c.optim.lr = parse_double(key, value);
        else if (key == "optim.momentum") c.optim.momentum = parse_double(key, value);
        else if (key == "optim.weight_decay") c.optim.weight_decay = parse_double(key, value);
        else if (key == "optim.epochs") c.optim.epochs = parse_uint(key, value);
        else if (key == "sampler.p") c.sampler.p = parse_uint(key, value);
        else if (key == "sampler.k") c.sampler.k = parse_uint(key, value);
        else if (key == "data.num_identities") c.data.num_train_identities = parse_uint(key, value);
        else if (key == "data.num_test_identities")
            c.data.num_test_identities = parse_uint(key, value);
        else if (key == "data.instances_per_identity")
            c.data.instances_per_identity = parse_uint(key, value);
        else if (key == "data.num_cameras") c.data.num_cameras = parse_uint(key, value);
        else if (key == "data.channels") c.data.channels = parse_uint(key, value);
        else if (key == "data.height") c.data.height = parse_uint(key, value);
        else if (key == "data.width") c.data.width = parse_uint(key, value);
        else if (key == "data.signature_dim") c.data.signature_dim = parse_uint(key, value);
        else if (key == "data.color_shift") c.data.color_shift = parse_double(key, value);
        else if (key == "data.jitter") c.data.jitter = parse_uint(key, value);
        else if (key == "data.noise_std") c.data.noise_std = parse_double(key, value);
        else if (key == "data.hflip_prob") c.data.hflip_prob = parse_double(key, value);
        else throw ConfigError("unknown config key '" + key + "' (line " +
                               std::to_string(lineno) + ")");
    }
    return c;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace dcformer
