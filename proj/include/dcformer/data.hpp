#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dcformer/config.hpp"
#include "dcformer/rng.hpp"
#include "dcformer/tensor.hpp"

namespace dcformer {

enum class Split { Train, Query, Gallery };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Query: return "query";
        default: return "gallery";
    }
}

struct ReidSample {
    int identity = 0;
    int camera = 0;
    Split split = Split::Train;
};

// Labeled image set under the open-set re-ID protocol: train and test
// identity sets are disjoint; every query identity appears in the gallery
// under at least one other camera.
struct SyntheticReidDataset {
    Tensor images;  // [M, ch, H, W], 64-bit values
    std::vector<ReidSample> meta;
    GeneratorConfig cfg;
    std::uint64_t seed = 0;
    std::vector<std::size_t> train_indices, query_indices, gallery_indices;

    std::size_t size() const { return meta.size(); }
    std::size_t num_train_identities() const { return cfg.num_train_identities; }

    Tensor gather_images(const std::vector<std::size_t>& indices) const {
        const std::size_t ch = images.dim(1), h = images.dim(2), w = images.dim(3);
        const std::size_t px = ch * h * w;
        std::vector<double> out(indices.size() * px);
        for (std::size_t i = 0; i < indices.size(); ++i)
            std::copy(images.values().begin() + indices[i] * px,
                      images.values().begin() + (indices[i] + 1) * px, out.begin() + i * px);
        return Tensor({indices.size(), ch, h, w}, std::move(out));
    }

    void check_protocol() const {
        std::set<int> train_ids, test_ids;
        for (std::size_t i = 0; i < meta.size(); ++i)
            (meta[i].split == Split::Train ? train_ids : test_ids).insert(meta[i].identity);
        for (int id : test_ids)
            if (train_ids.count(id))
                throw ConfigError("re-ID protocol violated: identity " + std::to_string(id) +
                                  " appears in both train and test splits");
        for (std::size_t q : query_indices) {
            bool matched = false;
            for (std::size_t g : gallery_indices)
                if (meta[g].identity == meta[q].identity && meta[g].camera != meta[q].camera) {
                    matched = true;
                    break;
                }
            if (!matched)
                throw ConfigError("re-ID protocol violated: query identity " +
                                  std::to_string(meta[q].identity) +
                                  " has no cross-camera gallery match");
        }
    }
};

namespace datagen {

// Derivation tags keep the per-identity, per-camera and per-instance streams
// independent of each other and of the counts, so smaller identity subsets
// are strict prefixes of larger ones.
constexpr std::uint64_t kTagDecoder = 0x00dec0de00ULL;
constexpr std::uint64_t kTagTrainId = 0x0011aa0000ULL;
constexpr std::uint64_t kTagTestId = 0x0022bb0000ULL;
constexpr std::uint64_t kTagCamera = 0x0033cc0000ULL;
constexpr std::uint64_t kTagInstance = 0x0044dd0000ULL;

inline std::vector<double> identity_signature(std::uint64_t seed, std::uint64_t tag,
                                              std::size_t index, std::size_t dim) {
    Rng rng(splitmix64(seed ^ (tag + index)));
    std::vector<double> z(dim);
    for (double& v : z) v = rng.normal();
    return z;
}

}  // namespace datagen

// Deterministic synthetic generator: each identity is a random signature
// rendered through a fixed random linear decoder; each instance applies a
// camera-specific per-channel color transform, an integer translation jitter
// and additive pixel noise.
inline SyntheticReidDataset generate(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t ch = cfg.channels, h = cfg.height, w = cfg.width;
    const std::size_t px = ch * h * w;
    const std::size_t sig = cfg.signature_dim;

    // fixed decoder, pixel variance ~ 1
    Rng dec_rng(splitmix64(seed ^ datagen::kTagDecoder));
    std::vector<double> decoder(px * sig);
    const double dec_std = 1.0 / std::sqrt(static_cast<double>(sig));
    for (double& v : decoder) v = dec_rng.normal(0.0, dec_std);

    // camera color transforms
    std::vector<double> cam_gain(cfg.num_cameras * ch), cam_bias(cfg.num_cameras * ch);
    for (std::size_t c = 0; c < cfg.num_cameras; ++c) {
        Rng cam_rng(splitmix64(seed ^ (datagen::kTagCamera + c)));
        for (std::size_t k = 0; k < ch; ++k) {
            cam_gain[c * ch + k] = 1.0 + cam_rng.uniform(-cfg.color_shift, cfg.color_shift);
            cam_bias[c * ch + k] = cam_rng.uniform(-cfg.color_shift, cfg.color_shift);
        }
    }

    const std::size_t total_ids = cfg.num_train_identities + cfg.num_test_identities;
    const std::size_t m = total_ids * cfg.instances_per_identity;
    std::vector<double> images(m * px);
    std::vector<ReidSample> meta(m);

    SyntheticReidDataset ds;
    std::vector<double> base(px), shifted(px);
    std::size_t row = 0;
    for (std::size_t gid = 0; gid < total_ids; ++gid) {
        const bool is_train = gid < cfg.num_train_identities;
        const std::size_t local = is_train ? gid : gid - cfg.num_train_identities;
        const std::uint64_t tag = is_train ? datagen::kTagTrainId : datagen::kTagTestId;
        const std::vector<double> z = datagen::identity_signature(seed, tag, local, sig);

        // render the identity once
        for (std::size_t p = 0; p < px; ++p) {
            double acc = 0.0;
            for (std::size_t s = 0; s < sig; ++s) acc += decoder[p * sig + s] * z[s];
            base[p] = acc;
        }

        std::map<int, std::size_t> seen_on_camera;
        for (std::size_t inst = 0; inst < cfg.instances_per_identity; ++inst, ++row) {
            const int cam = static_cast<int>(inst % cfg.num_cameras);
            Rng inst_rng(splitmix64(seed ^ (datagen::kTagInstance + (tag + local) * 1000003ULL +
                                            inst)));
            const long jx = cfg.jitter == 0
                                ? 0
                                : static_cast<long>(inst_rng.below(2 * cfg.jitter + 1)) -
                                      static_cast<long>(cfg.jitter);
            const long jy = cfg.jitter == 0
                                ? 0
                                : static_cast<long>(inst_rng.below(2 * cfg.jitter + 1)) -
                                      static_cast<long>(cfg.jitter);
            // camera transform, then integer shift with zero fill, then noise
            for (std::size_t c = 0; c < ch; ++c) {
                const double g = cam_gain[cam * ch + c];
                const double b = cam_bias[cam * ch + c];
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        const long sy = static_cast<long>(y) - jy;
                        const long sx = static_cast<long>(x) - jx;
                        double v = 0.0;
                        if (sy >= 0 && sy < static_cast<long>(h) && sx >= 0 &&
                            sx < static_cast<long>(w))
                            v = g * base[(c * h + sy) * w + sx] + b;
                        shifted[(c * h + y) * w + x] = v;
                    }
            }
            double* dst = images.data() + row * px;
            for (std::size_t p = 0; p < px; ++p)
                dst[p] = shifted[p] + (cfg.noise_std > 0.0 ? inst_rng.normal(0.0, cfg.noise_std)
                                                           : 0.0);

            ReidSample& s = meta[row];
            s.identity = static_cast<int>(gid);
            s.camera = cam;
            if (is_train) {
                s.split = Split::Train;
                ds.train_indices.push_back(row);
            } else if (seen_on_camera[cam]++ == 0) {
                s.split = Split::Query;  // first instance per (identity, camera)
                ds.query_indices.push_back(row);
            } else {
                s.split = Split::Gallery;
                ds.gallery_indices.push_back(row);
            }
        }
    }

    ds.images = Tensor({m, ch, h, w}, std::move(images));
    ds.meta = std::move(meta);
    ds.cfg = cfg;
    ds.seed = seed;
    ds.check_protocol();
    return ds;
}

// Train-time horizontal flip of selected images (values only).
inline Tensor flip_horizontal(const Tensor& images, const std::vector<bool>& mask) {
    require_shape(images.rank() == 4, "flip_horizontal: expected [B, ch, H, W]");
    require(mask.size() == images.dim(0), "flip_horizontal: mask size mismatch");
    Tensor out = images.clone();
    const std::size_t ch = images.dim(1), h = images.dim(2), w = images.dim(3);
    for (std::size_t b = 0; b < images.dim(0); ++b) {
        if (!mask[b]) continue;
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w / 2; ++x)
                    std::swap(out.at({b, c, y, x}), out.at({b, c, y, w - 1 - x}));
    }
    return out;
}

// Identity-balanced batch stream: P identities x K instances. Each epoch
// visits the train identities in a seeded-shuffled order and samples K
// instances per identity without replacement; batches are a pure function of
// (seed, epoch), so resuming needs no sampler state.
class PkSampler {
public:
    PkSampler(const SyntheticReidDataset& ds, std::size_t p, std::size_t k, std::uint64_t seed)
        : p_(p), k_(k), seed_(seed) {
        require(p >= 2 && k >= 2, "PkSampler: need p >= 2 and k >= 2");
        std::map<int, std::vector<std::size_t>> by_id;
        for (std::size_t i : ds.train_indices) by_id[ds.meta[i].identity].push_back(i);
        if (by_id.size() < p)
            throw ContractError("PkSampler: sampler contract violated, " +
                                std::to_string(by_id.size()) + " train identities < P = " +
                                std::to_string(p));
        for (const auto& [id, rows] : by_id) {
            if (rows.size() < k)
                throw ContractError("PkSampler: sampler contract violated, identity " +
                                    std::to_string(id) + " has " + std::to_string(rows.size()) +
                                    " instances < K = " + std::to_string(k));
            ids_.push_back(id);
            instances_.push_back(rows);
        }
    }

    std::size_t batches_per_epoch() const { return ids_.size() / p_; }
    std::size_t batch_size() const { return p_ * k_; }

    struct Batch {
        std::vector<std::size_t> indices;  // rows into the dataset
        std::vector<int> labels;           // train identity ids
    };

    std::vector<Batch> epoch_batches(std::size_t epoch) const {
        Rng rng(splitmix64(seed_ ^ (0x00ba7c4e5ULL + epoch)));
        std::vector<std::size_t> order(ids_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        std::vector<Batch> batches(batches_per_epoch());
        for (std::size_t b = 0; b < batches.size(); ++b) {
            Batch& batch = batches[b];
            for (std::size_t pi = 0; pi < p_; ++pi) {
                const std::size_t which = order[b * p_ + pi];
                std::vector<std::size_t> rows = instances_[which];
                rng.shuffle(rows);
                for (std::size_t ki = 0; ki < k_; ++ki) {
                    batch.indices.push_back(rows[ki]);
                    batch.labels.push_back(ids_[which]);
                }
            }
        }
        return batches;
    }

private:
    std::size_t p_, k_;
    std::uint64_t seed_;
    std::vector<int> ids_;
    std::vector<std::vector<std::size_t>> instances_;
};

// --------------------------------------------------------------------------
// On-disk formats
// --------------------------------------------------------------------------

namespace rawio {

inline void write_f32_le(std::ostream& os, const std::vector<double>& values) {
    for (double v : values) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        static_assert(sizeof(bits) == sizeof(f));
        std::memcpy(&bits, &f, sizeof(bits));
        const unsigned char bytes[4] = {
            static_cast<unsigned char>(bits & 0xff),
            static_cast<unsigned char>((bits >> 8) & 0xff),
            static_cast<unsigned char>((bits >> 16) & 0xff),
            static_cast<unsigned char>((bits >> 24) & 0xff),
        };
        os.write(reinterpret_cast<const char*>(bytes), 4);
    }
}

inline std::vector<double> read_f32_le(std::istream& is, std::size_t count) {
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        unsigned char bytes[4];
        is.read(reinterpret_cast<char*>(bytes), 4);
        if (!is) throw IoError("raw float file truncated at element " + std::to_string(i));
        const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                                   (static_cast<std::uint32_t>(bytes[1]) << 8) |
                                   (static_cast<std::uint32_t>(bytes[2]) << 16) |
                                   (static_cast<std::uint32_t>(bytes[3]) << 24);
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        out[i] = static_cast<double>(f);
    }
    return out;
}

}  // namespace rawio

// Dataset dump: a manifest (key=value text, one record line per image) plus
// one raw little-endian float32 tensor file.
inline void dump_dataset(const SyntheticReidDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory: " + dir);

    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw IoError("cannot write dataset manifest in " + dir);
    manifest << "format = dcformer-dataset-v1\n";
    manifest << "seed = " << ds.seed << '\n';
    manifest << "num_images = " << ds.size() << '\n';
    manifest << "channels = " << ds.cfg.channels << '\n';
    manifest << "height = " << ds.cfg.height << '\n';
    manifest << "width = " << ds.cfg.width << '\n';
    manifest << "num_identities = " << ds.cfg.num_train_identities << '\n';
    manifest << "num_test_identities = " << ds.cfg.num_test_identities << '\n';
    manifest << "instances_per_identity = " << ds.cfg.instances_per_identity << '\n';
    manifest << "num_cameras = " << ds.cfg.num_cameras << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i)
        manifest << "record." << i << " = " << ds.meta[i].identity << ',' << ds.meta[i].camera
                 << ',' << split_name(ds.meta[i].split) << '\n';
    if (!manifest.good()) throw IoError("failed writing dataset manifest in " + dir);

    std::ofstream raw(fs::path(dir) / "images.f32", std::ios::binary);
    if (!raw) throw IoError("cannot write image tensor file in " + dir);
    rawio::write_f32_le(raw, ds.images.values());
    if (!raw.good()) throw IoError("failed writing image tensor file in " + dir);
}

inline SyntheticReidDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw IoError("cannot open dataset manifest in " + dir);
    std::map<std::string, std::string> kv;
    std::vector<std::string> records;
    std::string line;
    while (std::getline(manifest, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = cfgio::trim(line.substr(0, eq));
        const std::string value = cfgio::trim(line.substr(eq + 1));
        if (key.rfind("record.", 0) == 0) {
            const std::size_t idx = cfgio::parse_uint(key, key.substr(7));
            if (records.size() <= idx) records.resize(idx + 1);
            records[idx] = value;
        } else {
            kv[key] = value;
        }
    }
    if (kv["format"] != "dcformer-dataset-v1")
        throw IoError("dataset manifest in " + dir + " has unknown format '" + kv["format"] + "'");

    SyntheticReidDataset ds;
    ds.seed = cfgio::parse_uint("seed", kv["seed"]);
    ds.cfg.channels = cfgio::parse_uint("channels", kv["channels"]);
    ds.cfg.height = cfgio::parse_uint("height", kv["height"]);
    ds.cfg.width = cfgio::parse_uint("width", kv["width"]);
    ds.cfg.num_train_identities = cfgio::parse_uint("num_identities", kv["num_identities"]);
    ds.cfg.num_test_identities =
        cfgio::parse_uint("num_test_identities", kv["num_test_identities"]);
    ds.cfg.instances_per_identity =
        cfgio::parse_uint("instances_per_identity", kv["instances_per_identity"]);
    ds.cfg.num_cameras = cfgio::parse_uint("num_cameras", kv["num_cameras"]);
    const std::size_t m = cfgio::parse_uint("num_images", kv["num_images"]);
    if (records.size() != m)
        throw IoError("dataset manifest in " + dir + " lists " + std::to_string(records.size()) +
                      " records, expected " + std::to_string(m));

    ds.meta.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::string& rec = records[i];
        const auto c1 = rec.find(',');
        const auto c2 = rec.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw IoError("malformed dataset record " + std::to_string(i) + ": '" + rec + "'");
        ReidSample s;
        s.identity = static_cast<int>(cfgio::parse_uint("record", rec.substr(0, c1)));
        s.camera = static_cast<int>(cfgio::parse_uint("record", rec.substr(c1 + 1, c2 - c1 - 1)));
        const std::string sp = rec.substr(c2 + 1);
        if (sp == "train") s.split = Split::Train;
        else if (sp == "query") s.split = Split::Query;
        else if (sp == "gallery") s.split = Split::Gallery;
        else throw IoError("unknown split tag '" + sp + "' in dataset record " + std::to_string(i));
        ds.meta[i] = s;
        if (s.split == Split::Train) ds.train_indices.push_back(i);
        else if (s.split == Split::Query) ds.query_indices.push_back(i);
        else ds.gallery_indices.push_back(i);
    }

    std::ifstream raw(fs::path(dir) / "images.f32", std::ios::binary);
    if (!raw) throw IoError("cannot open image tensor file in " + dir);
    const std::size_t px = ds.cfg.channels * ds.cfg.height * ds.cfg.width;
    ds.images = Tensor({m, ds.cfg.channels, ds.cfg.height, ds.cfg.width},
                       rawio::read_f32_le(raw, m * px));
    return ds;
}

// Market-style image-folder layout: <root>/{train,query,gallery}/ with files
// named <id>_c<cam>_<idx>.f32 holding raw little-endian float32 pixels
// (channels * height * width). Train identities are relabeled to a dense
// 0..T-1 range in ascending id order.
inline SyntheticReidDataset load_image_folder(const std::string& root, std::size_t channels,
                                              std::size_t height, std::size_t width) {
    namespace fs = std::filesystem;
    const std::size_t px = channels * height * width;

    struct FileEntry {
        int id;
        int cam;
        long idx;
        Split split;
        fs::path path;
    };
    std::vector<FileEntry> files;
    for (Split split : {Split::Train, Split::Query, Split::Gallery}) {
        const fs::path dir = fs::path(root) / split_name(split);
        if (!fs::exists(dir)) {
            if (split == Split::Train) continue;  // query/gallery-only roots are allowed
            continue;
        }
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            const std::string stem = entry.path().stem().string();
            // <id>_c<cam>_<idx>
            const auto u1 = stem.find("_c");
            if (u1 == std::string::npos) continue;
            const auto u2 = stem.find('_', u1 + 2);
            if (u2 == std::string::npos) continue;
            try {
                FileEntry fe;
                fe.id = std::stoi(stem.substr(0, u1));
                fe.cam = std::stoi(stem.substr(u1 + 2, u2 - u1 - 2));
                fe.idx = std::stol(stem.substr(u2 + 1));
                fe.split = split;
                fe.path = entry.path();
                files.push_back(fe);
            } catch (const std::exception&) {
                throw IoError("cannot parse re-ID filename '" + stem +
                              "' (expected <id>_c<cam>_<idx>)");
            }
        }
    }
    if (files.empty()) throw IoError("no images found under " + root);
    std::sort(files.begin(), files.end(), [](const FileEntry& a, const FileEntry& b) {
        if (a.split != b.split) return static_cast<int>(a.split) < static_cast<int>(b.split);
        if (a.id != b.id) return a.id < b.id;
        if (a.cam != b.cam) return a.cam < b.cam;
        return a.idx < b.idx;
    });

    std::map<int, int> train_relabel;
    for (const FileEntry& fe : files)
        if (fe.split == Split::Train) train_relabel.emplace(fe.id, 0);
    int next = 0;
    for (auto& [id, label] : train_relabel) label = next++;

    SyntheticReidDataset ds;
    ds.cfg.channels = channels;
    ds.cfg.height = height;
    ds.cfg.width = width;
    ds.cfg.num_train_identities = train_relabel.size();
    std::vector<double> images(files.size() * px);
    for (std::size_t i = 0; i < files.size(); ++i) {
        std::ifstream raw(files[i].path, std::ios::binary);
        if (!raw) throw IoError("cannot open " + files[i].path.string());
        const std::vector<double> pixels = rawio::read_f32_le(raw, px);
        std::copy(pixels.begin(), pixels.end(), images.begin() + i * px);
        ReidSample s;
        s.identity = files[i].split == Split::Train ? train_relabel[files[i].id] : files[i].id;
        s.camera = files[i].cam;
        s.split = files[i].split;
        ds.meta.push_back(s);
        if (s.split == Split::Train) ds.train_indices.push_back(i);
        else if (s.split == Split::Query) ds.query_indices.push_back(i);
        else ds.gallery_indices.push_back(i);
    }
    ds.images = Tensor({files.size(), channels, height, width}, std::move(images));
    return ds;
}

}  // namespace dcformer
