#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dcformer/config.hpp"
#include "dcformer/optimizer.hpp"
#include "dcformer/vit.hpp"

namespace dcformer {

// Checkpoint layout (all integers little-endian):
//   4 bytes   magic "DCFW"
//   u32       format version (1)
//   u64 + bytes   config snapshot (flat key=value text)
//   u64 + bytes   manifest text: one line per state tensor,
//                 "<name> <d0>x<d1>... <param|buffer>"
//   f32 blocks    tensor data in manifest order
//   u8            1 if optimizer state follows
//   f32 blocks    momentum per learnable tensor, manifest order
//   u32           epochs completed
//   u64 + bytes   training RNG state (text)
// Parameters live in 64-bit precision in memory and are stored as 32-bit;
// the training loop rounds its live state through 32 bits at every save so a
// resumed run continues bit-identically.

constexpr char kCheckpointMagic[4] = {'D', 'C', 'F', 'W'};
constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckptio {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    write_u32(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
    write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint truncated while reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& is) {
    const std::uint64_t lo = read_u32(is);
    const std::uint64_t hi = read_u32(is);
    return lo | (hi << 32);
}

inline void write_text(std::ostream& os, const std::string& text) {
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline std::string read_text(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::string text(n, '\0');
    is.read(text.data(), static_cast<std::streamsize>(n));
    if (!is) throw IoError("checkpoint truncated while reading text block");
    return text;
}

inline void write_f32_block(std::ostream& os, const std::vector<double>& values) {
    for (double v : values) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof(bits));
        write_u32(os, bits);
    }
}

inline void read_f32_block(std::istream& is, std::vector<double>& values) {
    for (double& v : values) {
        const std::uint32_t bits = read_u32(is);
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        v = static_cast<double>(f);
    }
}

}  // namespace ckptio

inline std::string checkpoint_manifest(EncoderState& state) {
    std::ostringstream os;
    for (auto& e : state.entries()) {
        os << e.name << ' ';
        const Shape& s = e.tensor->shape();
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) os << 'x';
            os << s[i];
        }
        os << ' ' << (e.learnable ? "param" : "buffer") << '\n';
    }
    return os.str();
}

// Rounds every state tensor (and optimizer buffer) through 32-bit floats:
// the in-memory state after a save equals the state a resume would load.
inline void round_through_f32(EncoderState& state, SgdMomentum* opt) {
    for (auto& e : state.entries())
        for (double& v : e.tensor->values()) v = static_cast<double>(static_cast<float>(v));
    if (opt)
        for (auto& buf : opt->buffers)
            for (double& v : buf) v = static_cast<double>(static_cast<float>(v));
}

inline void save_checkpoint(const std::string& path, const RunConfig& cfg, EncoderState& state,
                            const SgdMomentum* opt, std::size_t epochs_completed,
                            const std::string& rng_state) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(path).parent_path(), ec);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path);
    os.write(kCheckpointMagic, 4);
    ckptio::write_u32(os, kCheckpointVersion);
    ckptio::write_text(os, serialize_config(cfg));
    ckptio::write_text(os, checkpoint_manifest(state));
    for (auto& e : state.entries()) ckptio::write_f32_block(os, e.tensor->values());
    os.put(opt ? 1 : 0);
    if (opt)
        for (const auto& buf : opt->buffers) ckptio::write_f32_block(os, buf);
    ckptio::write_u32(os, static_cast<std::uint32_t>(epochs_completed));
    ckptio::write_text(os, rng_state);
    if (!os.good()) throw IoError("failed writing checkpoint: " + path);
}

struct LoadedCheckpoint {
    RunConfig config;
    EncoderState state;
    SgdMomentum optimizer;
    bool has_optimizer = false;
    std::size_t epochs_completed = 0;
    std::string rng_state;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);
    const std::uint32_t version = ckptio::read_u32(is);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));

    LoadedCheckpoint out;
    out.config = parse_config(ckptio::read_text(is));
    const std::string manifest = ckptio::read_text(is);

    // the state skeleton comes from the config; the manifest must agree
    out.state = init_state(out.config.model_config(), 0);
    const std::string expected = checkpoint_manifest(out.state);
    if (manifest != expected)
        throw ConfigError("checkpoint manifest does not match its config (file " + path + ")");

    for (auto& e : out.state.entries()) ckptio::read_f32_block(is, e.tensor->values());
    char flag = 0;
    is.get(flag);
    if (!is) throw IoError("checkpoint truncated before optimizer flag: " + path);
    out.has_optimizer = flag != 0;
    if (out.has_optimizer) {
        out.optimizer.init(out.state);
        for (auto& buf : out.optimizer.buffers) ckptio::read_f32_block(is, buf);
    }
    out.epochs_completed = ckptio::read_u32(is);
    out.rng_state = ckptio::read_text(is);
    return out;
}

}  // namespace dcformer
