#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dcformer/checkpoint.hpp"
#include "dcformer/config.hpp"
#include "dcformer/data.hpp"
#include "dcformer/eval.hpp"
#include "dcformer/losses.hpp"
#include "dcformer/optimizer.hpp"
#include "dcformer/vit.hpp"

namespace dcformer {

// Seed derivation tags: the dataset is a pure function of (data config,
// seed); model init and the training stream get independent substreams.
namespace seeds {
inline std::uint64_t data(std::uint64_t seed) { return seed; }
inline std::uint64_t model(std::uint64_t seed) { return splitmix64(seed ^ 0x0101010101ULL); }
inline std::uint64_t train(std::uint64_t seed) { return splitmix64(seed ^ 0x0202020202ULL); }
inline std::uint64_t sampler(std::uint64_t seed) { return splitmix64(seed ^ 0x0303030303ULL); }
}  // namespace seeds

inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// One row per optimizer step; the header is fixed by N.
class MetricsWriter {
public:
    MetricsWriter() = default;

    void open(const std::string& path, std::size_t num_tokens) {
        num_tokens_ = num_tokens;
        os_.open(path);
        if (!os_) throw IoError("cannot write metrics csv: " + path);
        os_ << header(num_tokens);
        os_.flush();
    }

    static std::string header(std::size_t num_tokens) {
        std::ostringstream h;
        h << "step,epoch,lr,loss_total,loss_sdc,loss_sdc_raw";
        for (std::size_t k = 0; k < num_tokens; ++k) h << ",loss_id_t" << k;
        for (std::size_t k = 0; k < num_tokens; ++k) h << ",loss_trip_t" << k;
        for (std::size_t i = 0; i < num_tokens; ++i)
            for (std::size_t j = i + 1; j < num_tokens; ++j) h << ",nu_" << i << '_' << j;
        for (std::size_t i = 0; i < num_tokens; ++i)
            for (std::size_t j = i + 1; j < num_tokens; ++j) h << ",omega_" << i << '_' << j;
        h << '\n';
        return h.str();
    }

    void row(std::size_t step, std::size_t epoch, double lr, const LossReport& r) {
        os_ << step << ',' << epoch << ',' << fmt17(lr) << ',' << fmt17(r.total) << ','
            << fmt17(r.sdc_weighted) << ',' << fmt17(r.sdc_raw);
        for (double v : r.id_losses) os_ << ',' << fmt17(v);
        for (double v : r.triplet_losses) os_ << ',' << fmt17(v);
        for (const auto& p : r.sims.pairs) os_ << ',' << fmt17(p.nu);
        for (const auto& p : r.sims.pairs) os_ << ',' << fmt17(p.omega);
        os_ << '\n';
    }

    void flush() { os_.flush(); }

private:
    std::ofstream os_;
    std::size_t num_tokens_ = 0;
};

// --------------------------------------------------------------------------
// Evaluation glue
// --------------------------------------------------------------------------

struct TestEmbeddings {
    Tensor pre_bn;   // [M, N, D] raw final-layer tokens
    Tensor post_bn;  // [M, N, D] BNNeck outputs
};

// Eval-mode embeddings in fixed-size chunks (running statistics make the
// result chunk-size independent).
inline TestEmbeddings embed_images(EncoderState& state, const Tensor& images,
                                   std::size_t chunk = 64) {
    const std::size_t m = images.dim(0);
    const std::size_t n = state.cfg.num_tokens, d = state.cfg.embed_dim;
    std::vector<double> pre(m * n * d), post(m * n * d);
    const std::size_t px = images.size() / m;
    for (std::size_t start = 0; start < m; start += chunk) {
        const std::size_t count = std::min(chunk, m - start);
        std::vector<double> part(images.values().begin() + start * px,
                                 images.values().begin() + (start + count) * px);
        Tensor batch(Shape{count, images.dim(1), images.dim(2), images.dim(3)}, std::move(part));
        ForwardOutput fwd = forward(batch, state, nullptr, false);
        HeadsOutput heads = heads_forward(fwd.tokens, state, false);
        std::copy(fwd.tokens.values().begin(), fwd.tokens.values().end(),
                  pre.begin() + start * n * d);
        std::copy(heads.post_bn.values().begin(), heads.post_bn.values().end(),
                  post.begin() + start * n * d);
    }
    TestEmbeddings out;
    out.pre_bn = Tensor({m, n, d}, std::move(pre));
    out.post_bn = Tensor({m, n, d}, std::move(post));
    return out;
}

struct EvalOptions {
    bool normalize = true;
    // Normalize each token's features to unit length before concatenation,
    // so the fused distance is the sum of per-token cosine distances and no
    // single token dominates by scale.
    bool per_token_normalize = true;
    std::size_t cmc_k_max = 20;
    std::size_t cap_negatives = 20000;
    std::uint64_t seed = 0;
    std::size_t histogram_bins = 40;
};

// Full test-set evaluation: per-token and concatenated retrieval metrics,
// the token cosine matrix (raw tokens), distance distributions + confusion
// on the concatenated embedding, and a 2-D PCA of the per-token features.
inline EvalReport evaluate_model(EncoderState& state, const SyntheticReidDataset& ds,
                                 const EvalOptions& opt = {}) {
    const std::size_t n = state.cfg.num_tokens, d = state.cfg.embed_dim;
    Tensor query_images = ds.gather_images(ds.query_indices);
    Tensor gallery_images = ds.gather_images(ds.gallery_indices);
    TestEmbeddings q = embed_images(state, query_images);
    TestEmbeddings g = embed_images(state, gallery_images);

    RetrievalMeta qmeta, gmeta;
    for (std::size_t i : ds.query_indices) {
        qmeta.ids.push_back(ds.meta[i].identity);
        qmeta.cams.push_back(ds.meta[i].camera);
    }
    for (std::size_t i : ds.gallery_indices) {
        gmeta.ids.push_back(ds.meta[i].identity);
        gmeta.cams.push_back(ds.meta[i].camera);
    }

    EvalReport report;
    report.normalized = opt.normalize;
    report.cmc_k_max = opt.cmc_k_max;
    report.num_query = ds.query_indices.size();
    report.num_gallery = ds.gallery_indices.size();

    const std::size_t mq = report.num_query, mg = report.num_gallery;
    auto token_slice = [&](const Tensor& emb, std::size_t m, std::size_t k) {
        std::vector<double> v(m * d);
        for (std::size_t i = 0; i < m; ++i)
            std::copy(emb.values().begin() + (i * n + k) * d,
                      emb.values().begin() + (i * n + k + 1) * d, v.begin() + i * d);
        return Tensor({m, d}, std::move(v));
    };

    for (std::size_t k = 0; k < n; ++k) {
        ScopeMetrics sm;
        sm.name = "token_" + std::to_string(k);
        sm.ranking = map_cmc(token_slice(q.post_bn, mq, k), qmeta, token_slice(g.post_bn, mg, k),
                             gmeta, opt.normalize, opt.cmc_k_max);
        report.scopes.push_back(std::move(sm));
    }
    Tensor q_cat = embed_for_retrieval(q.post_bn);
    Tensor g_cat = embed_for_retrieval(g.post_bn);
    {
        ScopeMetrics sm;
        sm.name = "concat";
        sm.ranking = map_cmc(q_cat, qmeta, g_cat, gmeta, opt.normalize, opt.cmc_k_max);
        report.scopes.push_back(std::move(sm));
    }

    // raw-token cosine structure over the whole test set
    {
        const std::size_t m = mq + mg;
        std::vector<double> all(m * n * d);
        std::copy(q.pre_bn.values().begin(), q.pre_bn.values().end(), all.begin());
        std::copy(g.pre_bn.values().begin(), g.pre_bn.values().end(),
                  all.begin() + mq * n * d);
        report.token_cosine = token_cosine_matrix(Tensor({m, n, d}, std::move(all)));
    }

    report.distances = distance_distributions(q_cat, qmeta, g_cat, gmeta, opt.normalize,
                                              opt.cap_negatives, opt.seed, opt.histogram_bins);
    report.confusion = confusion_count(report.distances);

    // 2-D projection of the per-token features across the test set
    {
        const std::size_t m = mq + mg;
        std::vector<double> stacked(m * n * d);
        std::vector<int> identities(m);
        for (std::size_t i = 0; i < mq; ++i) identities[i] = qmeta.ids[i];
        for (std::size_t i = 0; i < mg; ++i) identities[mq + i] = gmeta.ids[i];
        for (std::size_t i = 0; i < mq; ++i)
            std::copy(q.post_bn.values().begin() + i * n * d,
                      q.post_bn.values().begin() + (i + 1) * n * d, stacked.begin() + i * n * d);
        for (std::size_t i = 0; i < mg; ++i)
            std::copy(g.post_bn.values().begin() + i * n * d,
                      g.post_bn.values().begin() + (i + 1) * n * d,
                      stacked.begin() + (mq + i) * n * d);
        PcaResult pca = pca_project(Tensor({m * n, d}, std::move(stacked)));
        report.pca_eigenvalues = pca.eigenvalues;
        report.pca_explained = pca.explained_ratio;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t k = 0; k < n; ++k)
                report.pca_points.push_back({static_cast<int>(k), identities[i],
                                             pca.projected.at({i * n + k, 0}),
                                             pca.projected.at({i * n + k, 1})});
    }
    return report;
}

// --------------------------------------------------------------------------
// Training loop
// --------------------------------------------------------------------------

struct TrainArtifacts {
    std::string out_dir;
    std::string metrics_path;
    std::string final_checkpoint_path;
    EvalReport final_report;
    LossReport last_loss;
    std::size_t steps = 0;
};

// Everything except the out directory must match for a resume.
inline std::string config_signature(const RunConfig& cfg) {
    std::istringstream is(serialize_config(cfg));
    std::ostringstream os;
    std::string line;
    while (std::getline(is, line))
        if (line.rfind("out =", 0) != 0) os << line << '\n';
    return os.str();
}

// SGD + momentum + cosine decay over PK batches. Per-step LossReport rows go
// to metrics.csv; a checkpoint is written every epoch (and the live state is
// rounded through the stored 32-bit precision so resumed and uninterrupted
// runs continue identically). A non-finite loss aborts with a diagnostic
// dump.
inline TrainArtifacts train_run(const RunConfig& cfg, std::ostream* log = nullptr,
                                const std::string& resume_path = "") {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");

    SyntheticReidDataset ds = generate(cfg.data, seeds::data(cfg.seed));
    const ModelConfig model_cfg = cfg.model_config();

    EncoderState state;
    SgdMomentum opt;
    Rng train_rng(seeds::train(cfg.seed));
    std::size_t start_epoch = 0;
    if (resume_path.empty()) {
        state = init_state(model_cfg, seeds::model(cfg.seed));
        opt.init(state);
    } else {
        LoadedCheckpoint ckpt = load_checkpoint(resume_path);
        if (config_signature(ckpt.config) != config_signature(cfg))
            throw ConfigError("resume: checkpoint config does not match the run config");
        state = std::move(ckpt.state);
        if (ckpt.has_optimizer) opt = std::move(ckpt.optimizer);
        else opt.init(state);
        train_rng.restore(ckpt.rng_state);
        start_epoch = ckpt.epochs_completed;
        if (start_epoch >= cfg.optim.epochs)
            throw ConfigError("resume: checkpoint already covers all configured epochs");
    }

    PkSampler sampler(ds, cfg.sampler.p, cfg.sampler.k, seeds::sampler(cfg.seed));
    const std::size_t steps_per_epoch = sampler.batches_per_epoch();
    const std::size_t total_steps = steps_per_epoch * cfg.optim.epochs;

    MetricsWriter metrics;
    const std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
    metrics.open(metrics_path, model_cfg.num_tokens);

    TrainArtifacts artifacts;
    artifacts.out_dir = cfg.out_dir;
    artifacts.metrics_path = metrics_path;

    std::size_t global_step = start_epoch * steps_per_epoch;
    for (std::size_t epoch = start_epoch; epoch < cfg.optim.epochs; ++epoch) {
        for (const PkSampler::Batch& batch : sampler.epoch_batches(epoch)) {
            Tensor images = ds.gather_images(batch.indices);
            if (cfg.data.hflip_prob > 0.0) {
                std::vector<bool> mask(images.dim(0));
                for (std::size_t i = 0; i < mask.size(); ++i)
                    mask[i] = train_rng.bernoulli(cfg.data.hflip_prob);
                images = flip_horizontal(images, mask);
            }

            auto tape = Tape::make();
            watch_parameters(state, *tape);
            ForwardOutput fwd = forward(images, state, &train_rng, true);
            HeadsOutput heads = heads_forward(fwd.tokens, state, true);
            LossReport report = total_loss(fwd.tokens, heads.logits, batch.labels, model_cfg);

            if (!report.finite()) {
                metrics.flush();
                std::ofstream dump(fs::path(cfg.out_dir) / "nan_dump.txt");
                dump << "step = " << global_step << "\nepoch = " << epoch << '\n'
                     << "loss_total = " << fmt17(report.total) << '\n'
                     << "loss_sdc = " << fmt17(report.sdc_weighted) << '\n';
                for (std::size_t k = 0; k < report.id_losses.size(); ++k)
                    dump << "loss_id_t" << k << " = " << fmt17(report.id_losses[k]) << '\n';
                for (std::size_t k = 0; k < report.triplet_losses.size(); ++k)
                    dump << "loss_trip_t" << k << " = " << fmt17(report.triplet_losses[k]) << '\n';
                throw NumericError("non-finite loss at step " + std::to_string(global_step) +
                                   "; diagnostic dump written to " + cfg.out_dir + "/nan_dump.txt");
            }

            const double lr = cosine_lr(cfg.optim.lr, global_step, total_steps);
            if (report.total_tensor.tracked()) {
                zero_gradients(state);
                tape->backward(report.total_tensor);
                opt.step(state, lr, cfg.optim.momentum, cfg.optim.weight_decay);
            }
            metrics.row(global_step, epoch, lr, report);
            artifacts.last_loss = report;
            ++global_step;
        }

        char name[64];
        std::snprintf(name, sizeof(name), "epoch_%04zu.ckpt", epoch + 1);
        const std::string ckpt_path = (fs::path(cfg.out_dir) / "checkpoints" / name).string();
        save_checkpoint(ckpt_path, cfg, state, &opt, epoch + 1, train_rng.serialize());
        round_through_f32(state, &opt);
        if (log)
            (*log) << "epoch " << (epoch + 1) << "/" << cfg.optim.epochs << " loss_total="
                   << artifacts.last_loss.total << " sdc=" << artifacts.last_loss.sdc_weighted
                   << '\n';
    }
    metrics.flush();

    const std::string final_path = (fs::path(cfg.out_dir) / "final.ckpt").string();
    save_checkpoint(final_path, cfg, state, &opt, cfg.optim.epochs, train_rng.serialize());
    artifacts.final_checkpoint_path = final_path;
    artifacts.steps = global_step;

    EvalOptions eval_opt;
    eval_opt.seed = cfg.seed;
    artifacts.final_report = evaluate_model(state, ds, eval_opt);
    return artifacts;
}

}  // namespace dcformer
