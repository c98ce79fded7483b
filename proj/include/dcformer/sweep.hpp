#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dcformer/report_io.hpp"
#include "dcformer/svg.hpp"
#include "dcformer/train.hpp"

namespace dcformer {

// Ablation sweep driver: one seeded training per axis value, aggregated into
// a CSV and SVG line plots. Per-run failures are recorded and the sweep
// continues.

struct SweepRow {
    double value = 0.0;
    bool failed = false;
    std::string error;
    double map_concat = 0.0, rank1_concat = 0.0;
    double best_token_map = 0.0;
    double token_cos_max_offdiag = 0.0, token_cos_mean_offdiag = 0.0;
    double final_sdc_raw = 0.0, final_max_nu = 0.0;
    long confusion = 0;
};

struct SweepResult {
    std::string axis;
    std::vector<SweepRow> rows;
    std::string csv_path;
    std::vector<std::string> svg_paths;
};

namespace sweepdetail {

inline std::string value_tag(const std::string& axis, double v) {
    if (axis == "dwc") return v != 0.0 ? "on" : "off";
    std::ostringstream os;
    os << v;
    std::string s = os.str();
    for (char& c : s)
        if (c == '.') c = 'p';
    return s;
}

inline RunConfig apply_axis(RunConfig cfg, const std::string& axis, double v) {
    if (axis == "lambda") {
        cfg.model.lambda = v;
    } else if (axis == "num_tokens") {
        if (v < 1.0 || v != std::floor(v))
            throw ConfigError("sweep axis num_tokens needs positive integer values");
        cfg.model.num_tokens = static_cast<std::size_t>(v);
    } else if (axis == "dwc") {
        cfg.model.dwc_enabled = v != 0.0;
    } else if (axis == "identity_fraction") {
        if (v <= 0.0 || v > 1.0)
            throw ConfigError("sweep axis identity_fraction needs values in (0, 1]");
        const double scaled = std::ceil(v * static_cast<double>(cfg.data.num_train_identities));
        cfg.data.num_train_identities = static_cast<std::size_t>(scaled);
    } else {
        throw ConfigError("unknown sweep axis '" + axis +
                          "' (use lambda | num_tokens | dwc | identity_fraction)");
    }
    return cfg;
}

inline double offdiag(const Tensor& cosine, bool want_max) {
    if (!cosine.defined() || cosine.dim(0) < 2) return 0.0;
    const std::size_t n = cosine.dim(0);
    double mx = 0.0, sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            mx = std::max(mx, cosine.at({i, j}));
            sum += cosine.at({i, j});
            ++cnt;
        }
    return want_max ? mx : sum / static_cast<double>(cnt);
}

}  // namespace sweepdetail

inline SweepResult run_sweep(const RunConfig& base, const std::string& axis,
                             const std::vector<double>& values, std::ostream* log = nullptr) {
    require(!values.empty(), "run_sweep: no axis values");
    namespace fs = std::filesystem;
    SweepResult result;
    result.axis = axis;
    const fs::path root = fs::path(base.out_dir) / ("sweep_" + axis);
    fs::create_directories(root);

    for (double v : values) {
        SweepRow row;
        row.value = v;
        try {
            RunConfig cfg = sweepdetail::apply_axis(base, axis, v);
            cfg.out_dir = (root / sweepdetail::value_tag(axis, v)).string();
            cfg.validate();
            if (log) (*log) << "[sweep " << axis << "=" << v << "] training -> " << cfg.out_dir
                            << '\n';
            TrainArtifacts art = train_run(cfg, log);
            const EvalReport& rep = art.final_report;
            row.map_concat = rep.scope("concat").map;
            row.rank1_concat = rep.scope("concat").cmc.empty() ? 0.0 : rep.scope("concat").cmc[0];
            for (const auto& s : rep.scopes)
                if (s.name != "concat") row.best_token_map = std::max(row.best_token_map, s.ranking.map);
            row.token_cos_max_offdiag = sweepdetail::offdiag(rep.token_cosine, true);
            row.token_cos_mean_offdiag = sweepdetail::offdiag(rep.token_cosine, false);
            row.final_sdc_raw = art.last_loss.sdc_raw;
            row.final_max_nu = art.last_loss.sims.max_nu();
            row.confusion = rep.confusion;
            write_report_csv(rep, (fs::path(cfg.out_dir) / "report.csv").string());
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
            if (log) (*log) << "[sweep " << axis << "=" << v << "] FAILED: " << e.what() << '\n';
        }
        result.rows.push_back(std::move(row));
    }

    // aggregate CSV
    result.csv_path = (root / "sweep.csv").string();
    {
        std::ofstream os(result.csv_path);
        if (!os) throw IoError("cannot write sweep csv: " + result.csv_path);
        os << "axis,value,status,map_concat,rank1_concat,best_token_map,"
              "token_cos_max_offdiag,token_cos_mean_offdiag,final_sdc_raw,final_max_nu,"
              "confusion,error\n";
        for (const auto& row : result.rows) {
            os << axis << ',' << fmt17(row.value) << ',' << (row.failed ? "failed" : "ok") << ','
               << fmt17(row.map_concat) << ',' << fmt17(row.rank1_concat) << ','
               << fmt17(row.best_token_map) << ',' << fmt17(row.token_cos_max_offdiag) << ','
               << fmt17(row.token_cos_mean_offdiag) << ',' << fmt17(row.final_sdc_raw) << ','
               << fmt17(row.final_max_nu) << ',' << row.confusion << ','
               << (row.failed ? row.error : "") << '\n';
        }
    }

    // line plots over the axis (successful rows only)
    std::vector<double> xs;
    std::vector<double> maps, rank1s, sdcs, cosines;
    for (const auto& row : result.rows) {
        if (row.failed) continue;
        xs.push_back(row.value);
        maps.push_back(row.map_concat);
        rank1s.push_back(row.rank1_concat);
        sdcs.push_back(row.final_sdc_raw);
        cosines.push_back(row.token_cos_max_offdiag);
    }
    if (xs.size() >= 2) {
        const std::string perf_path = (root / "sweep_performance.svg").string();
        write_text_file(perf_path,
                        line_chart_svg("retrieval vs " + axis, axis, "score",
                                       {{"mAP (concat)", xs, maps}, {"rank-1 (concat)", xs, rank1s}}));
        result.svg_paths.push_back(perf_path);
        const std::string div_path = (root / "sweep_diversity.svg").string();
        write_text_file(div_path,
                        line_chart_svg("token diversity vs " + axis, axis, "value",
                                       {{"final SDC (uniform)", xs, sdcs},
                                        {"max off-diag |cos|", xs, cosines}}));
        result.svg_paths.push_back(div_path);
    }
    return result;
}

}  // namespace dcformer
