// dcformer CLI: train / eval / sweep / gradcheck / plot.
// Exit codes: 0 success, 1 usage or config error, 2 numeric failure
// (non-finite loss, gradient check), 3 I/O error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dcformer/csv.hpp"
#include "dcformer/gradcheck_suite_model.hpp"
#include "dcformer/report_io.hpp"
#include "dcformer/sweep.hpp"
#include "dcformer/svg.hpp"
#include "dcformer/train.hpp"

namespace fs = std::filesystem;
using namespace dcformer;

namespace {

RunConfig load_run_config(const std::string& config_path, std::uint64_t* seed_override,
                          const std::string& out_override) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config_file(config_path);
    if (seed_override) cfg.seed = *seed_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    cfg.validate();
    return cfg;
}

void print_report_summary(const EvalReport& report, std::ostream& os) {
    os << "scope        mAP      rank-1   rank-5   queries(skipped)\n";
    for (const auto& s : report.scopes) {
        char line[160];
        const double r1 = s.ranking.cmc.empty() ? 0.0 : s.ranking.cmc[0];
        const double r5 = s.ranking.cmc.size() >= 5 ? s.ranking.cmc[4] : s.ranking.cmc.back();
        std::snprintf(line, sizeof(line), "%-12s %.4f   %.4f   %.4f   %zu(%zu)\n", s.name.c_str(),
                      s.ranking.map, r1, r5, s.ranking.evaluated, s.ranking.skipped);
        os << line;
    }
    if (report.token_cosine.defined() && report.token_cosine.dim(0) >= 2) {
        os << "token |cos| matrix:\n";
        const std::size_t n = report.token_cosine.dim(0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                char cell[32];
                std::snprintf(cell, sizeof(cell), " %.4f", report.token_cosine.at({i, j}));
                os << cell;
            }
            os << '\n';
        }
    }
    os << "confusion: " << report.confusion << " (of " << report.distances.positive.size()
       << " positive / " << report.distances.negative.size() << " negative pairs)\n";
}

void emit_report_figures(const EvalReport& report, const std::string& out_dir,
                         std::vector<std::string>* written) {
    fs::create_directories(out_dir);
    // PCA scatter, token-coded markers
    {
        std::map<int, SvgScatterGroup> by_token;
        for (const auto& p : report.pca_points) {
            SvgScatterGroup& g = by_token[p.token];
            g.label = "token_" + std::to_string(p.token);
            g.color_index = static_cast<std::size_t>(p.token);
            g.marker = p.token % 4;
            g.x.push_back(p.x);
            g.y.push_back(p.y);
        }
        std::vector<SvgScatterGroup> groups;
        for (auto& [token, g] : by_token) groups.push_back(std::move(g));
        if (!groups.empty()) {
            const std::string path = (fs::path(out_dir) / "pca_scatter.svg").string();
            write_text_file(path, scatter_chart_svg("PCA of per-token embeddings", "pc1", "pc2",
                                                    groups));
            if (written) written->push_back(path);
        }
    }
    // distance histogram and scatter
    if (!report.distances.bin_edges.empty()) {
        const std::string hist = (fs::path(out_dir) / "distance_histogram.svg").string();
        write_text_file(hist, histogram_svg("query-gallery pair distances", "distance",
                                            report.distances.bin_edges,
                                            report.distances.positive_counts, "positive",
                                            report.distances.negative_counts, "negative"));
        if (written) written->push_back(hist);

        SvgScatterGroup pos, neg;
        pos.label = "positive";
        pos.color_index = 0;
        pos.marker = 0;
        for (std::size_t i = 0; i < report.distances.positive.size(); ++i) {
            pos.x.push_back(static_cast<double>(i));
            pos.y.push_back(report.distances.positive[i]);
        }
        neg.label = "negative";
        neg.color_index = 1;
        neg.marker = 1;
        for (std::size_t i = 0; i < report.distances.negative.size(); ++i) {
            neg.x.push_back(static_cast<double>(i));
            neg.y.push_back(report.distances.negative[i]);
        }
        const std::string scat = (fs::path(out_dir) / "distance_scatter.svg").string();
        write_text_file(scat, scatter_chart_svg("pair distances", "pair index", "distance",
                                                {pos, neg}));
        if (written) written->push_back(scat);
    }
    // CMC curves
    {
        std::vector<SvgSeries> series;
        for (const auto& s : report.scopes) {
            SvgSeries sr;
            sr.label = s.name;
            for (std::size_t k = 0; k < s.ranking.cmc.size(); ++k) {
                sr.x.push_back(static_cast<double>(k + 1));
                sr.y.push_back(s.ranking.cmc[k]);
            }
            series.push_back(std::move(sr));
        }
        if (!series.empty() && !series[0].x.empty()) {
            const std::string path = (fs::path(out_dir) / "cmc.svg").string();
            write_text_file(path, line_chart_svg("cumulative matching curve", "rank k",
                                                 "accuracy", series));
            if (written) written->push_back(path);
        }
    }
}

int cmd_train(const std::string& config_path, std::uint64_t* seed_override,
              const std::string& out_override, const std::string& resume) {
    RunConfig cfg = load_run_config(config_path, seed_override, out_override);
    std::cout << "training -> " << cfg.out_dir << " (seed " << cfg.seed << ")\n";
    TrainArtifacts art = train_run(cfg, &std::cout, resume);
    write_report_csv(art.final_report, (fs::path(cfg.out_dir) / "report.csv").string());
    emit_report_figures(art.final_report, cfg.out_dir, nullptr);
    std::cout << "steps: " << art.steps << "\nmetrics: " << art.metrics_path
              << "\ncheckpoint: " << art.final_checkpoint_path << "\n";
    print_report_summary(art.final_report, std::cout);
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
             const std::string& image_folder, const std::string& out_override) {
    LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
    SyntheticReidDataset ds;
    if (!image_folder.empty()) {
        ds = load_image_folder(image_folder, ckpt.config.data.channels, ckpt.config.data.height,
                               ckpt.config.data.width);
    } else if (!data_dir.empty()) {
        ds = load_dataset(data_dir);
    } else {
        ds = generate(ckpt.config.data, seeds::data(ckpt.config.seed));
    }
    EvalOptions opt;
    opt.seed = ckpt.config.seed;
    EvalReport report = evaluate_model(ckpt.state, ds, opt);
    const std::string out_dir = out_override.empty() ? ckpt.config.out_dir : out_override;
    fs::create_directories(out_dir);
    write_report_csv(report, (fs::path(out_dir) / "report.csv").string());
    emit_report_figures(report, out_dir, nullptr);
    print_report_summary(report, std::cout);
    std::cout << "report: " << (fs::path(out_dir) / "report.csv").string() << '\n';
    return 0;
}

int cmd_sweep(const std::string& config_path, std::uint64_t* seed_override,
              const std::string& out_override, const std::string& axis,
              const std::vector<double>& values) {
    RunConfig cfg = load_run_config(config_path, seed_override, out_override);
    SweepResult result = run_sweep(cfg, axis, values, &std::cout);
    std::cout << "sweep csv: " << result.csv_path << '\n';
    for (const auto& p : result.svg_paths) std::cout << "sweep plot: " << p << '\n';
    std::size_t failures = 0;
    for (const auto& row : result.rows)
        if (row.failed) ++failures;
    if (failures) std::cout << failures << " run(s) failed; see sweep csv for details\n";
    return 0;
}

int cmd_gradcheck(double tol, double step, bool verbose) {
    GradCheckOptions opt;
    opt.tol = tol;
    opt.step = step;
    SuiteReport report = run_full_gradcheck_suite(opt);
    for (const auto& c : report.checks)
        if (verbose || !c.result.pass)
            std::cout << (c.result.pass ? "  ok  " : " FAIL ") << c.name << "  "
                      << c.result.summary() << '\n';
    std::cout << report.checks.size() << " checks, " << report.failures << " failure(s)\n";
    if (!report.pass()) throw NumericError("gradient check failed");
    return 0;
}

enum class PlotKind { Metrics, Report, Sweep };

PlotKind detect_plot_input(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open plot input: " + path);
    std::string first;
    std::getline(is, first);
    if (first.rfind("# dcformer-eval-report", 0) == 0) return PlotKind::Report;
    if (first.rfind("step,epoch,lr", 0) == 0) return PlotKind::Metrics;
    if (first.rfind("axis,value,", 0) == 0) return PlotKind::Sweep;
    throw ContractError("unrecognized plot input (line 1 of " + path + ")");
}

void plot_metrics(const std::string& path, const std::string& out_dir,
                  std::vector<std::string>* written) {
    CsvTable t = read_csv(path);
    if (t.rows.empty()) throw ContractError("metrics file has no data rows: " + path);
    auto col = [&](const std::string& name) {
        const std::size_t c = t.column(name);
        std::vector<double> v;
        for (std::size_t r = 0; r < t.rows.size(); ++r)
            v.push_back(csv_double(t.rows[r][c], r + 2));
        return v;
    };
    std::vector<double> steps = col("step");
    std::vector<SvgSeries> losses{{"total", steps, col("loss_total")},
                                  {"SDC (weighted)", steps, col("loss_sdc")},
                                  {"SDC (uniform)", steps, col("loss_sdc_raw")}};
    for (const auto& h : t.header)
        if (h.rfind("loss_id_t", 0) == 0 || h.rfind("loss_trip_t", 0) == 0)
            losses.push_back({h, steps, col(h)});
    fs::create_directories(out_dir);
    const std::string loss_path = (fs::path(out_dir) / "loss_curves.svg").string();
    write_text_file(loss_path, line_chart_svg("training losses", "step", "loss", losses));
    if (written) written->push_back(loss_path);

    std::vector<SvgSeries> nus;
    for (const auto& h : t.header)
        if (h.rfind("nu_", 0) == 0) nus.push_back({h, steps, col(h)});
    if (!nus.empty()) {
        const std::string nu_path = (fs::path(out_dir) / "nu_curves.svg").string();
        write_text_file(nu_path,
                        line_chart_svg("pairwise token |cos| during training", "step", "nu", nus));
        if (written) written->push_back(nu_path);
    }
}

void plot_report(const std::string& path, const std::string& out_dir,
                 std::vector<std::string>* written) {
    CsvBlocks blocks = read_csv_blocks(path);
    EvalReport report;
    {
        const CsvTable& pca = blocks.at("pca");
        const std::size_t ct = pca.column("token"), ci = pca.column("identity");
        const std::size_t cx = pca.column("x"), cy = pca.column("y");
        for (std::size_t r = 0; r < pca.rows.size(); ++r)
            report.pca_points.push_back({static_cast<int>(csv_double(pca.rows[r][ct], r)),
                                         static_cast<int>(csv_double(pca.rows[r][ci], r)),
                                         csv_double(pca.rows[r][cx], r),
                                         csv_double(pca.rows[r][cy], r)});
    }
    {
        const CsvTable& hist = blocks.at("distance_histogram");
        const std::size_t ck = hist.column("kind"), cl = hist.column("bin_lo");
        const std::size_t ch = hist.column("bin_hi"), cc = hist.column("count");
        for (std::size_t r = 0; r < hist.rows.size(); ++r) {
            const bool pos = hist.rows[r][ck] == "positive";
            if (pos) {
                if (report.distances.bin_edges.empty())
                    report.distances.bin_edges.push_back(csv_double(hist.rows[r][cl], r));
                report.distances.bin_edges.push_back(csv_double(hist.rows[r][ch], r));
                report.distances.positive_counts.push_back(
                    static_cast<std::size_t>(csv_double(hist.rows[r][cc], r)));
            } else {
                report.distances.negative_counts.push_back(
                    static_cast<std::size_t>(csv_double(hist.rows[r][cc], r)));
            }
        }
    }
    {
        const CsvTable& samples = blocks.at("distance_samples");
        const std::size_t ck = samples.column("kind"), cv = samples.column("value");
        for (std::size_t r = 0; r < samples.rows.size(); ++r) {
            if (samples.rows[r][ck] == "positive")
                report.distances.positive.push_back(csv_double(samples.rows[r][cv], r));
            else
                report.distances.negative.push_back(csv_double(samples.rows[r][cv], r));
        }
    }
    {
        const CsvTable& cmc = blocks.at("cmc");
        const std::size_t cs = cmc.column("scope"), cv = cmc.column("value");
        std::map<std::string, MapCmcResult> by_scope;
        for (std::size_t r = 0; r < cmc.rows.size(); ++r)
            by_scope[cmc.rows[r][cs]].cmc.push_back(csv_double(cmc.rows[r][cv], r));
        for (auto& [name, ranking] : by_scope) report.scopes.push_back({name, ranking});
    }
    emit_report_figures(report, out_dir, written);
}

void plot_sweep(const std::string& path, const std::string& out_dir,
                std::vector<std::string>* written) {
    CsvTable t = read_csv(path);
    if (t.rows.empty()) throw ContractError("sweep file has no data rows: " + path);
    std::vector<double> xs, maps, rank1s, sdcs;
    const std::size_t cs = t.column("status");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (t.rows[r][cs] != "ok") continue;
        xs.push_back(csv_double(t.rows[r][t.column("value")], r + 2));
        maps.push_back(csv_double(t.rows[r][t.column("map_concat")], r + 2));
        rank1s.push_back(csv_double(t.rows[r][t.column("rank1_concat")], r + 2));
        sdcs.push_back(csv_double(t.rows[r][t.column("final_sdc_raw")], r + 2));
    }
    if (xs.size() < 2) throw ContractError("sweep file has fewer than two successful rows");
    const std::string axis = t.rows[0][t.column("axis")];
    fs::create_directories(out_dir);
    const std::string perf = (fs::path(out_dir) / "sweep_performance.svg").string();
    write_text_file(perf, line_chart_svg("retrieval vs " + axis, axis, "score",
                                         {{"mAP (concat)", xs, maps},
                                          {"rank-1 (concat)", xs, rank1s}}));
    const std::string div = (fs::path(out_dir) / "sweep_diversity.svg").string();
    write_text_file(div, line_chart_svg("token diversity vs " + axis, axis, "value",
                                        {{"final SDC (uniform)", xs, sdcs}}));
    if (written) {
        written->push_back(perf);
        written->push_back(div);
    }
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out_dir) {
    std::vector<std::string> written;
    for (const std::string& path : inputs) {
        switch (detect_plot_input(path)) {
            case PlotKind::Metrics: plot_metrics(path, out_dir, &written); break;
            case PlotKind::Report: plot_report(path, out_dir, &written); break;
            case PlotKind::Sweep: plot_sweep(path, out_dir, &written); break;
        }
    }
    for (const auto& p : written) std::cout << "wrote " << p << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DC-Former: multi-class-token ViT re-ID with a self-diverse constraint"};
    app.require_subcommand(1);

    std::string config_path, out_dir, resume_path, checkpoint_path, data_dir, image_folder;
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "run config (key = value text)");
    train->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
        seed_set = true;
    });
    train->add_option("--out", out_dir, "override the output directory");
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    eval->add_option("--data-dir", data_dir, "dataset dump directory (manifest + raw floats)");
    eval->add_option("--image-folder", image_folder,
                     "Market-style image folder (<id>_c<cam>_<idx>.f32)");
    eval->add_option("--out", out_dir, "output directory for the report");

    std::string axis;
    std::vector<double> values;
    auto* sweep = app.add_subcommand("sweep", "run an ablation sweep");
    sweep->add_option("--config", config_path, "base run config");
    sweep->add_option("--axis", axis, "lambda | num_tokens | dwc | identity_fraction")->required();
    sweep->add_option("--values", values, "axis values")->required()->delimiter(',');
    sweep->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
        seed_set = true;
    });
    sweep->add_option("--out", out_dir, "override the output directory");

    double tol = 1e-4, step = 1e-5;
    bool verbose = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--tol", tol, "relative-error tolerance");
    gradcheck->add_option("--step", step, "finite-difference step");
    gradcheck->add_flag("--verbose", verbose, "print every check");

    std::vector<std::string> plot_inputs;
    auto* plot = app.add_subcommand("plot", "render SVG figures from metrics/report/sweep CSVs");
    plot->add_option("inputs", plot_inputs, "metrics.csv, report.csv or sweep.csv files")
        ->required();
    plot->add_option("--out", out_dir, "output directory for figures")->required();

    try {
        app.parse(argc, argv);
        if (train->parsed())
            return cmd_train(config_path, seed_set ? &seed : nullptr, out_dir, resume_path);
        if (eval->parsed()) return cmd_eval(checkpoint_path, data_dir, image_folder, out_dir);
        if (sweep->parsed())
            return cmd_sweep(config_path, seed_set ? &seed : nullptr, out_dir, axis, values);
        if (gradcheck->parsed()) return cmd_gradcheck(tol, step, verbose);
        if (plot->parsed()) return cmd_plot(plot_inputs, out_dir);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
