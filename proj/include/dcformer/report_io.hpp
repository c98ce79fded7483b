#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "dcformer/csv.hpp"
#include "dcformer/eval.hpp"
#include "dcformer/train.hpp"

namespace dcformer {

// EvalReport as block-structured CSV (see csv.hpp). Output is byte-stable
// for a fixed report.
inline std::string report_to_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "# dcformer-eval-report-v1\n";
    os << "format,version\ndcformer-eval-report,1\n";

    os << "# metrics\n";
    os << "scope,map,rank1,rank5,rank10,evaluated,skipped\n";
    auto rank_at = [&](const MapCmcResult& r, std::size_t k) {
        if (r.cmc.empty()) return 0.0;
        return r.cmc[std::min(k, r.cmc.size()) - 1];
    };
    for (const auto& s : report.scopes)
        os << s.name << ',' << fmt17(s.ranking.map) << ',' << fmt17(rank_at(s.ranking, 1)) << ','
           << fmt17(rank_at(s.ranking, 5)) << ',' << fmt17(rank_at(s.ranking, 10)) << ','
           << s.ranking.evaluated << ',' << s.ranking.skipped << '\n';

    os << "# cmc\n";
    os << "scope,k,value\n";
    for (const auto& s : report.scopes)
        for (std::size_t k = 0; k < s.ranking.cmc.size(); ++k)
            os << s.name << ',' << (k + 1) << ',' << fmt17(s.ranking.cmc[k]) << '\n';

    os << "# token_cosine\n";
    os << "i,j,value\n";
    const std::size_t n = report.token_cosine.defined() ? report.token_cosine.dim(0) : 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            os << i << ',' << j << ',' << fmt17(report.token_cosine.at({i, j})) << '\n';

    os << "# distance_samples\n";
    os << "kind,value\n";
    for (double v : report.distances.positive) os << "positive," << fmt17(v) << '\n';
    for (double v : report.distances.negative) os << "negative," << fmt17(v) << '\n';

    os << "# distance_histogram\n";
    os << "kind,bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b + 1 < report.distances.bin_edges.size(); ++b) {
        os << "positive," << fmt17(report.distances.bin_edges[b]) << ','
           << fmt17(report.distances.bin_edges[b + 1]) << ',' << report.distances.positive_counts[b]
           << '\n';
    }
    for (std::size_t b = 0; b + 1 < report.distances.bin_edges.size(); ++b) {
        os << "negative," << fmt17(report.distances.bin_edges[b]) << ','
           << fmt17(report.distances.bin_edges[b + 1]) << ',' << report.distances.negative_counts[b]
           << '\n';
    }

    os << "# confusion\n";
    os << "value\n" << report.confusion << '\n';

    os << "# pca\n";
    os << "token,identity,x,y\n";
    for (const auto& p : report.pca_points)
        os << p.token << ',' << p.identity << ',' << fmt17(p.x) << ',' << fmt17(p.y) << '\n';

    os << "# meta\n";
    os << "key,value\n";
    os << "normalized," << (report.normalized ? "true" : "false") << '\n';
    os << "num_query," << report.num_query << '\n';
    os << "num_gallery," << report.num_gallery << '\n';
    os << "cmc_k_max," << report.cmc_k_max << '\n';
    os << "negative_total," << report.distances.negative_total << '\n';
    os << "pca_eigenvalue_1," << fmt17(report.pca_eigenvalues[0]) << '\n';
    os << "pca_eigenvalue_2," << fmt17(report.pca_eigenvalues[1]) << '\n';
    os << "pca_explained_1," << fmt17(report.pca_explained[0]) << '\n';
    os << "pca_explained_2," << fmt17(report.pca_explained[1]) << '\n';
    return os.str();
}

inline void write_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write report: " + path);
    os << report_to_csv(report);
    if (!os.good()) throw IoError("failed writing report: " + path);
}

}  // namespace dcformer
