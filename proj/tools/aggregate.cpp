// Aggregates metrics logs across runs: training-curve figures with
// interquartile means and bootstrap confidence bands, a final-score summary,
// and — when an expert-return table is given — expert-normalised scores
// aggregated across tasks per algorithm.

#include "common.hpp"

#include "aime/io/metrics.hpp"
#include "aime/io/plots.hpp"
#include "aime/io/stats.hpp"

#include "CLI11.hpp"

#include <glob.h>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace aime;

std::vector<std::string> expand_globs(const std::vector<std::string>& patterns) {
    std::vector<std::string> out;
    for (const auto& pat : patterns) {
        glob_t g{};
        int rc = glob(pat.c_str(), 0, nullptr, &g);
        if (rc == 0)
            for (std::size_t i = 0; i < g.gl_pathc; ++i)
                out.emplace_back(g.gl_pathv[i]);
        else if (rc != GLOB_NOMATCH) {
            globfree(&g);
            throw std::runtime_error("glob failed on pattern: " + pat);
        }
        globfree(&g);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Two-column table "task,expert_return" (or whitespace separated); '#'
/// starts a comment.
std::map<std::string, double> read_expert_table(const std::string& path) {
    std::map<std::string, double> out;
    std::istringstream is(tools::read_text_file(path));
    std::string line;
    while (std::getline(is, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        for (auto& c : line)
            if (c == ',') c = ' ';
        std::istringstream ls(line);
        std::string task;
        double ret = 0.0;
        if (ls >> task >> ret) out[task] = ret;
    }
    if (out.empty())
        throw std::runtime_error("expert table " + path + " has no entries");
    return out;
}

/// Last finite eval_return per (task, algorithm, file).
std::map<std::string, std::map<std::string, std::vector<double>>>
final_returns(const std::vector<std::string>& paths) {
    std::map<std::string, std::map<std::string, std::vector<double>>> out;
    for (const auto& path : paths) {
        io::MetricsLog log = io::read_metrics(path);
        std::map<std::pair<std::string, std::string>, double> last;
        for (const auto& row : log.rows) {
            auto t = row.tag.find("task");
            auto a = row.tag.find("algorithm");
            auto y = row.num.find("eval_return");
            if (t == row.tag.end() || a == row.tag.end() ||
                y == row.num.end() || !std::isfinite(y->second))
                continue;
            last[{t->second, a->second}] = y->second;
        }
        for (const auto& [key, v] : last) out[key.first][key.second].push_back(v);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aggregate run metrics into figures and score tables"};
    std::vector<std::string> patterns;
    std::string out_dir, expert_path;
    int resamples = 1000;
    double level = 0.95;
    std::uint64_t seed = 0;
    app.add_option("--runs", patterns,
                   "metrics log paths or glob patterns (repeatable)")
        ->required()
        ->expected(-1);
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--normalise", expert_path,
                   "expert-return table 'task,return' enabling normalised "
                   "cross-task aggregation");
    app.add_option("--resamples", resamples, "bootstrap resamples")
        ->check(CLI::PositiveNumber);
    app.add_option("--level", level, "confidence level");
    app.add_option("--seed", seed, "bootstrap rng seed");
    CLI11_PARSE(app, argc, argv);

    try {
        std::vector<std::string> paths = expand_globs(patterns);
        if (paths.empty()) throw std::runtime_error("no metrics logs matched");
        std::cout << "aggregating " << paths.size() << " logs\n";

        io::PlotReport report =
            io::emit_plots(paths, out_dir, resamples, level, seed);
        for (const auto& f : report.files) std::cout << "wrote " << f << "\n";
        for (const auto& o : report.omitted)
            std::cout << "omitted " << o << "\n";
        if (report.malformed_lines > 0)
            std::cout << "skipped " << report.malformed_lines
                      << " malformed lines\n";

        std::cout << "\nfinal scores (IQM [" << level * 100 << "% CI]):\n";
        for (const auto& s : report.summary)
            std::cout << "  " << s.task << " / " << s.algorithm << ": "
                      << s.final_iqm << " [" << s.ci_low << ", " << s.ci_high
                      << "]  (" << s.runs << " runs)\n";

        if (!expert_path.empty()) {
            auto expert = read_expert_table(expert_path);
            auto finals = final_returns(paths);

            // algorithm -> task -> per-run final returns.
            std::map<std::string, std::map<std::string, std::vector<double>>>
                by_algo;
            for (const auto& [task, algos] : finals) {
                if (!expert.count(task))
                    throw std::runtime_error("expert table lacks task '" +
                                             task + "'");
                for (const auto& [algo, runs] : algos)
                    by_algo[algo][task] = runs;
            }

            std::ostringstream csv;
            csv.precision(10);
            csv << "algorithm,tasks,runs,normalised_iqm,ci_low,ci_high\n";
            std::cout << "\nexpert-normalised scores across tasks:\n";
            nn::Rng rng = nn::Rng::stream(seed, "aggregate");
            for (const auto& [algo, tasks] : by_algo) {
                std::size_t runs = std::numeric_limits<std::size_t>::max();
                for (const auto& [task, v] : tasks)
                    runs = std::min(runs, v.size());
                if (runs == 0) continue;
                Eigen::MatrixXd raw(static_cast<Eigen::Index>(runs),
                                    static_cast<Eigen::Index>(tasks.size()));
                std::vector<double> expert_cols;
                Eigen::Index col = 0;
                for (const auto& [task, v] : tasks) {
                    for (std::size_t r = 0; r < runs; ++r)
                        raw(static_cast<Eigen::Index>(r), col) = v[r];
                    expert_cols.push_back(expert.at(task));
                    ++col;
                }
                io::AggregateResult agg = io::aggregate_scores(
                    raw, expert_cols, resamples, level, rng);
                std::cout << "  " << algo << ": " << agg.iqm << " ["
                          << agg.ci_low << ", " << agg.ci_high << "]  ("
                          << tasks.size() << " tasks x " << runs << " runs)\n";
                csv << algo << "," << tasks.size() << "," << runs << ","
                    << agg.iqm << "," << agg.ci_low << "," << agg.ci_high
                    << "\n";
            }
            std::string path = out_dir + "/normalised_scores.csv";
            tools::write_text_file(path, csv.str());
            std::cout << "wrote " << path << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
