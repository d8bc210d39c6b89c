#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace aime::io {

struct SummaryRow {
    std::string task;
    std::string algorithm;
    int runs = 0;
    double final_iqm = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct PlotReport {
    std::vector<std::string> files;    // emitted file paths
    std::vector<std::string> omitted;  // figure families skipped, with reason
    std::vector<SummaryRow> summary;   // one row per (task, algorithm) pair
    int malformed_lines = 0;           // unparseable log lines skipped
};

/// Renders evaluation curves from metrics logs into out_dir as standalone
/// SVG files: return versus env steps and action error versus env steps
/// (one file per task; interquartile-mean line with a bootstrap confidence
/// band per algorithm), plus return versus demo count when records carry an
/// "n_demos" field. A machine-readable summary.csv lists the final-score
/// aggregate per (task, algorithm); omitted figure families are noted in
/// it. Each log file is one run; rows enter curves through their "task" and
/// "algorithm" tags. Throws when no log paths are given.
PlotReport emit_plots(const std::vector<std::string>& log_paths,
                      const std::string& out_dir, int n_resamples = 1000,
                      double level = 0.95, std::uint64_t seed = 0);

/// One sweep arm's returns for the knowledge-gap figure.
struct BarrierCurvePoint {
    double n_demos = 0.0;
    double r_expert = 0.0;
    double r_oracle = 0.0;
    double r_learned = 0.0;
};

/// Return-versus-demo-count chart with the region between the learned and
/// oracle curves shaded as the embodiment gap and the region between the
/// oracle and expert curves as the demonstration gap. Points are sorted by
/// demo count internally. Throws on empty input.
void emit_barrier_plot(std::vector<BarrierCurvePoint> points,
                       const std::string& path);

}  // namespace aime::io
