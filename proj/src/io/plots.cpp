#include "aime/io/plots.hpp"

#include "aime/io/metrics.hpp"
#include "aime/io/stats.hpp"
#include "aime/nn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace aime::io {

namespace {

struct Point {
    double x = 0.0;
    double y = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

/// One algorithm's aggregated curve.
struct Series {
    std::string label;
    std::vector<Point> points;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                          "#ff7f0e", "#9467bd", "#8c564b"};
constexpr int kPaletteSize = 6;

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

/// Minimal standalone SVG line chart with shaded uncertainty bands.
class SvgChart {
public:
    SvgChart(std::string title, std::string xlabel, std::string ylabel)
        : title_(std::move(title)),
          xlabel_(std::move(xlabel)),
          ylabel_(std::move(ylabel)) {}

    void add(Series s) { series_.push_back(std::move(s)); }

    void write(const std::string& path) const {
        double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
        double y0 = x0, y1 = -x0;
        for (const auto& s : series_)
            for (const auto& p : s.points) {
                x0 = std::min(x0, p.x);
                x1 = std::max(x1, p.x);
                y0 = std::min({y0, p.y, p.lo});
                y1 = std::max({y1, p.y, p.hi});
            }
        if (!(x0 <= x1)) {
            x0 = 0.0;
            x1 = 1.0;
        }
        if (!(y0 <= y1)) {
            y0 = 0.0;
            y1 = 1.0;
        }
        if (x1 - x0 < 1e-12) {
            x0 -= 0.5;
            x1 += 0.5;
        }
        double pad = (y1 - y0) < 1e-12 ? std::max(0.5, std::abs(y1) * 0.1)
                                       : (y1 - y0) * 0.05;
        y0 -= pad;
        y1 += pad;

        const double W = 640, H = 420, ml = 64, mr = 16, mt = 32, mb = 48;
        auto px = [&](double x) {
            return ml + (x - x0) / (x1 - x0) * (W - ml - mr);
        };
        auto py = [&](double y) {
            return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb);
        };

        std::ostringstream out;
        out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
            << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
            << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H
            << "\">\n"
            << "<rect width=\"" << W << "\" height=\"" << H
            << "\" fill=\"white\"/>\n";
        out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" "
            << "font-family=\"sans-serif\" font-size=\"14\">" << title_
            << "</text>\n";

        // Axes and ticks.
        out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\""
            << W - mr << "\" y2=\"" << H - mb
            << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
        out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
            << "\" y2=\"" << H - mb
            << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            double fx = x0 + (x1 - x0) * i / 4.0;
            double fy = y0 + (y1 - y0) * i / 4.0;
            out << "<line x1=\"" << px(fx) << "\" y1=\"" << H - mb << "\" x2=\""
                << px(fx) << "\" y2=\"" << H - mb + 4
                << "\" stroke=\"black\"/>\n";
            out << "<text x=\"" << px(fx) << "\" y=\"" << H - mb + 18
                << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                << "font-size=\"11\">" << fmt(fx) << "</text>\n";
            out << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(fy) << "\" x2=\""
                << ml << "\" y2=\"" << py(fy) << "\" stroke=\"black\"/>\n";
            out << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
                << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
                << "font-size=\"11\">" << fmt(fy) << "</text>\n";
        }
        out << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 10
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
            << "font-size=\"12\">" << xlabel_ << "</text>\n";
        out << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
            << "font-size=\"12\" transform=\"rotate(-90 16 "
            << (mt + H - mb) / 2 << ")\">" << ylabel_ << "</text>\n";

        // Bands first so lines stay visible.
        for (std::size_t k = 0; k < series_.size(); ++k) {
            const auto& s = series_[k];
            if (s.points.size() < 2) continue;
            const char* col = kPalette[k % kPaletteSize];
            std::ostringstream poly;
            for (const auto& p : s.points)
                poly << px(p.x) << "," << py(p.hi) << " ";
            for (auto it = s.points.rbegin(); it != s.points.rend(); ++it)
                poly << px(it->x) << "," << py(it->lo) << " ";
            out << "<polygon points=\"" << poly.str() << "\" fill=\"" << col
                << "\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
        }
        for (std::size_t k = 0; k < series_.size(); ++k) {
            const auto& s = series_[k];
            const char* col = kPalette[k % kPaletteSize];
            std::ostringstream poly;
            for (const auto& p : s.points) poly << px(p.x) << "," << py(p.y) << " ";
            if (s.points.size() > 1)
                out << "<polyline points=\"" << poly.str()
                    << "\" fill=\"none\" stroke=\"" << col
                    << "\" stroke-width=\"1.8\"/>\n";
            for (const auto& p : s.points)
                out << "<circle cx=\"" << px(p.x) << "\" cy=\"" << py(p.y)
                    << "\" r=\"2.4\" fill=\"" << col << "\"/>\n";
            out << "<text x=\"" << W - mr - 8 << "\" y=\"" << mt + 16 + 16 * k
                << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
                << "font-size=\"12\" fill=\"" << col << "\">" << s.label
                << "</text>\n";
        }
        out << "</svg>\n";

        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + path);
        f << out.str();
    }

private:
    std::string title_, xlabel_, ylabel_;
    std::vector<Series> series_;
};

/// One run's rows in file order for a (task, algorithm) pair.
struct RunRows {
    std::vector<MetricsRow> rows;
};

double num_or_nan(const MetricsRow& r, const std::string& key) {
    auto it = r.num.find(key);
    return it == r.num.end() ? std::numeric_limits<double>::quiet_NaN()
                             : it->second;
}

/// Aggregate one metric across runs at matched record indices; runs are
/// truncated to the shortest so every x has the full run population.
std::vector<Point> aggregate_curve(const std::vector<RunRows>& runs,
                                   const std::string& xkey,
                                   const std::string& ykey, int n_resamples,
                                   double level, nn::Rng& rng) {
    std::size_t n = std::numeric_limits<std::size_t>::max();
    for (const auto& r : runs) {
        std::size_t m = 0;
        for (const auto& row : r.rows)
            if (std::isfinite(num_or_nan(row, ykey)) &&
                std::isfinite(num_or_nan(row, xkey)))
                ++m;
        n = std::min(n, m);
    }
    if (n == 0 || n == std::numeric_limits<std::size_t>::max()) return {};

    std::vector<std::vector<const MetricsRow*>> kept;
    for (const auto& r : runs) {
        std::vector<const MetricsRow*> v;
        for (const auto& row : r.rows)
            if (std::isfinite(num_or_nan(row, ykey)) &&
                std::isfinite(num_or_nan(row, xkey)))
                v.push_back(&row);
        v.resize(n);
        kept.push_back(std::move(v));
    }

    std::vector<Point> out;
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::MatrixXd col(static_cast<Eigen::Index>(kept.size()), 1);
        std::vector<double> ys;
        for (std::size_t r = 0; r < kept.size(); ++r) {
            double y = num_or_nan(*kept[r][i], ykey);
            col(static_cast<Eigen::Index>(r), 0) = y;
            ys.push_back(y);
        }
        Point p;
        p.x = num_or_nan(*kept[0][i], xkey);
        p.y = iqm(ys);
        auto ci = bootstrap_ci(col, n_resamples, level, rng);
        p.lo = ci.low;
        p.hi = ci.high;
        out.push_back(p);
    }
    return out;
}

std::string sanitise(const std::string& s) {
    std::string out = s;
    for (auto& c : out)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    return out;
}

}  // namespace

PlotReport emit_plots(const std::vector<std::string>& log_paths,
                      const std::string& out_dir, int n_resamples,
                      double level, std::uint64_t seed) {
    if (log_paths.empty())
        throw std::invalid_argument("emit_plots: no metrics logs given");
    std::filesystem::create_directories(out_dir);

    PlotReport report;
    // task -> algorithm -> runs (one per file that contributed rows).
    std::map<std::string, std::map<std::string, std::vector<RunRows>>> groups;
    for (const auto& path : log_paths) {
        MetricsLog log = read_metrics(path);
        report.malformed_lines += log.skipped;
        std::map<std::pair<std::string, std::string>, RunRows> per_pair;
        for (auto& row : log.rows) {
            auto t = row.tag.find("task");
            auto a = row.tag.find("algorithm");
            if (t == row.tag.end() || a == row.tag.end()) {
                ++report.malformed_lines;
                continue;
            }
            per_pair[{t->second, a->second}].rows.push_back(row);
        }
        for (auto& [key, rows] : per_pair)
            groups[key.first][key.second].push_back(std::move(rows));
    }

    nn::Rng rng(seed);
    const struct {
        const char* ykey;
        const char* stem;
        const char* ylabel;
    } families[] = {
        {"eval_return", "return_vs_steps", "evaluation return"},
        {"action_mse", "action_mse_vs_steps", "action error (MSE)"},
    };

    for (const auto& [task, algos] : groups) {
        for (const auto& fam : families) {
            SvgChart chart(std::string(fam.stem) + " - " + task, "env steps",
                           fam.ylabel);
            int plotted = 0;
            for (const auto& [algo, runs] : algos) {
                Series s;
                s.label = algo;
                s.points = aggregate_curve(runs, "env_steps", fam.ykey,
                                           n_resamples, level, rng);
                if (s.points.empty()) continue;
                chart.add(std::move(s));
                ++plotted;
            }
            std::string fname =
                std::string(fam.stem) + "_" + sanitise(task) + ".svg";
            if (plotted == 0) {
                report.omitted.push_back(fname + ": no finite " +
                                         std::string(fam.ykey) + " records");
                continue;
            }
            std::string path = out_dir + "/" + fname;
            chart.write(path);
            report.files.push_back(path);
        }

        // Return versus demo count, for logs that carry demo-count records.
        {
            SvgChart chart("return_vs_demos - " + task, "demonstrations",
                           "evaluation return");
            int plotted = 0;
            for (const auto& [algo, runs] : algos) {
                Series s;
                s.label = algo;
                s.points = aggregate_curve(runs, "n_demos", "eval_return",
                                           n_resamples, level, rng);
                if (s.points.empty()) continue;
                std::sort(s.points.begin(), s.points.end(),
                          [](const Point& a, const Point& b) { return a.x < b.x; });
                chart.add(std::move(s));
                ++plotted;
            }
            std::string fname = "return_vs_demos_" + sanitise(task) + ".svg";
            if (plotted == 0) {
                report.omitted.push_back(fname + ": no demo-count records");
            } else {
                std::string path = out_dir + "/" + fname;
                chart.write(path);
                report.files.push_back(path);
            }
        }
    }

    // Final-score summary per (task, algorithm): last finite return per run.
    for (const auto& [task, algos] : groups) {
        for (const auto& [algo, runs] : algos) {
            std::vector<double> finals;
            for (const auto& r : runs) {
                double last = std::numeric_limits<double>::quiet_NaN();
                for (const auto& row : r.rows) {
                    double y = num_or_nan(row, "eval_return");
                    if (std::isfinite(y)) last = y;
                }
                if (std::isfinite(last)) finals.push_back(last);
            }
            if (finals.empty()) continue;
            SummaryRow row;
            row.task = task;
            row.algorithm = algo;
            row.runs = static_cast<int>(finals.size());
            row.final_iqm = iqm(finals);
            Eigen::MatrixXd col(static_cast<Eigen::Index>(finals.size()), 1);
            for (std::size_t i = 0; i < finals.size(); ++i)
                col(static_cast<Eigen::Index>(i), 0) = finals[i];
            auto ci = bootstrap_ci(col, n_resamples, level, rng);
            row.ci_low = ci.low;
            row.ci_high = ci.high;
            report.summary.push_back(row);
        }
    }

    std::string csv_path = out_dir + "/summary.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    csv << "task,algorithm,runs,final_iqm,ci_low,ci_high\n";
    csv.precision(10);
    for (const auto& r : report.summary)
        csv << r.task << "," << r.algorithm << "," << r.runs << ","
            << r.final_iqm << "," << r.ci_low << "," << r.ci_high << "\n";
    for (const auto& o : report.omitted) csv << "# omitted " << o << "\n";
    report.files.push_back(csv_path);
    return report;
}

void emit_barrier_plot(std::vector<BarrierCurvePoint> points,
                       const std::string& path) {
    if (points.empty())
        throw std::invalid_argument("emit_barrier_plot: no points");
    std::sort(points.begin(), points.end(),
              [](const BarrierCurvePoint& a, const BarrierCurvePoint& b) {
                  return a.n_demos < b.n_demos;
              });

    double x0 = points.front().n_demos, x1 = points.back().n_demos;
    double y0 = std::numeric_limits<double>::infinity(), y1 = -y0;
    for (const auto& p : points) {
        y0 = std::min({y0, p.r_expert, p.r_oracle, p.r_learned});
        y1 = std::max({y1, p.r_expert, p.r_oracle, p.r_learned});
    }
    if (x1 - x0 < 1e-12) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    double pad = (y1 - y0) < 1e-12 ? std::max(0.5, std::abs(y1) * 0.1)
                                   : (y1 - y0) * 0.08;
    y0 -= pad;
    y1 += pad;

    const double W = 640, H = 420, ml = 64, mr = 16, mt = 32, mb = 48;
    auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
    auto py = [&](double y) {
        return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb);
    };

    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
        << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H
        << "\">\n"
        << "<rect width=\"" << W << "\" height=\"" << H
        << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">"
        << "knowledge gaps vs demonstrations</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr
        << "\" y2=\"" << H - mb << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
        << "\" y2=\"" << H - mb << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double fx = x0 + (x1 - x0) * i / 4.0;
        double fy = y0 + (y1 - y0) * i / 4.0;
        out << "<line x1=\"" << px(fx) << "\" y1=\"" << H - mb << "\" x2=\""
            << px(fx) << "\" y2=\"" << H - mb + 4 << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << px(fx) << "\" y=\"" << H - mb + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
            << "font-size=\"11\">" << fmt(fx) << "</text>\n";
        out << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(fy) << "\" x2=\""
            << ml << "\" y2=\"" << py(fy) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
            << "font-size=\"11\">" << fmt(fy) << "</text>\n";
    }
    out << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 10
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"12\">demonstrations</text>\n";
    out << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"12\" transform=\"rotate(-90 16 " << (mt + H - mb) / 2
        << ")\">evaluation return</text>\n";

    // Gap bands between curves: learned..oracle (embodiment), oracle..expert
    // (demonstration).
    if (points.size() > 1) {
        auto band = [&](double BarrierCurvePoint::*low,
                        double BarrierCurvePoint::*high, const char* col) {
            std::ostringstream poly;
            for (const auto& p : points)
                poly << px(p.n_demos) << "," << py(p.*high) << " ";
            for (auto it = points.rbegin(); it != points.rend(); ++it)
                poly << px(it->n_demos) << "," << py(*it.*low) << " ";
            out << "<polygon points=\"" << poly.str() << "\" fill=\"" << col
                << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
        };
        band(&BarrierCurvePoint::r_learned, &BarrierCurvePoint::r_oracle,
             "#ff7f0e");
        band(&BarrierCurvePoint::r_oracle, &BarrierCurvePoint::r_expert,
             "#9467bd");
    }

    const struct {
        double BarrierCurvePoint::*field;
        const char* label;
        const char* col;
    } curves[] = {
        {&BarrierCurvePoint::r_expert, "expert", "#2ca02c"},
        {&BarrierCurvePoint::r_oracle, "with actions (BC)", "#d62728"},
        {&BarrierCurvePoint::r_learned, "observation only", "#1f77b4"},
    };
    int row = 0;
    for (const auto& c : curves) {
        std::ostringstream poly;
        for (const auto& p : points)
            poly << px(p.n_demos) << "," << py(p.*c.field) << " ";
        if (points.size() > 1)
            out << "<polyline points=\"" << poly.str()
                << "\" fill=\"none\" stroke=\"" << c.col
                << "\" stroke-width=\"1.8\"/>\n";
        for (const auto& p : points)
            out << "<circle cx=\"" << px(p.n_demos) << "\" cy=\""
                << py(p.*c.field) << "\" r=\"2.4\" fill=\"" << c.col
                << "\"/>\n";
        out << "<text x=\"" << W - mr - 8 << "\" y=\"" << mt + 16 + 16 * row
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
            << "font-size=\"12\" fill=\"" << c.col << "\">" << c.label
            << "</text>\n";
        ++row;
    }
    out << "<text x=\"" << W - mr - 8 << "\" y=\"" << mt + 16 + 16 * row
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
        << "font-size=\"12\" fill=\"#ff7f0e\">embodiment gap</text>\n";
    out << "<text x=\"" << W - mr - 8 << "\" y=\"" << mt + 32 + 16 * row
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
        << "font-size=\"12\" fill=\"#9467bd\">demonstration gap</text>\n";
    out << "</svg>\n";

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << out.str();
}

}  // namespace aime::io
