#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace basil {

struct ResultRow {
    std::string run_id;
    std::uint64_t seed = 0;
    std::string mode;
    std::string ordering;
    std::size_t event_index = 0;
    double alpha = 0.0;
    double alpha_offline = 0.0;
    double omega_running = 0.0;

    friend auto operator<=>(const ResultRow&, const ResultRow&) = default;
};

struct ResultsFile {
    std::string name;
    std::map<std::string, std::string> echo;
    std::vector<ResultRow> rows;
    // Seeds flagged by a fault or incomplete comment.
    std::vector<std::uint64_t> unfinished;
};

/// Parses one results CSV; errors are InputError naming `name` and the line.
ResultsFile parse_results_csv(const std::string& text, const std::string& name);

struct RunSummary {
    std::string run_id;
    std::string mode;
    std::string ordering;
    std::string lambda2;
    std::string buffer;
    std::size_t seeds = 0;
    double omega_mean = 0.0;
    double omega_std = 0.0;
    double offline_hat_mean = 0.0;
    // (event index, accuracy averaged over seeds)
    std::vector<std::pair<std::size_t, double>> accuracy_by_event;
};

/// Groups rows by run (run id plus configuration), dropping duplicate rows.
std::vector<RunSummary> summarize(const std::vector<ResultsFile>& files);

struct Report {
    std::string text;
    std::string csv;
    std::string omega_vs_lambda2_svg;
    std::string accuracy_vs_event_svg;
    std::string omega_vs_buffer_svg;
};

Report build_report(const std::vector<RunSummary>& runs);

/// Reads every *.results.csv in `results_dir` and writes report.txt,
/// report.csv and three SVG plots into `out_dir`. Throws InputError when no
/// results exist.
Report write_report(const std::string& results_dir, const std::string& out_dir);

struct PlotSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

/// Self-contained SVG line chart.
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series);

} // namespace basil
