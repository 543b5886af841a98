#include "basil/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "basil/binary_io.hpp"
#include "basil/error.hpp"
#include "basil/metrics.hpp"

namespace basil {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kHeader = "run_id,seed,mode,ordering,event_index,alpha,alpha_offline,omega_all_running";

[[noreturn]] void fail(const std::string& name, std::size_t line, const std::string& what) {
    throw InputError(name + ":" + std::to_string(line) + ": " + what);
}

template <typename T>
bool parse_num(const std::string& s, T& out) {
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
}

std::string fmt(double v, const char* spec = "%.4f") {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string echo_value(const std::map<std::string, std::string>& echo, const std::string& key) {
    const auto it = echo.find(key);
    return it == echo.end() ? std::string("-") : it->second;
}

double to_axis(const std::string& s) {
    double v = 0.0;
    return parse_num(s, v) ? v : std::nan("");
}

} // namespace

ResultsFile parse_results_csv(const std::string& text, const std::string& name) {
    ResultsFile f;
    f.name = name;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string body = line.size() > 2 ? line.substr(2) : std::string();
            if (body.rfind("fault seed=", 0) == 0 || body.rfind("incomplete seed=", 0) == 0) {
                const auto eq = body.find('=');
                const auto end = body.find(' ', eq);
                std::uint64_t seed = 0;
                if (!parse_num(body.substr(eq + 1, end - eq - 1), seed)) fail(name, lineno, "bad seed in note");
                f.unfinished.push_back(seed);
            } else if (const auto eq = body.find('='); eq != std::string::npos && !header_seen) {
                f.echo[body.substr(0, eq)] = body.substr(eq + 1);
            }
            continue;
        }
        if (!header_seen) {
            if (line != kHeader) fail(name, lineno, "expected header '" + std::string(kHeader) + "'");
            header_seen = true;
            continue;
        }
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        if (cells.size() != 8) fail(name, lineno, "expected 8 columns, found " + std::to_string(cells.size()));
        ResultRow r;
        r.run_id = cells[0];
        r.mode = cells[2];
        r.ordering = cells[3];
        if (!parse_num(cells[1], r.seed)) fail(name, lineno, "bad seed '" + cells[1] + "'");
        if (!parse_num(cells[4], r.event_index)) fail(name, lineno, "bad event_index '" + cells[4] + "'");
        if (!parse_num(cells[5], r.alpha) || !(r.alpha >= 0.0 && r.alpha <= 1.0))
            fail(name, lineno, "bad alpha '" + cells[5] + "'");
        if (!parse_num(cells[6], r.alpha_offline) || !(r.alpha_offline > 0.0 && r.alpha_offline <= 1.0))
            fail(name, lineno, "bad alpha_offline '" + cells[6] + "'");
        if (!parse_num(cells[7], r.omega_running) || !std::isfinite(r.omega_running))
            fail(name, lineno, "bad omega_all_running '" + cells[7] + "'");
        f.rows.push_back(std::move(r));
    }
    if (!header_seen) fail(name, lineno, "missing header");
    return f;
}

std::vector<RunSummary> summarize(const std::vector<ResultsFile>& files) {
    struct Group {
        std::map<std::string, std::string> echo;
        std::set<ResultRow> rows;
        std::set<std::uint64_t> unfinished;
    };
    // Keyed by run id plus every echoed setting except the seed list.
    std::map<std::string, Group> groups;
    for (const auto& f : files) {
        std::string key;
        for (const auto& [k, v] : f.echo)
            if (k != "seeds") key += k + "=" + v + "\n";
        std::set<std::string> ids;
        for (const auto& r : f.rows) ids.insert(r.run_id);
        if (ids.empty()) ids.insert(echo_value(f.echo, "run_id"));
        for (const auto& id : ids) {
            Group& g = groups[id + "\n" + key];
            g.echo = f.echo;
            for (const auto& r : f.rows)
                if (r.run_id == id) g.rows.insert(r);
            g.unfinished.insert(f.unfinished.begin(), f.unfinished.end());
        }
    }

    std::vector<RunSummary> out;
    for (const auto& [key, g] : groups) {
        if (g.rows.empty()) continue;
        RunSummary s;
        const ResultRow& first = *g.rows.begin();
        s.run_id = first.run_id;
        s.mode = first.mode;
        s.ordering = first.ordering;
        s.lambda2 = echo_value(g.echo, "lambda2");
        s.buffer = echo_value(g.echo, "buffer");

        std::map<std::uint64_t, std::vector<EvalRecord>> by_seed;
        for (const auto& r : g.rows) by_seed[r.seed].push_back({r.event_index, r.alpha, r.alpha_offline});
        std::vector<double> omegas, hats;
        std::map<std::size_t, std::pair<double, std::size_t>> acc;
        for (const auto& [seed, recs] : by_seed) {
            if (g.unfinished.count(seed)) continue;
            omegas.push_back(omega_all(recs));
            hats.push_back(offline_hat(recs));
            for (const auto& r : recs) {
                acc[r.event_index].first += r.alpha;
                acc[r.event_index].second += 1;
            }
        }
        s.seeds = omegas.size();
        if (omegas.empty()) {
            s.omega_mean = s.omega_std = s.offline_hat_mean = std::nan("");
        } else {
            double sum = 0.0, hsum = 0.0;
            for (double v : omegas) sum += v;
            for (double v : hats) hsum += v;
            s.omega_mean = sum / static_cast<double>(omegas.size());
            s.offline_hat_mean = hsum / static_cast<double>(hats.size());
            double ss = 0.0;
            for (double v : omegas) ss += (v - s.omega_mean) * (v - s.omega_mean);
            s.omega_std = omegas.size() > 1 ? std::sqrt(ss / static_cast<double>(omegas.size() - 1)) : 0.0;
        }
        for (const auto& [e, p] : acc) s.accuracy_by_event.emplace_back(e, p.first / static_cast<double>(p.second));
        out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(), [](const RunSummary& a, const RunSummary& b) {
        return std::tie(a.run_id, a.mode, a.ordering, a.lambda2, a.buffer) <
               std::tie(b.run_id, b.mode, b.ordering, b.lambda2, b.buffer);
    });
    return out;
}

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series) {
    constexpr double W = 720, H = 440, L = 70, R = 200, T = 40, B = 60;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    bool any = false;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            if (!any) {
                x0 = x1 = x;
                y0 = y1 = y;
                any = true;
            }
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    y0 = std::min(y0, 0.0);
    y1 = std::max(y1, 1.0);
    if (x1 == x0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    const double pw = W - L - R, ph = H - T - B;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return T + ph - (y - y0) / (y1 - y0) * ph; };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
      << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
      << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = x0 + (x1 - x0) * i / 5.0;
        const double yv = y0 + (y1 - y0) * i / 5.0;
        o << "<text x=\"" << fmt(px(xv), "%.1f") << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">"
          << fmt(xv, "%.3g") << "</text>\n";
        o << "<text x=\"" << L - 6 << "\" y=\"" << fmt(py(yv) + 4, "%.1f") << "\" text-anchor=\"end\">"
          << fmt(yv, "%.3g") << "</text>\n";
        o << "<line x1=\"" << L << "\" y1=\"" << fmt(py(yv), "%.1f") << "\" x2=\"" << L + pw << "\" y2=\""
          << fmt(py(yv), "%.1f") << "\" stroke=\"#e0e0e0\"/>\n";
    }
    o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << xml_escape(x_label)
      << "</text>\n";
    o << "<text x=\"18\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << T + ph / 2
      << ")\">" << xml_escape(y_label) << "</text>\n";
    if (!any)
        o << "<text x=\"" << L + pw / 2 << "\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\">no data</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* c = colors[i % std::size(colors)];
        std::vector<std::pair<double, double>> pts;
        for (const auto& p : series[i].points)
            if (std::isfinite(p.first) && std::isfinite(p.second)) pts.push_back(p);
        std::sort(pts.begin(), pts.end());
        o << "<g data-series=\"" << xml_escape(series[i].name) << "\">\n";
        if (pts.size() > 1) {
            o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
            for (std::size_t k = 0; k < pts.size(); ++k)
                o << (k ? " " : "") << fmt(px(pts[k].first), "%.2f") << ',' << fmt(py(pts[k].second), "%.2f");
            o << "\"/>\n";
        }
        for (const auto& [x, y] : pts)
            o << "<circle cx=\"" << fmt(px(x), "%.2f") << "\" cy=\"" << fmt(py(y), "%.2f") << "\" r=\"3\" fill=\""
              << c << "\" data-x=\"" << fmt(x, "%.6g") << "\" data-y=\"" << fmt(y, "%.6g") << "\"/>\n";
        const double ly = T + 14 + 18.0 * static_cast<double>(i);
        o << "<rect x=\"" << L + pw + 15 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\"" << c
          << "\"/>\n";
        o << "<text x=\"" << L + pw + 30 << "\" y=\"" << ly << "\">" << xml_escape(series[i].name) << "</text>\n";
        o << "</g>\n";
    }
    o << "</svg>\n";
    return o.str();
}

Report build_report(const std::vector<RunSummary>& runs) {
    Report rep;
    const std::vector<std::string> head = {"run_id", "mode", "ordering", "lambda2", "buffer",
                                           "seeds", "omega_all_mean", "omega_all_std", "offline_hat_mean"};
    std::vector<std::vector<std::string>> table;
    for (const auto& r : runs)
        table.push_back({r.run_id, r.mode, r.ordering, r.lambda2, r.buffer, std::to_string(r.seeds),
                         fmt(r.omega_mean), fmt(r.omega_std), fmt(r.offline_hat_mean)});

    std::vector<std::size_t> width(head.size());
    for (std::size_t c = 0; c < head.size(); ++c) {
        width[c] = head[c].size();
        for (const auto& row : table) width[c] = std::max(width[c], row[c].size());
    }
    auto text_row = [&](const std::vector<std::string>& row) {
        std::string line;
        for (std::size_t c = 0; c < row.size(); ++c) {
            const std::string pad(width[c] - row[c].size(), ' ');
            line += (c ? "  " : "") + (c < 3 ? row[c] + pad : pad + row[c]);
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        return line + "\n";
    };
    rep.text = text_row(head);
    std::string rule;
    for (std::size_t c = 0; c < head.size(); ++c) rule += (c ? "  " : "") + std::string(width[c], '-');
    rep.text += rule + "\n";
    for (const auto& row : table) rep.text += text_row(row);

    auto csv_row = [](const std::vector<std::string>& row) {
        std::string line;
        for (std::size_t c = 0; c < row.size(); ++c) line += (c ? "," : "") + row[c];
        return line + "\n";
    };
    rep.csv = csv_row(head);
    for (const auto& r : runs)
        rep.csv += csv_row({r.run_id, r.mode, r.ordering, r.lambda2, r.buffer, std::to_string(r.seeds),
                            fmt(r.omega_mean, "%.17g"), fmt(r.omega_std, "%.17g"), fmt(r.offline_hat_mean, "%.17g")});

    std::map<std::string, PlotSeries> by_lambda, by_buffer;
    std::vector<PlotSeries> by_event;
    for (const auto& r : runs) {
        const std::string base = r.mode + " / " + r.ordering;
        auto& a = by_lambda[base + " / M=" + r.buffer];
        a.name = base + " / M=" + r.buffer;
        a.points.emplace_back(to_axis(r.lambda2), r.omega_mean);
        auto& b = by_buffer[base + " / l2=" + r.lambda2];
        b.name = base + " / l2=" + r.lambda2;
        b.points.emplace_back(to_axis(r.buffer), r.omega_mean);
        PlotSeries e{r.run_id, {}};
        for (const auto& [idx, acc] : r.accuracy_by_event) e.points.emplace_back(static_cast<double>(idx), acc);
        by_event.push_back(std::move(e));
    }
    auto values = [](const std::map<std::string, PlotSeries>& m) {
        std::vector<PlotSeries> v;
        for (const auto& [k, s] : m) v.push_back(s);
        return v;
    };
    rep.omega_vs_lambda2_svg = svg_line_plot("Omega_all vs lambda2", "lambda2", "Omega_all", values(by_lambda));
    rep.omega_vs_buffer_svg = svg_line_plot("Omega_all vs buffer capacity", "buffer capacity", "Omega_all",
                                            values(by_buffer));
    rep.accuracy_vs_event_svg =
        svg_line_plot("Accuracy vs testing event", "testing event", "mean accuracy", by_event);
    return rep;
}

Report write_report(const std::string& results_dir, const std::string& out_dir) {
    std::vector<std::string> names;
    if (fs::is_directory(results_dir))
        for (const auto& entry : fs::directory_iterator(results_dir)) {
            const std::string n = entry.path().filename().string();
            if (entry.is_regular_file() && n.size() > 12 && n.ends_with(".results.csv")) names.push_back(n);
        }
    if (names.empty()) throw InputError("no runs found in " + results_dir);
    std::sort(names.begin(), names.end());

    std::vector<ResultsFile> files;
    for (const auto& n : names) {
        const auto bytes = binio::read_file((fs::path(results_dir) / n).string());
        files.push_back(parse_results_csv(std::string(bytes.begin(), bytes.end()), n));
    }
    const auto runs = summarize(files);
    if (runs.empty()) throw InputError("no runs found in " + results_dir + " (result files hold no rows)");
    Report rep = build_report(runs);

    fs::create_directories(out_dir);
    const auto put = [&](const char* name, const std::string& text) {
        binio::write_file((fs::path(out_dir) / name).string(),
                          std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    };
    put("report.txt", rep.text);
    put("report.csv", rep.csv);
    put("omega_vs_lambda2.svg", rep.omega_vs_lambda2_svg);
    put("accuracy_vs_event.svg", rep.accuracy_vs_event_svg);
    put("omega_vs_buffer.svg", rep.omega_vs_buffer_svg);
    return rep;
}

} // namespace basil
