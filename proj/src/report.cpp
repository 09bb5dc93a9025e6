#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <boost/algorithm/string.hpp>

#include "eqxai/errors.hpp"
#include "eqxai/harness.hpp"
#include "report_internal.hpp"

namespace eqxai {

namespace {

constexpr double kUnconditionalTolerance = 1e-9;

bool is_explanation_metric(const std::string& metric) { return metric == "inv" || metric == "equiv"; }

std::string strip_model_label(const std::string& model) {
    const auto plus = model.find('+');
    return plus == std::string::npos ? model : model.substr(0, plus);
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

std::string fixed(double v, int digits = 6) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

// Minimal SVG canvas with a linear value axis.
class SvgChart {
public:
    SvgChart(double width, double height) : width_(width), height_(height) {
        out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
             << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
             << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    }
    void line(double x1, double y1, double x2, double y2, const std::string& stroke = "black", double w = 1) {
        out_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2 << "\" stroke=\""
             << stroke << "\" stroke-width=\"" << w << "\"/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill) {
        out_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << std::max(w, 0.5) << "\" height=\"" << h
             << "\" fill=\"" << fill << "\" stroke=\"black\"/>\n";
    }
    void circle(double x, double y, double r, const std::string& fill) {
        out_ << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r << "\" fill=\"" << fill << "\"/>\n";
    }
    void text(double x, double y, const std::string& s, const std::string& anchor = "start") {
        out_ << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"" << anchor << "\">" << xml_escape(s)
             << "</text>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
        out_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : pts) out_ << x << ',' << y << ' ';
        out_ << "\"/>\n";
    }
    void save(const std::filesystem::path& path) {
        auto f = open_out(path);
        f << out_.str() << "</svg>\n";
    }

private:
    double width_, height_;
    std::ostringstream out_;
};

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::pair<double, double> padded_range(double lo, double hi) {
    if (!(hi > lo)) return {lo - 0.05, hi + 0.05};
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
}

std::size_t parse_size(const std::string& s, std::size_t line, const char* field) {
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw FormatError("line " + std::to_string(line) + ": bad " + field + " '" + s + "'");
    }
    return v;
}

} // namespace

namespace detail {

std::string format_value(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

Quantiles quantiles(std::vector<double> values) {
    Quantiles q;
    if (values.empty()) return q;
    std::sort(values.begin(), values.end());
    auto at = [&](double p) {
        const double pos = p * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    q.min = values.front();
    q.q1 = at(0.25);
    q.median = at(0.5);
    q.q3 = at(0.75);
    q.max = values.back();
    return q;
}

std::vector<RowGroup> group_rows(const std::vector<ReportRow>& rows, bool explanations_only) {
    std::vector<RowGroup> groups;
    std::map<std::tuple<std::string, std::string, std::string, std::string>, std::size_t> index;
    for (const auto& r : rows) {
        if (explanations_only && !is_explanation_metric(r.metric)) continue;
        const auto key = std::make_tuple(r.dataset, r.model, r.method, r.metric);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, groups.size()).first;
            groups.push_back({r.dataset, r.model, r.method, r.metric, {}});
        }
        groups[it->second].values.push_back(r.value);
    }
    return groups;
}

void write_boxplot_csv(const std::filesystem::path& path, const std::vector<RowGroup>& groups) {
    auto out = open_out(path);
    out << "dataset,model,method,metric,n,min,q1,median,q3,max,mean,ci_low,ci_high\n";
    for (const auto& g : groups) {
        const auto q = quantiles(g.values);
        const auto s = summarize(g.values);
        out << g.dataset << ',' << g.model << ',' << g.method << ',' << g.metric << ',' << s.n << ','
            << format_value(q.min) << ',' << format_value(q.q1) << ',' << format_value(q.median) << ','
            << format_value(q.q3) << ',' << format_value(q.max) << ',' << format_value(s.mean) << ','
            << format_value(s.ci_low) << ',' << format_value(s.ci_high) << '\n';
    }
}

void write_verdict_csv(const std::filesystem::path& path, const std::vector<Verdict>& verdicts) {
    auto out = open_out(path);
    out << "dataset,model,method,metric,invariant_model,guarantee,condition_met,n,mean,ci_low,ci_high,violated\n";
    for (const auto& v : verdicts) {
        out << v.dataset << ',' << v.model << ',' << v.method << ',' << v.metric << ',' << v.invariant_model << ','
            << symbol(v.guarantee.relevant()) << ',' << v.guarantee.condition_met << ',' << v.observed.n << ','
            << format_value(v.observed.mean) << ',' << format_value(v.observed.ci_low) << ','
            << format_value(v.observed.ci_high) << ',' << v.violated << '\n';
    }
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepPoint>& sweep, std::uint64_t seed) {
    auto out = open_out(path);
    out << "dataset,model,method,n_inv,enforce_mode,n,mean,stddev,ci_low,ci_high,seed\n";
    for (const auto& p : sweep) {
        out << p.dataset << ',' << p.model << ',' << p.method << ',' << p.n_inv << ',' << p.enforce_mode << ','
            << p.invariance.n << ',' << format_value(p.invariance.mean) << ',' << format_value(p.invariance.stddev)
            << ',' << format_value(p.invariance.ci_low) << ',' << format_value(p.invariance.ci_high) << ',' << seed
            << '\n';
    }
}

void write_sensitivity_csv(const std::filesystem::path& path, const std::vector<CorrelationResult>& results) {
    auto out = open_out(path);
    out << "dataset,model,method,n,pearson_r\n";
    for (const auto& c : results) {
        out << c.dataset << ',' << c.model << ',' << c.method << ',' << c.n << ','
            << (c.r ? format_value(*c.r) : std::string("nan")) << '\n';
    }
}

namespace {

struct ScatterPoint {
    std::string dataset, model, method, metric;
    double model_inv = 0, explanation = 0;
};

std::vector<ScatterPoint> scatter_points(const std::vector<ReportRow>& rows) {
    const auto groups = group_rows(rows, false);
    std::map<std::pair<std::string, std::string>, double> model_inv;
    for (const auto& g : groups) {
        if (g.metric == "model_inv") model_inv[{g.dataset, g.model}] = summarize(g.values).mean;
    }
    std::vector<ScatterPoint> pts;
    for (const auto& g : groups) {
        if (!is_explanation_metric(g.metric)) continue;
        const auto it = model_inv.find({g.dataset, g.model});
        if (it == model_inv.end()) continue;
        pts.push_back({g.dataset, g.model, g.method, g.metric, it->second, summarize(g.values).mean});
    }
    return pts;
}

} // namespace

void write_scatter_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
    auto out = open_out(path);
    out << "dataset,model,method,metric,model_inv_mean,explanation_mean\n";
    for (const auto& p : scatter_points(rows)) {
        out << p.dataset << ',' << p.model << ',' << p.method << ',' << p.metric << ',' << format_value(p.model_inv)
            << ',' << format_value(p.explanation) << '\n';
    }
}

void write_boxplot_svg(const std::filesystem::path& path, const std::vector<RowGroup>& groups) {
    const double row_h = 22, left = 260, plot_w = 420, top = 30;
    SvgChart svg(left + plot_w + 40, top + row_h * static_cast<double>(groups.size()) + 50);
    double lo = 1.0, hi = 1.0;
    for (const auto& g : groups) {
        for (double v : g.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const auto [a, b] = padded_range(lo, hi);
    auto X = [&](double v) { return left + (v - a) / (b - a) * plot_w; };
    svg.text(left, 18, "Explanation robustness per method (box: quartiles, whiskers: range)");
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& g = groups[i];
        const auto q = quantiles(g.values);
        const double y = top + row_h * static_cast<double>(i);
        svg.text(left - 8, y + 14, g.model + " / " + g.method + " (" + g.metric + ")", "end");
        svg.line(X(q.min), y + 10, X(q.max), y + 10);
        svg.rect(X(q.q1), y + 3, X(q.q3) - X(q.q1), 14, kPalette[i % 10]);
        svg.line(X(q.median), y + 3, X(q.median), y + 17, "black", 2);
    }
    const double axis_y = top + row_h * static_cast<double>(groups.size()) + 5;
    svg.line(left, axis_y, left + plot_w, axis_y);
    for (int t = 0; t <= 4; ++t) {
        const double v = a + (b - a) * t / 4.0;
        svg.line(X(v), axis_y, X(v), axis_y + 4);
        svg.text(X(v), axis_y + 16, fixed(v, 3), "middle");
    }
    svg.save(path);
}

void write_sweep_svg(const std::filesystem::path& path, const std::vector<SweepPoint>& sweep) {
    const double left = 60, top = 30, w = 420, h = 260;
    SvgChart svg(left + w + 220, top + h + 50);
    std::vector<std::string> keys;
    double lo = 1.0, max_n = 1.0;
    for (const auto& p : sweep) {
        const auto key = p.model + " / " + p.method;
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
        lo = std::min(lo, p.invariance.ci_low);
        max_n = std::max(max_n, static_cast<double>(p.n_inv));
    }
    const auto [a, b] = padded_range(std::min(lo, 1.0), 1.0);
    auto X = [&](double n) { return left + std::log2(n) / std::max(std::log2(max_n), 1.0) * w; };
    auto Y = [&](double v) { return top + h - (v - a) / (b - a) * h; };
    svg.text(left, 18, "Mean invariance against the number of aggregated symmetries");
    svg.line(left, top + h, left + w, top + h);
    svg.line(left, top, left, top + h);
    for (double n = 1; n <= max_n; n *= 2) svg.text(X(n), top + h + 16, std::to_string(static_cast<int>(n)), "middle");
    for (int t = 0; t <= 4; ++t) svg.text(left - 6, Y(a + (b - a) * t / 4.0) + 4, fixed(a + (b - a) * t / 4.0, 3), "end");
    for (std::size_t k = 0; k < keys.size(); ++k) {
        std::vector<std::pair<double, double>> pts;
        for (const auto& p : sweep) {
            if (p.model + " / " + p.method != keys[k]) continue;
            const double x = X(static_cast<double>(p.n_inv));
            pts.emplace_back(x, Y(p.invariance.mean));
            svg.line(x, Y(p.invariance.ci_low), x, Y(p.invariance.ci_high), kPalette[k % 10]);
        }
        svg.polyline(pts, kPalette[k % 10]);
        svg.text(left + w + 15, top + 14 * static_cast<double>(k + 1), keys[k]);
        svg.line(left + w + 4, top + 14 * static_cast<double>(k + 1) - 4, left + w + 12,
                 top + 14 * static_cast<double>(k + 1) - 4, kPalette[k % 10], 3);
    }
    svg.save(path);
}

void write_scatter_svg(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
    const auto pts = scatter_points(rows);
    const double left = 60, top = 30, w = 380, h = 300;
    SvgChart svg(left + w + 260, top + h + 50);
    double xlo = 1, ylo = 1;
    for (const auto& p : pts) {
        xlo = std::min(xlo, p.model_inv);
        ylo = std::min(ylo, p.explanation);
    }
    const auto [xa, xb] = padded_range(xlo, 1.0);
    const auto [ya, yb] = padded_range(ylo, 1.0);
    auto X = [&](double v) { return left + (v - xa) / (xb - xa) * w; };
    auto Y = [&](double v) { return top + h - (v - ya) / (yb - ya) * h; };
    svg.text(left, 18, "Explanation robustness against model invariance");
    svg.line(left, top + h, left + w, top + h);
    svg.line(left, top, left, top + h);
    svg.text(left + w / 2, top + h + 34, "mean model invariance", "middle");
    for (int t = 0; t <= 4; ++t) {
        svg.text(X(xa + (xb - xa) * t / 4.0), top + h + 16, fixed(xa + (xb - xa) * t / 4.0, 3), "middle");
        svg.text(left - 6, Y(ya + (yb - ya) * t / 4.0) + 4, fixed(ya + (yb - ya) * t / 4.0, 3), "end");
    }
    std::vector<std::string> methods;
    for (const auto& p : pts) {
        if (std::find(methods.begin(), methods.end(), p.method) == methods.end()) methods.push_back(p.method);
    }
    for (const auto& p : pts) {
        const auto k = static_cast<std::size_t>(std::find(methods.begin(), methods.end(), p.method) - methods.begin());
        svg.circle(X(p.model_inv), Y(p.explanation), 4, kPalette[k % 10]);
    }
    for (std::size_t k = 0; k < methods.size(); ++k) {
        svg.circle(left + w + 14, top + 14 * static_cast<double>(k + 1) - 4, 4, kPalette[k % 10]);
        svg.text(left + w + 24, top + 14 * static_cast<double>(k + 1), methods[k]);
    }
    svg.save(path);
}

// Pads a guarantee symbol to five display columns; ✓ and ✗ are multi-byte.
std::string symbol_cell(Guarantee g) {
    const auto s = symbol(g);
    return s + std::string(4, ' ');
}

std::string verdict_table(const std::vector<Verdict>& verdicts) {
    std::ostringstream out;
    out << "Guarantee verdicts (inv/equiv columns: guarantee on an invariant model, "
           "observed: mean over test examples)\n";
    char line[512];
    std::snprintf(line, sizeof line, "%-12s %-16s %-30s %-6s %-5s %-5s %-28s %s\n", "dataset", "model", "method",
                  "metric", "inv", "equiv", "observed", "status");
    out << line;
    for (const auto& v : verdicts) {
        std::string status;
        if (!v.invariant_model) {
            status = "model not invariant";
        } else if (v.violated) {
            status = "VIOLATED";
        } else if (v.guarantee.applies()) {
            status = "ok";
        } else if (v.guarantee.relevant() == Guarantee::conditional) {
            status = "condition not met";
        } else {
            status = "no guarantee";
        }
        const auto observed = fixed(v.observed.mean) + " +/- " + fixed(v.observed.ci_high - v.observed.mean) +
                              (v.observed.n == 1 ? " (n=1)" : "");
        std::snprintf(line, sizeof line, "%-12s %-16s %-30s %-6s %s %s %-28s %s\n", v.dataset.c_str(),
                      v.model.c_str(), v.method.c_str(), v.metric.c_str(), symbol_cell(v.guarantee.invariant).c_str(),
                      symbol_cell(v.guarantee.equivariant).c_str(), observed.c_str(), status.c_str());
        out << line;
    }
    return out.str();
}

} // namespace detail

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
    auto out = open_out(path);
    out << kReportHeader << '\n';
    for (const auto& r : rows) {
        out << r.dataset << ',' << r.model << ',' << r.method << ',' << r.metric << ',' << r.mode << ',' << r.n_samp
            << ',' << r.example_id << ',' << detail::format_value(r.value) << ',' << r.seed << '\n';
    }
    if (!out) throw Error("failed writing " + path.string());
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string text;
    std::vector<ReportRow> rows;
    std::size_t line_no = 0;
    if (!std::getline(in, text)) throw FormatError(path.string() + ": empty file");
    ++line_no;
    boost::trim_right_if(text, boost::is_any_of("\r"));
    if (text != kReportHeader) throw FormatError(path.string() + ": unexpected header '" + text + "'");
    while (std::getline(in, text)) {
        ++line_no;
        boost::trim_right_if(text, boost::is_any_of("\r"));
        if (text.empty()) continue;
        std::vector<std::string> f;
        boost::split(f, text, boost::is_any_of(","));
        if (f.size() != 9) {
            throw FormatError(path.string() + " line " + std::to_string(line_no) + ": expected 9 fields, got " +
                              std::to_string(f.size()));
        }
        ReportRow r;
        r.dataset = f[0];
        r.model = f[1];
        r.method = f[2];
        r.metric = f[3];
        r.mode = f[4];
        r.n_samp = parse_size(f[5], line_no, "n_samp");
        r.example_id = parse_size(f[6], line_no, "example_id");
        const auto [p, ec] = std::from_chars(f[7].data(), f[7].data() + f[7].size(), r.value);
        if (ec != std::errc() || p != f[7].data() + f[7].size()) {
            throw FormatError(path.string() + " line " + std::to_string(line_no) + ": bad value '" + f[7] + "'");
        }
        r.seed = parse_size(f[8], line_no, "seed");
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<Verdict> judge(const std::vector<ReportRow>& rows, double tolerance) {
    std::vector<Verdict> out;
    for (const auto& g : detail::group_rows(rows, true)) {
        Verdict v;
        v.dataset = g.dataset;
        v.model = g.model;
        v.method = g.method;
        v.metric = g.metric;
        v.guarantee = guarantee_of(parse_method(g.method));
        const auto model = strip_model_label(g.model);
        try {
            v.invariant_model = is_invariant_kind(parse_model_kind(model));
        } catch (const Error&) {
            v.invariant_model = false;
        }
        v.observed = summarize(g.values);
        if (v.invariant_model && v.guarantee.applies()) {
            const double tol =
                v.guarantee.relevant() == Guarantee::unconditional ? kUnconditionalTolerance : tolerance;
            v.violated = v.observed.mean < 1.0 - tol;
        }
        out.push_back(std::move(v));
    }
    return out;
}

ReportSummary report(const std::vector<std::filesystem::path>& csvs, const std::filesystem::path& out_dir, bool svg,
                     double tolerance) {
    if (csvs.empty()) throw InvalidArgumentError("report needs at least one CSV");
    std::vector<ReportRow> rows;
    for (const auto& p : csvs) {
        auto part = read_report_csv(p);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    ReportSummary s;
    std::ostringstream text;

    // Per (group, seed) summaries.
    std::map<std::tuple<std::string, std::string, std::string, std::string, std::uint64_t>, std::vector<double>> by_seed;
    std::vector<std::tuple<std::string, std::string, std::string, std::string, std::uint64_t>> order;
    for (const auto& r : rows) {
        const auto key = std::make_tuple(r.dataset, r.model, r.method, r.metric, r.seed);
        auto [it, fresh] = by_seed.try_emplace(key);
        if (fresh) order.push_back(key);
        it->second.push_back(r.value);
    }
    char line[512];
    std::snprintf(line, sizeof line, "%-12s %-16s %-30s %-12s %-6s %-5s %-12s %s\n", "dataset", "model", "method",
                  "metric", "seed", "n", "mean", "95% CI");
    text << line;
    for (const auto& key : order) {
        const auto& vals = by_seed[key];
        const auto sm = summarize(vals);
        const auto& [d, m, me, mt, seed] = key;
        std::string ci = "+/- " + fixed(sm.ci_high - sm.mean);
        if (sm.n == 1) ci += " (n=1, degenerate interval)";
        std::snprintf(line, sizeof line, "%-12s %-16s %-30s %-12s %-6llu %-5zu %-12s %s\n", d.c_str(), m.c_str(),
                      me.c_str(), mt.c_str(), static_cast<unsigned long long>(seed), sm.n, fixed(sm.mean).c_str(),
                      ci.c_str());
        text << line;
    }

    // Drift: across seeds, and among replicate rows with identical keys.
    std::map<std::tuple<std::string, std::string, std::string, std::string, std::size_t>,
             std::map<std::uint64_t, std::vector<double>>>
        per_example;
    for (const auto& r : rows) {
        per_example[{r.dataset, r.model, r.method, r.metric, r.example_id}][r.seed].push_back(r.value);
    }
    for (const auto& [key, seeds] : per_example) {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& [seed, vals] : seeds) {
            const auto [a, b] = std::minmax_element(vals.begin(), vals.end());
            lo = std::min(lo, *a);
            hi = std::max(hi, *b);
            if (vals.size() > 1) s.max_replicate_drift = std::max(s.max_replicate_drift.value_or(0.0), *b - *a);
        }
        if (seeds.size() > 1) s.max_seed_drift = std::max(s.max_seed_drift.value_or(0.0), hi - lo);
    }
    text << "\ncross-seed drift: "
         << (s.max_seed_drift ? detail::format_value(*s.max_seed_drift) : std::string("n/a (single seed)")) << '\n';
    text << "same-seed replicate drift: "
         << (s.max_replicate_drift ? detail::format_value(*s.max_replicate_drift) : std::string("n/a (no replicates)"))
         << "\n\n";

    s.verdicts = judge(rows, tolerance);
    text << detail::verdict_table(s.verdicts);
    s.any_violation = std::any_of(s.verdicts.begin(), s.verdicts.end(), [](const Verdict& v) { return v.violated; });
    s.text = text.str();

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        auto f = open_out(out_dir / "summary.txt");
        f << s.text;
        detail::write_verdict_csv(out_dir / "verdict.csv", s.verdicts);
        if (svg) detail::write_boxplot_svg(out_dir / "boxplot.svg", detail::group_rows(rows, true));
    }
    return s;
}

} // namespace eqxai
