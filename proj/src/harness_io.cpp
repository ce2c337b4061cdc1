#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "ivtf/errors.hpp"
#include "ivtf/format.hpp"
#include "ivtf/harness.hpp"

namespace ivtf {

namespace {

std::string trim(std::string s) {
    auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && ws(s.back())) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && ws(s[i])) ++i;
    s.erase(0, i);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

}  // namespace

Dataset ingest_csv(const std::string& path, const std::vector<std::string>& z_columns,
                   const std::vector<std::string>& x_columns, const std::string& y_column,
                   std::optional<std::size_t> query_row) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'", 0, 0);
    return ingest_csv(in, z_columns, x_columns, y_column, query_row);
}

Dataset ingest_csv(std::istream& in, const std::vector<std::string>& z_columns,
                   const std::vector<std::string>& x_columns, const std::string& y_column,
                   std::optional<std::size_t> query_row) {
    if (z_columns.empty() || x_columns.empty()) throw std::invalid_argument("ingest_csv: need z and x columns");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file", 1, 0);
    const std::vector<std::string> header = split_fields(line);
    std::map<std::string, std::size_t> index;
    for (std::size_t c = 0; c < header.size(); ++c) index.emplace(header[c], c);
    auto locate = [&](const std::string& name) {
        const auto it = index.find(name);
        if (it == index.end()) throw ParseError("missing column '" + name + "'", 1, 0);
        return it->second;
    };
    std::vector<std::size_t> zc, xc;
    for (const auto& c : z_columns) zc.push_back(locate(c));
    for (const auto& c : x_columns) xc.push_back(locate(c));
    const std::size_t yc = locate(y_column);

    std::vector<std::vector<double>> rows;  // z..., x..., y
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             line_no, std::min(fields.size(), header.size()) + 1);
        }
        std::vector<double> row;
        auto take = [&](std::size_t c) {
            double v = 0.0;
            if (!parse_double(fields[c], v) || !std::isfinite(v)) {
                throw ParseError("non-numeric value '" + fields[c] + "'", line_no, c + 1);
            }
            row.push_back(v);
        };
        for (std::size_t c : zc) take(c);
        for (std::size_t c : xc) take(c);
        take(yc);
        rows.push_back(std::move(row));
    }
    if (rows.size() < 2) throw ParseError("need at least 2 data rows", line_no, 0);
    const std::size_t qi = query_row ? *query_row : rows.size();
    if (qi < 1 || qi > rows.size()) throw std::invalid_argument("query row is out of range");

    const std::size_t q = zc.size(), p = xc.size(), n = rows.size() - 1;
    Dataset d{Matrix(n, q), Matrix(n, p), Vector(n), Vector(q), Vector(p), 0.0};
    std::size_t i = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (r + 1 == qi) {
            std::copy(row.begin(), row.begin() + q, d.z_query.begin());
            std::copy(row.begin() + q, row.begin() + q + p, d.x_query.begin());
            d.y_query = row[q + p];
            continue;
        }
        for (std::size_t l = 0; l < q; ++l) d.Z(i, l) = row[l];
        for (std::size_t k = 0; k < p; ++k) d.X(i, k) = row[q + k];
        d.Y[i] = row[q + p];
        ++i;
    }
    return d;
}

void export_csv(std::ostream& out, const Dataset& d) {
    d.validate();
    for (std::size_t l = 0; l < d.q(); ++l) out << 'z' << l + 1 << ',';
    for (std::size_t k = 0; k < d.p(); ++k) out << 'x' << k + 1 << ',';
    out << "y\n";
    auto row = [&](std::span<const double> z, std::span<const double> x, double y) {
        for (double v : z) out << format_double(v) << ',';
        for (double v : x) out << format_double(v) << ',';
        out << format_double(y) << '\n';
    };
    for (std::size_t i = 0; i < d.n(); ++i) row(d.Z.row(i), d.X.row(i), d.Y[i]);
    row(d.z_query, d.x_query, d.y_query);
}

std::vector<PlotSeries> sweep_series(const std::vector<MetricRecord>& records, const std::string& metric) {
    if (metric != "icpe" && metric != "coef_mse") throw std::invalid_argument("metric must be icpe or coef_mse");
    std::vector<PlotSeries> series;
    for (const auto& r : records) {
        auto it = std::find_if(series.begin(), series.end(), [&](const PlotSeries& s) { return s.name == r.estimator; });
        if (it == series.end()) {
            series.push_back({r.estimator, {}, {}});
            it = series.end() - 1;
        }
        it->x.push_back(r.sweep_value);
        it->y.push_back(metric == "icpe" ? r.icpe_mean : r.coef_mse_mean);
    }
    return series;
}

namespace {

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

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

}  // namespace

void write_svg(std::ostream& out, const std::vector<PlotSeries>& series, const PlotOptions& o) {
    constexpr double W = 640, H = 420, left = 70, right = 150, top = 40, bottom = 55;
    constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    auto ty = [&](double y) { return o.log_y ? std::log10(y) : y; };
    auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!o.log_y || y > 0.0); };

    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!usable(s.x[i], s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, ty(s.y[i]));
            y1 = std::max(y1, ty(s.y[i]));
        }
    }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x0 -= 0.5, x1 += 0.5;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
    const double pw = W - left - right, ph = H - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(o.title)
        << "</text>\n";
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
        out << "<text x=\"" << px(fx) << "\" y=\"" << H - bottom + 18 << "\" text-anchor=\"middle\">"
            << tick_label(fx) << "</text>\n";
        out << "<text x=\"" << left - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">"
            << tick_label(o.log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
        out << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(fy) << "\" y2=\"" << py(fy)
            << "\" stroke=\"#ddd\"/>\n";
    }
    out << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
        << xml_escape(o.x_label) << "</text>\n";
    out << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << xml_escape(o.y_label) << (o.log_y ? " (log)" : "") << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = palette[k % std::size(palette)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (usable(s.x[i], s.y[i])) out << px(s.x[i]) << ',' << py(ty(s.y[i])) << ' ';
        }
        out << "\"/>\n";
        const double ly = top + 14 + 18.0 * static_cast<double>(k);
        out << "<line x1=\"" << W - right + 12 << "\" x2=\"" << W - right + 36 << "\" y1=\"" << ly << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << W - right + 42 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.name) << "</text>\n";
    }
    out << "</svg>\n";
}

void apply_json_config(const std::string& text, ExperimentConfig& cfg) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("invalid JSON config: ") + e.what(), 0, e.byte);
    }
    if (!doc.is_object()) throw ParseError("config must be a JSON object", 0, 0);
    try {
        std::string scenario_kind;
        json scenario_opts = json::object();
        for (const auto& [key, v] : doc.items()) {
            if (key == "scenario") {
                if (v.is_string()) {
                    scenario_kind = v.get<std::string>();
                } else {
                    scenario_kind = v.at("kind").get<std::string>();
                    scenario_opts = v;
                }
            } else if (key == "label") {
                cfg.label = v.get<std::string>();
            } else if (key == "n_grid") {
                cfg.n_grid = v.get<std::vector<std::size_t>>();
            } else if (key == "r_grid") {
                cfg.r_grid = v.get<std::vector<double>>();
            } else if (key == "n") {
                cfg.n = v.get<std::size_t>();
            } else if (key == "p") {
                cfg.p = v.get<std::size_t>();
            } else if (key == "q") {
                cfg.q = v.get<std::size_t>();
            } else if (key == "sims") {
                cfg.sims = v.get<std::size_t>();
            } else if (key == "seed") {
                cfg.seed = v.get<std::uint64_t>();
            } else if (key == "rates") {
                if (v.is_string()) {
                    cfg.rates = parse_rates(v.get<std::string>());
                } else {
                    cfg.rates = {RatesMode::Explicit, {v.at("alpha").get<double>(), v.at("eta").get<double>()}};
                }
            } else if (key == "loops") {
                cfg.loops = v.get<std::size_t>();
            } else if (key == "delta") {
                cfg.delta = v.get<double>();
            } else if (key == "lambda") {
                cfg.lambda = v.get<double>();
            } else if (key == "tau") {
                cfg.tau = v.get<double>();
            } else if (key == "estimators") {
                cfg.estimators.clear();
                for (const auto& e : v) cfg.estimators.push_back(parse_estimator(e.get<std::string>()));
            } else if (key == "workers") {
                cfg.workers = v.get<std::size_t>();
            } else if (key == "tf_coefficients") {
                cfg.tf_coefficients = v.get<bool>();
            } else if (key == "clip") {
                for (const auto& [ck, cv] : v.items()) {
                    const double b = cv.get<double>();
                    if (ck == "z") cfg.clip.z = b;
                    else if (ck == "x") cfg.clip.x = b;
                    else if (ck == "y") cfg.clip.y = b;
                    else if (ck == "beta") cfg.clip.beta = b;
                    else throw ParseError("unknown clip key '" + ck + "'", 0, 0);
                }
            } else {
                throw ParseError("unknown config key '" + key + "'", 0, 0);
            }
        }
        if (!scenario_kind.empty()) {
            auto opt = [&](const char* k, auto fallback) {
                return scenario_opts.contains(k) ? scenario_opts.at(k).get<decltype(fallback)>() : fallback;
            };
            cfg.axis = SweepAxis::SampleSize;
            if (scenario_kind == "standard") {
                cfg.scenario = scenario::Standard{};
            } else if (scenario_kind == "iv-strength") {
                cfg.scenario = scenario::IvStrength{};
                cfg.axis = SweepAxis::Strength;
            } else if (scenario_kind == "endogeneity") {
                cfg.scenario = scenario::EndogeneityStrength{};
                cfg.axis = SweepAxis::Strength;
            } else if (scenario_kind == "quadratic") {
                cfg.scenario = scenario::QuadraticIv{};
            } else if (scenario_kind == "underid") {
                cfg.scenario = scenario::UnderIdentified{opt("q_eff", std::size_t{3})};
            } else if (scenario_kind == "multicollinearity") {
                cfg.scenario =
                    scenario::Multicollinearity{opt("dup_x", std::size_t{1}), opt("dup_z", std::size_t{1}), opt("jitter", 1e-6)};
            } else if (scenario_kind == "nonlinear") {
                cfg.scenario = scenario::NonlinearMlp{opt("hidden", std::size_t{16})};
            } else {
                throw ParseError("unknown scenario '" + scenario_kind + "'", 0, 0);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad config value: ") + e.what(), 0, 0);
    }
}

}  // namespace ivtf
