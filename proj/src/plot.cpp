#include "mixdiff/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mixdiff/error.hpp"
#include "mixdiff/io.hpp"

namespace mixdiff {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

LabelledGrid LabelledGrid::parse(std::string_view csv) {
    LabelledGrid g;
    std::istringstream in{std::string(csv)};
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto cells = split_csv_line(line);
        if (header) {
            g.corner = cells.front();
            g.columns.assign(cells.begin() + 1, cells.end());
            header = false;
            continue;
        }
        if (cells.size() != g.columns.size() + 1) throw ParseError("ragged plot input", g.rows.size() + 2);
        g.rows.push_back(cells.front());
        std::vector<std::optional<double>> row;
        for (std::size_t i = 1; i < cells.size(); ++i) {
            if (cells[i].empty()) {
                row.emplace_back();
                continue;
            }
            try {
                row.emplace_back(std::stod(cells[i]));
            } catch (const std::exception&) {
                row.emplace_back();
            }
        }
        g.values.push_back(std::move(row));
    }
    if (header) throw ParseError("empty plot input", 1);
    return g;
}

namespace {

std::string escape(const std::string& s) {
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

std::string rgb(double r, double g, double b) {
    char buf[16];
    auto c = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255)); };
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c(r), c(g), c(b));
    return buf;
}

// blue - white - red
std::string diverging(double v) {
    v = std::clamp(v, -1.0, 1.0);
    if (v < 0) return rgb(1 + v * 0.8, 1 + v * 0.6, 1.0);
    return rgb(1.0, 1 - v * 0.7, 1 - v * 0.8);
}

std::string sequential(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return rgb(1 - 0.85 * v, 1 - 0.55 * v, 1 - 0.25 * v);
}

std::string fmt(double v, int digits) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

std::string svg_heatmap(const LabelledGrid& grid, const std::string& title, ColorScale scale) {
    const double cell = 44, left = 130, top = 120;
    const double w = left + cell * grid.columns.size() + 20, h = top + cell * grid.rows.size() + 20;
    double vmax = 0;
    for (const auto& r : grid.values)
        for (const auto& v : r)
            if (v) vmax = std::max(vmax, std::fabs(*v));
    if (vmax == 0) vmax = 1;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<text x=\"10\" y=\"20\" font-size=\"14\">" << escape(title) << "</text>\n";
    for (std::size_t c = 0; c < grid.columns.size(); ++c) {
        const double x = left + cell * c + cell / 2;
        os << "<text transform=\"translate(" << x << "," << top - 6 << ") rotate(-50)\">" << escape(grid.columns[c])
           << "</text>\n";
    }
    for (std::size_t r = 0; r < grid.rows.size(); ++r) {
        const double y = top + cell * r;
        os << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">"
           << escape(grid.rows[r]) << "</text>\n";
        for (std::size_t c = 0; c < grid.columns.size(); ++c) {
            const auto& v = grid.values[r][c];
            const double x = left + cell * c;
            std::string fill = "#dddddd";
            if (v) fill = scale == ColorScale::Diverging ? diverging(*v) : sequential(*v / vmax);
            os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
               << "\" fill=\"" << fill << "\" stroke=\"#ffffff\"/>\n";
            if (v)
                os << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\">"
                   << fmt(*v, scale == ColorScale::Diverging ? 2 : 1) << "</text>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_loss_curve(const LabelledGrid& grid, const std::string& title) {
    const double W = 640, H = 400, left = 60, right = 130, top = 40, bottom = 40;
    const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    std::vector<double> xs;
    for (const auto& r : grid.rows) xs.push_back(std::stod(r));
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& r : grid.values)
        for (const auto& v : r)
            if (v && *v > 0) {
                lo = std::min(lo, std::log10(*v));
                hi = std::max(hi, std::log10(*v));
            }
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-9) hi = lo + 1;
    const double x0 = xs.empty() ? 0 : xs.front(), x1 = xs.empty() ? 1 : std::max(xs.back(), x0 + 1);
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
    auto py = [&](double v) { return top + (hi - std::log10(v)) / (hi - lo) * (H - top - bottom); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<text x=\"10\" y=\"20\" font-size=\"14\">" << escape(title) << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << W - left - right << "\" height=\""
       << H - top - bottom << "\" fill=\"none\" stroke=\"#888\"/>\n";
    for (int d = static_cast<int>(std::ceil(lo)); d <= static_cast<int>(std::floor(hi)); ++d)
        os << "<text x=\"" << left - 6 << "\" y=\"" << py(std::pow(10.0, d)) + 4 << "\" text-anchor=\"end\">1e" << d
           << "</text>\n";
    os << "<text x=\"" << left << "\" y=\"" << H - 15 << "\">" << x0 << "</text>\n";
    os << "<text x=\"" << W - right << "\" y=\"" << H - 15 << "\" text-anchor=\"end\">" << x1 << "</text>\n";
    for (std::size_t c = 0; c < grid.columns.size(); ++c) {
        os << "<polyline fill=\"none\" stroke-width=\"1\" stroke=\"" << colors[c % 6] << "\" points=\"";
        for (std::size_t r = 0; r < grid.rows.size(); ++r) {
            const auto& v = grid.values[r][c];
            if (v && *v > 0) os << px(xs[r]) << ',' << py(*v) << ' ';
        }
        os << "\"/>\n";
        os << "<text x=\"" << W - right + 10 << "\" y=\"" << top + 16 * (c + 1) << "\" fill=\"" << colors[c % 6]
           << "\">" << escape(grid.columns[c]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void plot_heatmap_csv(const std::filesystem::path& csv, const std::filesystem::path& svg, const std::string& title,
                      ColorScale scale) {
    write_file_atomic(svg, svg_heatmap(LabelledGrid::parse(read_file(csv)), title, scale));
}

void plot_loss_csv(const std::filesystem::path& csv, const std::filesystem::path& svg) {
    write_file_atomic(svg, svg_loss_curve(LabelledGrid::parse(read_file(csv)), "training loss"));
}

}  // namespace mixdiff
