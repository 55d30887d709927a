#pragma once

#include "linvae/common.hpp"

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

namespace linvae {

// Minimal self-contained SVG line plots; no display server involved.
class LinePlot {
  public:
    LinePlot(std::string title, std::string xlabel, std::string ylabel)
        : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

    void addSeries(const std::string& label, const std::vector<double>& x,
                   const std::vector<double>& y) {
        series_.push_back({label, x, y});
    }

    void addVLine(double x, const std::string& label) { vlines_.push_back({x, label}); }

    std::string render() const {
        const double W = 760, H = 480, ml = 70, mr = 160, mt = 40, mb = 55;
        double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
        for (const auto& s : series_)
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                xmin = std::min(xmin, s.x[i]);
                xmax = std::max(xmax, s.x[i]);
                ymin = std::min(ymin, s.y[i]);
                ymax = std::max(ymax, s.y[i]);
            }
        for (const auto& [x, lbl] : vlines_) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
        }
        if (xmin > xmax) {
            xmin = 0;
            xmax = 1;
        }
        if (ymin > ymax) {
            ymin = 0;
            ymax = 1;
        }
        if (xmax - xmin < 1e-300) xmax = xmin + 1;
        if (ymax - ymin < 1e-300) ymax = ymin + 1;
        const double padY = 0.05 * (ymax - ymin);
        ymin -= padY;
        ymax += padY;

        auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
        auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
        auto num = [](double v) {
            char b[32];
            std::snprintf(b, sizeof b, "%.4g", v);
            return std::string(b);
        };

        static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                       "#ff7f0e", "#8c564b", "#17becf"};
        std::string svg;
        char buf[512];
        svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"480\" "
               "viewBox=\"0 0 760 480\">\n";
        svg += "<rect width=\"760\" height=\"480\" fill=\"white\"/>\n";
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.1f\" y=\"24\" font-size=\"15\" text-anchor=\"middle\" "
                      "font-family=\"sans-serif\">%s</text>\n",
                      (ml + W - mr) / 2, title_.c_str());
        svg += buf;

        // axes
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                      ml, H - mb, W - mr, H - mb);
        svg += buf;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                      ml, mt, ml, H - mb);
        svg += buf;

        // ticks
        for (int k = 0; k <= 5; ++k) {
            const double xv = xmin + k * (xmax - xmin) / 5.0;
            const double yv = ymin + k * (ymax - ymin) / 5.0;
            std::snprintf(buf, sizeof buf,
                          "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                          "stroke=\"black\"/>\n<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" "
                          "text-anchor=\"middle\" font-family=\"sans-serif\">%s</text>\n",
                          px(xv), H - mb, px(xv), H - mb + 5, px(xv), H - mb + 18,
                          num(xv).c_str());
            svg += buf;
            std::snprintf(buf, sizeof buf,
                          "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                          "stroke=\"black\"/>\n<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" "
                          "text-anchor=\"end\" font-family=\"sans-serif\">%s</text>\n",
                          ml - 5, py(yv), ml, py(yv), ml - 8, py(yv) + 4, num(yv).c_str());
            svg += buf;
        }

        // axis labels
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"13\" text-anchor=\"middle\" "
                      "font-family=\"sans-serif\">%s</text>\n",
                      (ml + W - mr) / 2, H - 12, xlabel_.c_str());
        svg += buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"18\" y=\"%.1f\" font-size=\"13\" text-anchor=\"middle\" "
                      "font-family=\"sans-serif\" transform=\"rotate(-90 18 %.1f)\">%s</text>\n",
                      (mt + H - mb) / 2, (mt + H - mb) / 2, ylabel_.c_str());
        svg += buf;

        // vertical markers
        for (const auto& [x, lbl] : vlines_) {
            std::snprintf(buf, sizeof buf,
                          "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#888\" "
                          "stroke-dasharray=\"4 3\"/>\n<text x=\"%.1f\" y=\"%.1f\" "
                          "font-size=\"10\" text-anchor=\"middle\" fill=\"#555\" "
                          "font-family=\"sans-serif\">%s</text>\n",
                          px(x), mt, px(x), H - mb, px(x), mt - 4, lbl.c_str());
            svg += buf;
        }

        // series
        for (std::size_t si = 0; si < series_.size(); ++si) {
            const auto& s = series_[si];
            const char* color = colors[si % 7];
            std::string pts;
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                char pb[64];
                std::snprintf(pb, sizeof pb, "%.2f,%.2f ", px(s.x[i]), py(s.y[i]));
                pts += pb;
            }
            svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
                   "\" stroke-width=\"1.6\" points=\"" + pts + "\"/>\n";
            std::snprintf(buf, sizeof buf,
                          "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" "
                          "stroke-width=\"3\"/>\n<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" "
                          "font-family=\"sans-serif\">%s</text>\n",
                          W - mr + 14, mt + 18.0 * si + 8, W - mr + 36, mt + 18.0 * si + 8, color,
                          W - mr + 42, mt + 18.0 * si + 12, s.label.c_str());
            svg += buf;
        }
        svg += "</svg>\n";
        return svg;
    }

  private:
    struct Series {
        std::string label;
        std::vector<double> x, y;
    };
    std::string title_, xlabel_, ylabel_;
    std::vector<Series> series_;
    std::vector<std::pair<double, std::string>> vlines_;
};

}  // namespace linvae
