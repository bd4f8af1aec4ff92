#include "ehrscale/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ehrscale {

namespace {
constexpr int kMarginLeft = 64, kMarginRight = 16, kMarginTop = 28, kMarginBottom = 48;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

std::string fmt_px(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}
}  // namespace

std::string xml_escape(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

const char* SvgPlot::palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    return colors[i % (sizeof(colors) / sizeof(colors[0]))];
}

struct SvgPlot::Element {
    enum Kind { Points, Polyline, Segment, Annotation } kind;
    std::vector<std::pair<double, double>> pts;
    std::string color, id, text;
    bool dashed = false;
};

SvgPlot::SvgPlot(int width, int height, std::string title)
    : width_(width), height_(height), title_(std::move(title)) {}

SvgPlot::~SvgPlot() = default;

void SvgPlot::set_labels(std::string x_label, std::string y_label) {
    x_label_ = std::move(x_label);
    y_label_ = std::move(y_label);
}

void SvgPlot::set_range(double xmin, double xmax, double ymin, double ymax) {
    xmin_ = xmin;
    xmax_ = xmax;
    ymin_ = ymin;
    ymax_ = ymax;
    has_range_ = true;
}

void SvgPlot::track(const std::vector<std::pair<double, double>>& pts) {
    for (const auto& [x, y] : pts) {
        if (!seen_data_) {
            dxmin_ = dxmax_ = x;
            dymin_ = dymax_ = y;
            seen_data_ = true;
        }
        dxmin_ = std::min(dxmin_, x);
        dxmax_ = std::max(dxmax_, x);
        dymin_ = std::min(dymin_, y);
        dymax_ = std::max(dymax_, y);
    }
}

void SvgPlot::ensure_range() {
    if (has_range_) return;
    if (!seen_data_) {
        dxmin_ = dymin_ = 0;
        dxmax_ = dymax_ = 1;
    }
    xmin_ = dxmin_;
    xmax_ = dxmax_;
    ymin_ = dymin_;
    ymax_ = dymax_;
    if (log_x_) {
        xmin_ /= 1.3;
        xmax_ *= 1.3;
    } else {
        const double pad = (xmax_ - xmin_) * 0.05;
        xmin_ -= pad;
        xmax_ += pad;
    }
    if (log_y_) {
        ymin_ /= 1.3;
        ymax_ *= 1.3;
    } else {
        const double pad = (ymax_ - ymin_) * 0.05;
        ymin_ -= pad;
        ymax_ += pad;
    }
    if (xmin_ == xmax_) {
        xmin_ -= 1;
        xmax_ += 1;
    }
    if (ymin_ == ymax_) {
        ymin_ -= 1;
        ymax_ += 1;
    }
    has_range_ = true;
}

double SvgPlot::px(double x) const {
    const double lo = log_x_ ? std::log10(xmin_) : xmin_;
    const double hi = log_x_ ? std::log10(xmax_) : xmax_;
    const double v = log_x_ ? std::log10(x) : x;
    return kMarginLeft + (v - lo) / (hi - lo) * (width_ - kMarginLeft - kMarginRight);
}

double SvgPlot::py(double y) const {
    const double lo = log_y_ ? std::log10(ymin_) : ymin_;
    const double hi = log_y_ ? std::log10(ymax_) : ymax_;
    const double v = log_y_ ? std::log10(y) : y;
    return height_ - kMarginBottom - (v - lo) / (hi - lo) * (height_ - kMarginTop - kMarginBottom);
}

void SvgPlot::add_points(const std::vector<std::pair<double, double>>& pts,
                         const std::string& color, const std::string& label) {
    track(pts);
    Element e;
    e.kind = Element::Points;
    e.pts = pts;
    e.color = color;
    elements_.push_back(std::move(e));
    if (!label.empty()) legend_.emplace_back(label, color);
}

void SvgPlot::add_polyline(const std::vector<std::pair<double, double>>& pts,
                           const std::string& color, bool dashed, const std::string& label) {
    track(pts);
    Element e;
    e.kind = Element::Polyline;
    e.pts = pts;
    e.color = color;
    e.dashed = dashed;
    elements_.push_back(std::move(e));
    if (!label.empty()) legend_.emplace_back(label, color);
}

void SvgPlot::add_segment(const std::string& id, double x1, double y1, double x2, double y2,
                          const std::string& color, bool dashed) {
    Element e;
    e.kind = Element::Segment;
    e.pts = {{x1, y1}, {x2, y2}};
    e.color = color;
    e.id = id;
    e.dashed = dashed;
    track(e.pts);
    elements_.push_back(std::move(e));
}

void SvgPlot::add_annotation(double x, double y, const std::string& text,
                             const std::string& color) {
    Element e;
    e.kind = Element::Annotation;
    e.pts = {{x, y}};
    e.color = color;
    e.text = text;
    elements_.push_back(std::move(e));
}

void SvgPlot::save(const std::string& path) const {
    auto* self = const_cast<SvgPlot*>(this);
    self->ensure_range();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open svg for writing: " + path);
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\""
        << height_ << "\" viewBox=\"0 0 " << width_ << ' ' << height_ << "\">\n";
    out << "<rect width=\"" << width_ << "\" height=\"" << height_ << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << width_ / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
        << xml_escape(title_) << "</text>\n";

    const int x0 = kMarginLeft, x1 = width_ - kMarginRight;
    const int y0 = kMarginTop, y1 = height_ - kMarginBottom;
    out << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << x1 - x0 << "\" height=\""
        << y1 - y0 << "\" fill=\"none\" stroke=\"#333\"/>\n";

    auto emit_xtick = [&](double v) {
        const double p = px(v);
        out << "<line x1=\"" << fmt_px(p) << "\" y1=\"" << y1 << "\" x2=\"" << fmt_px(p)
            << "\" y2=\"" << y1 + 4 << "\" stroke=\"#333\"/>\n";
        out << "<text x=\"" << fmt_px(p) << "\" y=\"" << y1 + 16
            << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt_tick(v) << "</text>\n";
    };
    auto emit_ytick = [&](double v) {
        const double p = py(v);
        out << "<line x1=\"" << x0 - 4 << "\" y1=\"" << fmt_px(p) << "\" x2=\"" << x0 << "\" y2=\""
            << fmt_px(p) << "\" stroke=\"#333\"/>\n";
        out << "<text x=\"" << x0 - 7 << "\" y=\"" << fmt_px(p + 3)
            << "\" text-anchor=\"end\" font-size=\"10\">" << fmt_tick(v) << "</text>\n";
    };
    if (log_x_) {
        for (int e = static_cast<int>(std::ceil(std::log10(xmin_)));
             e <= static_cast<int>(std::floor(std::log10(xmax_))); ++e)
            emit_xtick(std::pow(10.0, e));
    } else {
        for (int i = 0; i <= 4; ++i) emit_xtick(xmin_ + (xmax_ - xmin_) * i / 4.0);
    }
    if (log_y_) {
        const int e_lo = static_cast<int>(std::ceil(std::log10(ymin_)));
        const int e_hi = static_cast<int>(std::floor(std::log10(ymax_)));
        if (e_hi < e_lo) {
            emit_ytick(ymin_);
            emit_ytick(ymax_);
        }
        for (int e = e_lo; e <= e_hi; ++e) emit_ytick(std::pow(10.0, e));
    } else {
        for (int i = 0; i <= 4; ++i) emit_ytick(ymin_ + (ymax_ - ymin_) * i / 4.0);
    }
    out << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << height_ - 10
        << "\" text-anchor=\"middle\" font-size=\"11\">" << xml_escape(x_label_) << "</text>\n";
    out << "<text x=\"14\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" font-size=\"11\""
        << " transform=\"rotate(-90 14 " << (y0 + y1) / 2 << ")\">" << xml_escape(y_label_)
        << "</text>\n";

    for (const auto& e : elements_) {
        switch (e.kind) {
            case Element::Points:
                out << "<g fill=\"" << e.color << "\">\n";
                for (const auto& [x, y] : e.pts) {
                    out << "<circle data-x=\"" << fmt(x) << "\" data-y=\"" << fmt(y) << "\" cx=\""
                        << fmt_px(px(x)) << "\" cy=\"" << fmt_px(py(y)) << "\" r=\"3\"/>\n";
                }
                out << "</g>\n";
                break;
            case Element::Polyline: {
                out << "<polyline fill=\"none\" stroke=\"" << e.color << "\"";
                if (e.dashed) out << " stroke-dasharray=\"6 4\"";
                out << " points=\"";
                for (const auto& [x, y] : e.pts) out << fmt_px(px(x)) << ',' << fmt_px(py(y)) << ' ';
                out << "\"/>\n";
                break;
            }
            case Element::Segment: {
                const auto& [ax, ay] = e.pts[0];
                const auto& [bx, by] = e.pts[1];
                out << "<line id=\"" << xml_escape(e.id) << "\" data-x1=\"" << fmt(ax)
                    << "\" data-y1=\"" << fmt(ay) << "\" data-x2=\"" << fmt(bx) << "\" data-y2=\""
                    << fmt(by) << "\" stroke=\"" << e.color << "\"";
                if (e.dashed) out << " stroke-dasharray=\"6 4\"";
                out << " x1=\"" << fmt_px(px(ax)) << "\" y1=\"" << fmt_px(py(ay)) << "\" x2=\""
                    << fmt_px(px(bx)) << "\" y2=\"" << fmt_px(py(by)) << "\"/>\n";
                break;
            }
            case Element::Annotation:
                out << "<text font-size=\"11\" fill=\"" << e.color << "\" x=\""
                    << fmt_px(px(e.pts[0].first)) << "\" y=\"" << fmt_px(py(e.pts[0].second))
                    << "\">" << xml_escape(e.text) << "</text>\n";
                break;
        }
    }

    int ly = y0 + 14;
    for (const auto& [label, color] : legend_) {
        out << "<rect x=\"" << x1 - 150 << "\" y=\"" << ly - 8
            << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
        out << "<text x=\"" << x1 - 136 << "\" y=\"" << ly << "\" font-size=\"10\">"
            << xml_escape(label) << "</text>\n";
        ly += 14;
    }
    out << "</svg>\n";
    if (!out) throw std::runtime_error("failed writing svg: " + path);
}

}  // namespace ehrscale
