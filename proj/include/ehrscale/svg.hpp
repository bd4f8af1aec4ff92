#pragma once

#include <string>
#include <vector>

namespace ehrscale {

// Minimal static SVG plotter: scatter/line series on linear or log10 axes.
// Fitted lines and points carry their data-space coordinates as data-*
// attributes so tests and downstream tooling can read back exact values.
class SvgPlot {
public:
    SvgPlot(int width, int height, std::string title);
    ~SvgPlot();

    void set_labels(std::string x_label, std::string y_label);
    void set_log_x(bool on) { log_x_ = on; }
    void set_log_y(bool on) { log_y_ = on; }
    void set_range(double xmin, double xmax, double ymin, double ymax);

    void add_points(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                    const std::string& label = "");
    void add_polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                      bool dashed = false, const std::string& label = "");
    // A straight segment identified by `id`, endpoints recorded verbatim.
    void add_segment(const std::string& id, double x1, double y1, double x2, double y2,
                     const std::string& color, bool dashed = false);
    void add_annotation(double x, double y, const std::string& text, const std::string& color);

    void save(const std::string& path) const;

    static const char* palette(std::size_t i);

private:
    struct Element;

    void track(const std::vector<std::pair<double, double>>& pts);
    void ensure_range();
    double px(double x) const;
    double py(double y) const;

    int width_, height_;
    std::string title_, x_label_, y_label_;
    bool log_x_ = false, log_y_ = false;
    bool has_range_ = false;
    double xmin_ = 0, xmax_ = 1, ymin_ = 0, ymax_ = 1;
    bool seen_data_ = false;
    double dxmin_ = 0, dxmax_ = 0, dymin_ = 0, dymax_ = 0;
    std::vector<Element> elements_;
    std::vector<std::pair<std::string, std::string>> legend_;  // label, color
};

std::string xml_escape(const std::string& text);

}  // namespace ehrscale
