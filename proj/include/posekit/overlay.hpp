#pragma once

/// \file overlay.hpp
/// \brief SVG skeleton overlays for annotation and prediction files.

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "posekit/core_types.hpp"

namespace posekit {

struct OverlayLayer {
    std::vector<Pose> poses;
    std::string color = "#1f77b4";
    std::string label;
};

namespace detail {

inline std::string svg_num(double v)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
}

} // namespace detail

/// Draws every layer's skeleton edges between labeled endpoints and a dot per labeled
/// keypoint. Output depends only on the inputs.
inline std::string overlay_svg(double width, double height, const KeypointSchema& schema,
                               const std::vector<OverlayLayer>& layers, const std::string& title = "")
{
    using detail::svg_num;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg_num(width) << "\" height=\"" << svg_num(height)
       << "\" viewBox=\"0 0 " << svg_num(width) << " " << svg_num(height) << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    if (!title.empty()) os << "<title>" << title << "</title>\n";
    double legend_y = 14.0;
    for (const auto& layer : layers) {
        os << "<g stroke=\"" << layer.color << "\" fill=\"" << layer.color << "\">\n";
        for (const auto& p : layer.poses) {
            for (const auto& [a, b] : schema.skeleton()) {
                if (a >= p.size() || b >= p.size() || !p.labeled(a) || !p.labeled(b)) continue;
                os << "<line x1=\"" << svg_num(p.coords[a].x) << "\" y1=\"" << svg_num(p.coords[a].y) << "\" x2=\""
                   << svg_num(p.coords[b].x) << "\" y2=\"" << svg_num(p.coords[b].y) << "\" stroke-width=\"1.5\"/>\n";
            }
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (!p.labeled(i)) continue;
                os << "<circle cx=\"" << svg_num(p.coords[i].x) << "\" cy=\"" << svg_num(p.coords[i].y)
                   << "\" r=\"2\" stroke=\"none\"/>\n";
            }
        }
        os << "</g>\n";
        if (!layer.label.empty()) {
            os << "<text x=\"6\" y=\"" << svg_num(legend_y) << "\" font-size=\"12\" fill=\"" << layer.color << "\">"
               << layer.label << "</text>\n";
            legend_y += 14.0;
        }
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace posekit
