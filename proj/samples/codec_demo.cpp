// Encode a few keypoints into SimCC labels and decode them back.
#include <cstdio>

#include "posekit/simcc.hpp"

using namespace posekit;

int main()
{
    simcc::LabelSpec spec; // 192 x 256 patch, 2 bins per pixel
    Pose p = Pose::unlabeled(3);
    const Point2 pts[] = {{10.3, 20.7}, {95.25, 128.0}, {191.0, 0.4}};
    for (std::size_t i = 0; i < 3; ++i) {
        p.coords[i] = pts[i];
        p.visibility[i] = kVisible;
    }
    auto labels = simcc::encode_pose<double>(p, spec);
    std::printf("x vectors: %zu x %zu, sigma %.3f bins\n", labels.x.dim(0), labels.x.dim(1), spec.resolved_sigma_x());
    Pose d = simcc::decode_pose(labels.x, labels.y, spec);
    for (std::size_t i = 0; i < 3; ++i)
        std::printf("(%7.3f, %7.3f) -> (%7.3f, %7.3f)\n", pts[i].x, pts[i].y, d.coords[i].x, d.coords[i].y);
}
