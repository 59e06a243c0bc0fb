// Run the top-down pipeline over a synthetic trace, detecting every 5th frame.
#include <cstdio>

#include "posekit/pipeline.hpp"

using namespace posekit;
using namespace posekit::pipeline;

int main()
{
    const Trace trace = synthetic_trace(30, 2, 17, 4);
    PipelineConfig cfg;
    cfg.detect_interval = 5;
    Pipeline pipe(cfg);
    TraceOracle estimator(trace.num_keypoints, 1.0, 4); // ground truth plus 1 px jitter
    for (std::size_t f = 0; f < trace.frames.size(); ++f) {
        estimator.set_frame(&trace.frames[f]);
        auto out = pipe.step(f, Tensor<float>({3, 0, 0}), [&](const Tensor<float>&) { return trace.frames[f].detections; },
                             [&](const Crop& c) { return estimator(c); });
        double err = 0.0;
        for (const auto& r : out) {
            double best = 1e300;
            for (const auto& gt : trace.frames[f].poses) best = std::min(best, mean_distance(r.pose, gt));
            err += best / static_cast<double>(out.size());
        }
        std::printf("frame %2zu  %s  %zu people  mean error %.2f px\n", f, pipe.state().detector_ran ? "detect" : "track ",
                    out.size(), err);
    }
    std::printf("detector calls: %zu of %zu frames\n", pipe.state().detector_calls, trace.frames.size());
}
