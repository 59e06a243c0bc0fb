// Overfit a small model on a handful of synthetic images and report the decode error.
#include <cstdio>
#include <cstdlib>

#include "posekit/train.hpp"

using namespace posekit;

int main(int argc, char** argv)
{
    const std::size_t steps = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 200;
    ModelConfig mc;
    mc.num_keypoints = 8;
    auto model = Model<float>::build(mc, 1);
    auto data = train::make_examples(synth::memorization_corpus(8, mc.input_w, mc.input_h, 16, 7), train::label_spec(mc));
    std::printf("%zu parameters, %zu examples\n", model.num_parameters(), data.size());

    train::TrainConfig tc;
    tc.steps = steps;
    tc.clip_norm = 5.0;
    tc.seed = 3;
    train::fit(model, data, tc, [&](std::size_t s, double loss) {
        if ((s + 1) % 50 == 0 || s + 1 == steps)
            std::printf("step %4zu  loss %.4f  error %.3f px\n", s + 1, loss, train::mean_keypoint_error(model, data));
    });
}
