#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "posekit/autograd.hpp"
#include "posekit/nn.hpp"

using namespace posekit;
using namespace posekit::nn;

namespace {

constexpr double kTol = 1e-4;

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0)
{
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& v : t.vec()) v = u(rng);
    return t;
}

Param<double> random_param(const std::string& name, Shape shape, std::mt19937_64& rng, double scale = 1.0)
{
    return Param<double>(name, random_tensor(std::move(shape), rng, scale));
}

/// Random linear functional of `y`, so every output entry receives a distinct upstream gradient.
Var<double> probe(const Var<double>& y, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return dot_const(y, random_tensor(y.shape(), rng));
}

class Seeded : public ::testing::TestWithParam<std::uint64_t> {};

} // namespace

INSTANTIATE_TEST_SUITE_P(FiveSeeds, Seeded, ::testing::Values(1, 2, 3, 4, 5));

// --- tensor ------------------------------------------------------------------------

TEST(Tensor, ShapeChecks)
{
    EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), Error);
    Tensor<float> t({2, 3}, 1.5f);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_THROW(t.reshaped({4}), Error);
    EXPECT_EQ(t.reshaped({3, 2}).dim(0), 3u);
    EXPECT_EQ(checksum(t), checksum(Tensor<float>({2, 3}, 1.5f)));
    EXPECT_NE(checksum(t), checksum(Tensor<float>({2, 3}, 1.25f)));
}

// --- linear ------------------------------------------------------------------------

TEST(Linear, IdentityWeightZeroBias)
{
    std::mt19937_64 rng(1);
    auto x = random_tensor({3, 4}, rng);
    Tensor<double> eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    auto y = linear(constant(x), constant(eye), constant(Tensor<double>({4})));
    EXPECT_EQ(y.value(), x);
}

TEST(Linear, ZeroInputGivesBias)
{
    std::mt19937_64 rng(2);
    auto w = random_tensor({4, 5}, rng);
    auto b = random_tensor({5}, rng);
    auto y = linear(constant(Tensor<double>({3, 4})), constant(w), constant(b));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(y.value().at(r, j), b[j]);
}

TEST(Linear, ShapeMismatchThrows)
{
    EXPECT_THROW(linear(constant(Tensor<double>({3, 4})), constant(Tensor<double>({5, 2}))), Error);
    EXPECT_THROW(linear(constant(Tensor<double>({3, 4})), constant(Tensor<double>({4, 2})), constant(Tensor<double>({3}))),
                 Error);
}

TEST_P(Seeded, LinearGradCheck)
{
    std::mt19937_64 rng(GetParam());
    auto x = random_param("x", {3, 4}, rng);
    auto w = random_param("w", {4, 5}, rng);
    auto b = random_param("b", {5}, rng);
    auto f = [&] { return probe(linear(x.var(), w.var(), b.var()), GetParam()); };
    EXPECT_LT(grad_check(f, {&x, &w, &b}, 1e-3).max_rel_error, kTol);
    EXPECT_LT(grad_check(f, {&x, &w, &b}, 1e-6).max_rel_error, kTol);
}

TEST_P(Seeded, BatchedLinearGradCheck)
{
    std::mt19937_64 rng(GetParam() + 100);
    auto x = random_param("x", {2, 3, 4}, rng);
    auto w = random_param("w", {4, 6}, rng);
    auto b = random_param("b", {6}, rng);
    auto f = [&] { return probe(linear(x.var(), w.var(), b.var()), GetParam()); };
    EXPECT_LT(grad_check(f, {&x, &w, &b}).max_rel_error, kTol);
}

// --- conv ------------------------------------------------------------------------

TEST(Conv2d, PointwiseIdentity)
{
    std::mt19937_64 rng(3);
    auto x = random_tensor({1, 4, 5}, rng);
    auto y = conv2d(constant(x), constant(Tensor<double>({1, 1, 1, 1}, 1.0)), Var<double>(), {1, 0});
    EXPECT_EQ(y.value().vec(), x.vec());
}

TEST(Conv2d, OnesKernelCenterIsNine)
{
    auto y = conv2d(constant(Tensor<double>({1, 3, 3}, 1.0)), constant(Tensor<double>({1, 1, 3, 3}, 1.0)),
                    Var<double>(), {1, 1});
    ASSERT_EQ(y.shape(), (Shape{1, 3, 3}));
    EXPECT_EQ(y.value()[4], 9.0);
    EXPECT_EQ(y.value()[0], 4.0);
    EXPECT_EQ(y.value()[1], 6.0);
}

TEST(Conv2d, OutputExtentFormula)
{
    for (std::size_t h : {5, 6, 7, 16})
        for (std::size_t k : {1, 3, 7})
            for (std::size_t s : {1, 2}) {
                if (h + 2 * (k / 2) < k) continue;
                auto y = conv2d(constant(Tensor<double>({1, 2, h, h + 1})), constant(Tensor<double>({3, 2, k, k})),
                                Var<double>(), {s, k / 2});
                EXPECT_EQ(y.dim(2), (h + 2 * (k / 2) - k) / s + 1);
                EXPECT_EQ(y.dim(3), (h + 1 + 2 * (k / 2) - k) / s + 1);
            }
}

TEST(Conv2d, IncompatibleDimsThrow)
{
    EXPECT_THROW(conv2d(constant(Tensor<double>({1, 2, 3, 3})), constant(Tensor<double>({1, 3, 3, 3})), Var<double>(), {1, 1}),
                 Error);
    EXPECT_THROW(conv2d(constant(Tensor<double>({1, 2, 3, 3})), constant(Tensor<double>({1, 2, 7, 7})), Var<double>(), {1, 0}),
                 Error);
    EXPECT_THROW(conv2d(constant(Tensor<double>({1, 2, 3, 3})), constant(Tensor<double>({1, 2, 3, 3})), Var<double>(), {0, 1}),
                 Error);
}

TEST_P(Seeded, ConvGradCheckKernels1_3_7)
{
    for (std::size_t k : {1, 3, 7}) {
        for (std::size_t stride : {1, 2}) {
            std::mt19937_64 rng(GetParam() * 31 + k + stride);
            auto x = random_param("x", {2, 2, 8, 6}, rng);
            auto w = random_param("w", {3, 2, k, k}, rng, 0.5);
            auto b = random_param("b", {3}, rng);
            auto f = [&] { return probe(conv2d(x.var(), w.var(), b.var(), {stride, k / 2}), GetParam()); };
            auto r = grad_check(f, {&x, &w, &b});
            EXPECT_LT(r.max_rel_error, kTol) << "k=" << k << " stride=" << stride << " worst=" << r.worst_param;
        }
    }
}

TEST_P(Seeded, ConvUnbatchedGradCheck)
{
    std::mt19937_64 rng(GetParam() + 7);
    auto x = random_param("x", {2, 5, 5}, rng);
    auto w = random_param("w", {2, 2, 3, 3}, rng);
    auto f = [&] { return probe(conv2d(x.var(), w.var(), Var<double>(), {1, 1}), GetParam()); };
    EXPECT_LT(grad_check(f, {&x, &w}).max_rel_error, kTol);
}

// --- resampling ----------------------------------------------------------------------

TEST(Upsample, SinglePixel)
{
    auto y = upsample_nearest2x(constant(Tensor<double>({1, 1, 1}, 5.0)));
    EXPECT_EQ(y.shape(), (Shape{1, 2, 2}));
    for (double v : y.value().vec()) EXPECT_EQ(v, 5.0);
}

TEST(Upsample, AvgPoolInvertsUpsample)
{
    std::mt19937_64 rng(9);
    auto x = random_tensor({2, 3, 4, 5}, rng);
    auto y = avg_pool2x(upsample_nearest2x(constant(x)));
    EXPECT_EQ(y.value(), x);
}

TEST(Upsample, OddExtentDownsampleThrows)
{
    EXPECT_THROW(avg_pool2x(constant(Tensor<double>({1, 3, 4}))), Error);
}

TEST_P(Seeded, UpsampleAndPoolGradCheck)
{
    std::mt19937_64 rng(GetParam() + 17);
    auto x = random_param("x", {2, 3, 3, 2}, rng);
    auto f = [&] { return probe(upsample_nearest2x(x.var()), GetParam()); };
    EXPECT_LT(grad_check(f, {&x}).max_rel_error, kTol);
    auto z = random_param("z", {2, 4, 6}, rng);
    auto g = [&] { return probe(avg_pool2x(z.var()), GetParam()); };
    EXPECT_LT(grad_check(g, {&z}).max_rel_error, kTol);
}

TEST_P(Seeded, ElementwiseAndConcatGradCheck)
{
    std::mt19937_64 rng(GetParam() + 23);
    auto a = random_param("a", {2, 3, 4}, rng);
    auto b = random_param("b", {2, 2, 4}, rng);
    auto g = random_param("g", {4}, rng);
    auto be = random_param("be", {4}, rng);
    auto f = [&] {
        auto c = concat<double>({a.var(), b.var()}, 1);
        auto h = add(silu(c), mul(relu_sq(c), relu(scale(c, -0.5))));
        return probe(affine_last(h, g.var(), be.var()), GetParam());
    };
    EXPECT_LT(grad_check(f, {&a, &b, &g, &be}).max_rel_error, kTol);
}

// --- softmax / KL ------------------------------------------------------------------------

TEST(SoftmaxTemp, Examples)
{
    std::vector<double> u(5, 0.7);
    for (double p : softmax_temp<double>(u, 0.1)) EXPECT_NEAR(p, 0.2, 1e-15);
    auto s = softmax_temp<double>(std::vector<double>{0, 1}, 1.0);
    EXPECT_NEAR(s[0], 0.26894, 1e-5);
    EXPECT_NEAR(s[1], 0.73106, 1e-5);
    EXPECT_THROW(softmax_temp<double>(u, 0.0), Error);
    EXPECT_THROW(softmax_temp<double>(u, -1.0), Error);
}

TEST(SoftmaxTemp, SumsToOneAndPreservesArgmax)
{
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        auto v = random_tensor({17}, rng, 5.0).vec();
        auto best = std::max_element(v.begin(), v.end()) - v.begin();
        for (double tau : {0.01, 0.1, 1.0, 10.0}) {
            auto p = softmax_temp<double>(v, tau);
            EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-6);
            EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), best);
        }
    }
}

TEST(KlLoss, MatchingDistributionsGiveZero)
{
    std::mt19937_64 rng(6);
    auto logits = random_tensor({4, 9}, rng);
    Tensor<double> target({4, 9});
    for (std::size_t r = 0; r < 4; ++r) {
        auto p = softmax_temp<double>(logits.row(r), 0.1);
        std::copy(p.begin(), p.end(), target.row(r).begin());
    }
    std::vector<double> w(4, 1.0);
    EXPECT_LT(kl_discret_loss(constant(logits), target, std::span<const double>(w), 0.1).item(), 1e-9);
}

TEST(KlLoss, TwoBinHandCase)
{
    Tensor<double> target({1, 2}, std::vector<double>{1, 0});
    std::vector<double> w{1.0};
    auto l = kl_discret_loss(constant(Tensor<double>({1, 2})), target, std::span<const double>(w), 1.0);
    EXPECT_NEAR(l.item(), std::log(2.0), 1e-12);
    EXPECT_NEAR(l.item(), 0.69315, 1e-5);
}

TEST(KlLoss, ZeroWeightRowIgnoredAndAllZeroIsZero)
{
    std::mt19937_64 rng(8);
    auto pred = random_tensor({3, 6}, rng);
    auto target = random_tensor({3, 6}, rng);
    for (auto& v : target.vec()) v = std::abs(v);
    std::vector<double> w{1.0, 0.0, 1.0};
    auto base = kl_discret_loss(constant(pred), target, std::span<const double>(w), 0.1).item();
    for (std::size_t j = 0; j < 6; ++j) {
        pred.at(1, j) = 100.0 * j;
        target.at(1, j) = 0.0;
    }
    EXPECT_EQ(kl_discret_loss(constant(pred), target, std::span<const double>(w), 0.1).item(), base);
    std::vector<double> zero(3, 0.0);
    Param<double> p("p", pred);
    auto l = kl_discret_loss(p.var(), target, std::span<const double>(zero), 0.1);
    EXPECT_EQ(l.item(), 0.0);
    backward(l);
    for (double g : p.grad().vec()) EXPECT_EQ(g, 0.0);
}

TEST(KlLoss, PartWeightsScaleRows)
{
    std::mt19937_64 rng(10);
    auto pred = random_tensor({2, 5}, rng);
    auto target = random_tensor({2, 5}, rng);
    for (auto& v : target.vec()) v = std::abs(v) + 0.1;
    std::vector<double> w{1.0, 1.0}, pw{1.0, 0.0}, only0{1.0, 0.0};
    auto a = kl_discret_loss(constant(pred), target, std::span<const double>(w), 0.1, std::span<const double>(pw)).item();
    auto b = kl_discret_loss(constant(pred), target, std::span<const double>(only0), 0.1).item();
    EXPECT_DOUBLE_EQ(a, b);
}

TEST(KlLoss, NonNegativeOnRandomInputs)
{
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        auto pred = random_tensor({3, 7}, rng, 10.0);
        auto target = random_tensor({3, 7}, rng);
        for (auto& v : target.vec()) v = std::abs(v);
        std::vector<double> w{0.3, 1.0, 0.0};
        EXPECT_GE(kl_discret_loss(constant(pred), target, std::span<const double>(w), 0.1).item(), 0.0);
    }
}

TEST_P(Seeded, KlLossGradCheck)
{
    std::mt19937_64 rng(GetParam() + 40);
    auto pred = random_param("pred", {2, 3, 11}, rng, 0.3);
    auto target = random_tensor({2, 3, 11}, rng);
    for (auto& v : target.vec()) v = std::abs(v);
    std::vector<double> w{1.0, 0.5, 0.0, 1.0, 0.25, 1.0};
    auto f = [&] { return kl_discret_loss(pred.var(), target, std::span<const double>(w), 0.1); };
    EXPECT_LT(grad_check(f, {&pred}).max_rel_error, kTol);
}

// --- GAU ------------------------------------------------------------------------------

TEST(Gau, ZeroInputZeroBiasesGiveZero)
{
    std::mt19937_64 rng(1);
    GauConfig cfg{8, 0, 16, true};
    auto p = GauParams<double>::create("g", cfg, rng);
    auto y = gau_forward(constant(Tensor<double>({5, 8})), cfg, p);
    for (double v : y.value().vec()) EXPECT_EQ(v, 0.0);
}

TEST(Gau, ShapePreservedForAllSizes)
{
    std::mt19937_64 rng(2);
    for (std::size_t d : {1, 4, 9})
        for (std::size_t n : {1, 2, 7}) {
            GauConfig cfg{d, 0, 128, true};
            auto p = GauParams<double>::create("g", cfg, rng);
            auto x = random_tensor({n, d}, rng);
            auto y = gau_forward(constant(x), cfg, p);
            EXPECT_EQ(y.shape(), x.shape());
            EXPECT_TRUE(y.value().all_finite());
            auto xb = random_tensor({3, n, d}, rng);
            EXPECT_EQ(gau_forward(constant(xb), cfg, p).shape(), xb.shape());
        }
}

TEST(Gau, DefaultsAndDimChecks)
{
    GauConfig cfg{32};
    EXPECT_EQ(cfg.expansion(), 64u);
    EXPECT_EQ(cfg.attention_dim, 128u);
    std::mt19937_64 rng(3);
    auto p = GauParams<double>::create("g", cfg, rng);
    EXPECT_THROW(gau_forward(constant(Tensor<double>({4, 31})), cfg, p), Error);
    EXPECT_THROW((GauConfig{0, 0, 128, true}.validate()), Error);
}

TEST(Gau, SingleTokenFinite)
{
    std::mt19937_64 rng(4);
    GauConfig cfg{6, 0, 8, false};
    auto p = GauParams<double>::create("g", cfg, rng);
    auto y = gau_forward(constant(random_tensor({1, 6}, rng, 10.0)), cfg, p);
    EXPECT_TRUE(y.value().all_finite());
}

TEST_P(Seeded, GauGradCheck)
{
    std::mt19937_64 rng(GetParam() + 60);
    GauConfig cfg{8, 0, 6, true};
    auto p = GauParams<double>::create("g", cfg, rng);
    // nonzero biases and key offsets so every parameter is exercised
    ParamRefs<double> refs;
    p.collect(refs);
    for (auto* r : refs) r->value() = random_tensor(r->shape(), rng, 0.5);
    auto x = random_param("x", {5, 8}, rng);
    refs.push_back(&x);
    auto f = [&] { return probe(gau_forward(x.var(), cfg, p), GetParam()); };
    auto r = grad_check(f, refs);
    EXPECT_LT(r.max_rel_error, kTol) << r.worst_param << "[" << r.worst_index << "] " << r.worst_analytic << " vs "
                                      << r.worst_numeric;
}

// --- grad_check itself ------------------------------------------------------------------

TEST(GradCheck, RiddersBeatsASingleStep)
{
    auto g = [](double h) { return std::sin(0.7 + h); };
    EXPECT_NEAR(ridders_derivative(g, 1e-2), std::cos(0.7), 1e-13);
    auto e = [](double h) { return std::exp(3.0 * (1.0 + h)); };
    const double exact = 3.0 * std::exp(3.0);
    const double single = (e(1e-3) - e(-1e-3)) / 2e-3;
    EXPECT_LT(std::abs(ridders_derivative(e, 1e-3) - exact), std::abs(single - exact) * 1e-3);
}

TEST(GradCheck, QuadraticIsExact)
{
    Param<double> w("w", Tensor<double>({1}, 3.0));
    auto f = [&] { return sum(mul(w.var(), w.var())); };
    auto r = grad_check(f, {&w});
    EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);
    EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(GradCheck, NonFiniteThrows)
{
    Param<double> w("w", Tensor<double>({1}, std::nan("")));
    auto f = [&] { return sum(w.var()); };
    EXPECT_THROW(grad_check(f, {&w}), Error);
}

TEST(GradCheck, RelativeErrorDefinition)
{
    EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(relative_error(1.0, 3.0), 0.5);
    EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
}

// --- params and init --------------------------------------------------------------------

TEST(Param, CopiesAreDeepAndZeroGrad)
{
    Param<float> a("a", Tensor<float>({3}, 1.0f));
    a.grad().fill(2.0f);
    Param<float> b = a;
    b.value()[0] = 9.0f;
    EXPECT_EQ(a.value()[0], 1.0f);
    a.zero_grad();
    for (float g : a.grad().vec()) EXPECT_EQ(g, 0.0f);
    EXPECT_EQ(a.grad().shape(), a.value().shape());
}

TEST(Init, HeUniformVariance)
{
    std::mt19937_64 rng(5);
    auto t = he_uniform<double>({256, 512}, 256, rng);
    double s = 0, s2 = 0;
    for (double v : t.vec()) {
        s += v;
        s2 += v * v;
    }
    const double n = double(t.size());
    const double var = s2 / n - (s / n) * (s / n);
    EXPECT_NEAR(var, 2.0 / 256.0, 0.2 * 2.0 / 256.0);
}

TEST(Forward, RandomParamsStayFinite)
{
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        GauConfig cfg{8, 0, 16, true};
        auto p = GauParams<double>::create("g", cfg, rng);
        ParamRefs<double> refs;
        p.collect(refs);
        for (auto* r : refs) r->value() = random_tensor(r->shape(), rng, 10.0);
        auto y = gau_forward(constant(random_tensor({6, 8}, rng, 10.0)), cfg, p);
        EXPECT_TRUE(y.value().all_finite());
        auto c = conv2d(constant(random_tensor({2, 6, 6}, rng, 10.0)), constant(random_tensor({3, 2, 3, 3}, rng, 10.0)),
                        constant(random_tensor({3}, rng, 10.0)), {1, 1});
        EXPECT_TRUE(silu(c).value().all_finite());
    }
}
