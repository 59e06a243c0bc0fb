#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "posekit/eval.hpp"

using namespace posekit;
using namespace posekit::eval;

namespace {

const std::string kData = POSEKIT_DATA_DIR;

struct Fixture {
    std::vector<GroundTruth> gts;
    std::vector<Detection> preds;
    EvalParams params;
};

Fixture load_fixture()
{
    SchemaRegistry reg;
    auto gt = dataset::load_coco(kData + "/fixtures/eval_gt.json", reg);
    Fixture f;
    f.gts = ground_truth_from(gt.instances);
    f.preds = dataset::results_from_json(read_json_file(kData + "/fixtures/eval_pred.json"));
    std::vector<std::int64_t> ids;
    for (const auto& im : gt.images) ids.push_back(im.at("id").get<std::int64_t>());
    f.params.image_ids = ids;
    return f;
}

Pose random_pose(std::size_t n, std::mt19937_64& rng, double cx = 100, double cy = 100, double s = 50)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Pose p = Pose::unlabeled(n);
    for (std::size_t i = 0; i < n; ++i) {
        p.coords[i] = {cx + s * u(rng), cy + s * u(rng)};
        p.visibility[i] = kVisible;
    }
    return p;
}

Pose jitter(Pose p, std::mt19937_64& rng, double amount)
{
    std::normal_distribution<double> n(0.0, amount);
    for (auto& c : p.coords) c = {c.x + n(rng), c.y + n(rng)};
    return p;
}

/// Independent AP/AR for fixtures without ignored gts: naive matching, then the
/// interpolated precision max_{r' >= r} p(r') read directly at each recall point.
std::pair<double, double> oracle_ap_ar(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                       std::span<const double> sigmas, IndexRange slice, const EvalParams& params)
{
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dets[a].score > dets[b].score; });
    double ap = 0.0, ar = 0.0;
    for (double thr : params.thresholds) {
        std::vector<bool> taken(gts.size(), false);
        std::vector<bool> tp(dets.size(), false);
        for (std::size_t i : order) {
            long best_j = -1;
            double best = std::min(thr, 1.0 - 1e-10);
            for (std::size_t j = 0; j < gts.size(); ++j) {
                if (taken[j] || gts[j].image_id != dets[i].image_id) continue;
                const double o = *oks(dets[i].pose, gts[j].pose, gts[j].area, sigmas, slice);
                if (o >= best) {
                    best = o;
                    best_j = static_cast<long>(j);
                }
            }
            if (best_j >= 0) {
                taken[best_j] = true;
                tp[i] = true;
            }
        }
        std::vector<double> prec, rec;
        double t = 0, f = 0;
        for (std::size_t i : order) {
            (tp[i] ? t : f) += 1;
            prec.push_back(t / (t + f));
            rec.push_back(t / static_cast<double>(gts.size()));
        }
        ar += rec.empty() ? 0.0 : rec.back();
        for (int k = 0; k <= 100; ++k) {
            const double r = k == 100 ? 1.0 : k * 0.01;
            double best = 0.0;
            for (std::size_t c = 0; c < rec.size(); ++c)
                if (rec[c] >= r) best = std::max(best, prec[c]);
            ap += best;
        }
    }
    return {ap / (101.0 * params.thresholds.size()), ar / params.thresholds.size()};
}

} // namespace

TEST(Oks, IdenticalIsOne)
{
    std::mt19937_64 rng(1);
    auto p = random_pose(133, rng);
    auto s = coco_wholebody_133().sigmas();
    EXPECT_EQ(*oks(p, p, 5000.0, s, {0, 133}), 1.0);
}

TEST(Oks, SingleKeypointValue)
{
    Pose gt = Pose::unlabeled(1), pred = Pose::unlabeled(1);
    gt.visibility[0] = kVisible;
    pred.coords[0] = {10.0, 0.0};
    std::vector<double> sig{0.05}; // k = 0.1
    EXPECT_NEAR(*oks(pred, gt, 10000.0, sig, {0, 1}), std::exp(-0.5), 1e-12);
    EXPECT_NEAR(std::exp(-0.5), 0.60653, 1e-5);
}

TEST(Oks, FarAwayVanishes)
{
    std::mt19937_64 rng(2);
    auto gt = random_pose(17, rng);
    auto pred = gt;
    for (auto& c : pred.coords) c.x += 1e6;
    EXPECT_LT(*oks(pred, gt, 5000.0, coco_body_17().sigmas(), {0, 17}), 1e-12);
}

TEST(Oks, UnlabeledSliceIsSkipAndErrors)
{
    std::mt19937_64 rng(3);
    auto gt = random_pose(17, rng);
    for (std::size_t i = 0; i < 5; ++i) gt.visibility[i] = kUnlabeled;
    auto s = coco_body_17().sigmas();
    EXPECT_FALSE(oks(gt, gt, 100.0, s, {0, 5}).has_value());
    EXPECT_THROW(oks(gt, gt, 100.0, s, {3, 3}), Error);
    EXPECT_THROW(oks(gt, gt, 100.0, s, {0, 18}), Error);
}

TEST(Oks, MonotoneInSingleJointDistance)
{
    std::mt19937_64 rng(4);
    auto gt = random_pose(17, rng);
    auto s = coco_body_17().sigmas();
    for (std::size_t j = 0; j < 17; ++j) {
        auto pred = gt;
        double prev = 2.0;
        for (double d = 0.0; d < 200.0; d += 7.5) {
            pred.coords[j].x = gt.coords[j].x + d;
            const double o = *oks(pred, gt, 2500.0, s, {0, 17});
            EXPECT_LE(o, prev);
            prev = o;
        }
    }
}

TEST(ApAr, PerfectAndEmpty)
{
    std::mt19937_64 rng(5);
    auto p = random_pose(17, rng);
    std::vector<GroundTruth> gts{{1, p, {50, 50, 100, 100}, 10000.0}};
    auto s = coco_body_17().sigmas();
    auto r = ap_ar({{1, p, 0.9}}, gts, s, {0, 17});
    EXPECT_NEAR(*r.ap, 1.0, 1e-12);
    EXPECT_EQ(*r.ar, 1.0);
    auto none = ap_ar({}, gts, s, {0, 17});
    EXPECT_EQ(*none.ar, 0.0);
    EXPECT_EQ(*none.ap, 0.0);
    auto undefined = ap_ar({}, {}, s, {0, 17});
    EXPECT_FALSE(undefined.defined());
}

TEST(ApAr, UnknownImageRejected)
{
    std::mt19937_64 rng(6);
    auto p = random_pose(17, rng);
    std::vector<GroundTruth> gts{{1, p, {50, 50, 100, 100}, 10000.0}};
    EXPECT_THROW(ap_ar({{2, p, 0.9}}, gts, coco_body_17().sigmas(), {0, 17}), Error);
}

TEST(ApAr, ImageWithoutGroundTruthCountsFalsePositives)
{
    std::mt19937_64 rng(7);
    auto p = random_pose(17, rng);
    std::vector<GroundTruth> gts{{1, p, {50, 50, 100, 100}, 10000.0}};
    EvalParams params;
    params.image_ids = std::vector<std::int64_t>{1, 2};
    auto r = ap_ar({{1, p, 0.5}, {2, p, 0.9}}, gts, coco_body_17().sigmas(), {0, 17}, params);
    EXPECT_LT(*r.ap, 1.0);
    EXPECT_EQ(*r.ar, 1.0);
}

TEST(ApAr, DetectionOnIgnoredGroundTruthIsNeutral)
{
    std::mt19937_64 rng(8);
    auto a = random_pose(17, rng, 100, 100, 30);
    auto b = random_pose(17, rng, 400, 100, 30);
    auto b_unlabeled = b;
    for (auto& v : b_unlabeled.visibility) v = kUnlabeled;
    std::vector<GroundTruth> gts{{1, a, {70, 70, 60, 60}, 3600.0}, {1, b_unlabeled, {370, 70, 60, 60}, 3600.0}};
    auto s = coco_body_17().sigmas();
    // the high-score detection sits on the ignored gt and must not count as a false positive
    auto r = ap_ar({{1, b, 0.99}, {1, a, 0.5}}, gts, s, {0, 17});
    EXPECT_EQ(r.num_gt, 1u);
    EXPECT_NEAR(*r.ap, 1.0, 1e-12);
    EXPECT_EQ(*r.ar, 1.0);
}

TEST(ApAr, CrowdGroundTruthIgnored)
{
    std::mt19937_64 rng(9);
    auto a = random_pose(17, rng);
    std::vector<GroundTruth> gts{{1, a, {50, 50, 100, 100}, 10000.0, true}};
    EXPECT_FALSE(ap_ar({{1, a, 0.9}}, gts, coco_body_17().sigmas(), {0, 17}).defined());
}

TEST(ApAr, MaxDetsTruncates)
{
    std::mt19937_64 rng(10);
    auto a = random_pose(17, rng);
    std::vector<GroundTruth> gts{{1, a, {50, 50, 100, 100}, 10000.0}};
    std::vector<Detection> dets;
    for (int i = 0; i < 25; ++i) dets.push_back({1, random_pose(17, rng, 900, 900), 0.9});
    dets.push_back({1, a, 0.1});
    auto r = ap_ar(dets, gts, coco_body_17().sigmas(), {0, 17});
    EXPECT_EQ(r.num_pred, 20u);
    EXPECT_EQ(*r.ar, 0.0);
}

TEST(ApAr, MatchesIndependentOracleOnRandomFixtures)
{
    std::mt19937_64 rng(11);
    auto sig = coco_body_17().sigmas();
    std::uniform_int_distribution<int> count(1, 4);
    std::uniform_real_distribution<double> score(0.0, 1.0), noise(0.5, 12.0);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<GroundTruth> gts;
        std::vector<Detection> dets;
        for (std::int64_t img = 1; img <= 3; ++img) {
            const int g = count(rng), d = count(rng);
            for (int i = 0; i < g; ++i) {
                auto p = random_pose(17, rng, 100 + 60 * i, 100, 40);
                gts.push_back({img, p, {0, 0, 80, 80}, 6400.0});
            }
            for (int i = 0; i < d; ++i) {
                const auto& src = gts[gts.size() - 1 - static_cast<std::size_t>(i % g)].pose;
                dets.push_back({img, jitter(src, rng, noise(rng)), score(rng)});
            }
        }
        auto got = ap_ar(dets, gts, sig, {0, 17});
        auto want = oracle_ap_ar(dets, gts, sig, {0, 17}, EvalParams{});
        ASSERT_NEAR(*got.ap, want.first, 1e-12) << "trial " << trial;
        ASSERT_NEAR(*got.ar, want.second, 1e-12) << "trial " << trial;
    }
}

TEST(Fixture, MatchesReferenceEvaluator)
{
    auto f = load_fixture();
    auto expected = read_json_file(kData + "/fixtures/eval_expected.json").at("parts");
    auto rep = per_part_report(f.preds, f.gts, coco_wholebody_133(), f.params);
    ASSERT_EQ(rep.parts.size(), 5u);
    for (const auto& p : rep.parts) {
        ASSERT_TRUE(p.result.defined()) << p.part;
        EXPECT_NEAR(*p.result.ap, expected.at(p.part).at("AP").get<double>(), 1e-6) << p.part;
        EXPECT_NEAR(*p.result.ar, expected.at(p.part).at("AR").get<double>(), 1e-6) << p.part;
    }
}

TEST(Fixture, WholeOksRecomposesFromParts)
{
    auto f = load_fixture();
    const auto schema = coco_wholebody_133();
    const auto& s = schema.sigmas();
    for (const auto& d : f.preds)
        for (const auto& g : f.gts) {
            if (g.image_id != d.image_id) continue;
            double weighted = 0.0;
            std::size_t labeled = 0;
            for (const auto& name : {"body", "foot", "face", "hand"}) {
                auto slice = schema.part_slice(name);
                std::size_t n = 0;
                for (std::size_t i = slice.begin; i < slice.end; ++i) n += g.pose.labeled(i);
                if (n == 0) continue;
                weighted += *oks(d.pose, g.pose, g.area, s, slice) * static_cast<double>(n);
                labeled += n;
            }
            EXPECT_NEAR(*oks(d.pose, g.pose, g.area, s, schema.full()), weighted / static_cast<double>(labeled), 1e-12);
        }
}

TEST(Fixture, OksAwayFromThresholds)
{
    // guards the 1e-6 comparison: no pair sits within 1e-9 of a threshold
    auto f = load_fixture();
    const auto schema = coco_wholebody_133();
    for (const auto& d : f.preds)
        for (const auto& g : f.gts) {
            if (g.image_id != d.image_id) continue;
            for (const auto& [name, slice] : schema.parts()) {
                auto o = oks(d.pose, g.pose, g.area, schema.sigmas(), slice);
                if (!o) continue;
                for (double t : EvalParams::default_thresholds()) EXPECT_GT(std::abs(*o - t), 1e-9);
            }
        }
}

TEST(Fixture, PerfectPredictionsScoreOne)
{
    auto f = load_fixture();
    std::vector<Detection> perfect;
    for (const auto& g : f.gts) perfect.push_back({g.image_id, g.pose, 0.9});
    for (auto& d : perfect)
        for (auto& v : d.pose.visibility) v = kVisible;
    auto rep = per_part_report(perfect, f.gts, coco_wholebody_133(), f.params);
    for (const auto& p : rep.parts) {
        EXPECT_NEAR(*p.result.ap, 1.0, 1e-12) << p.part;
        EXPECT_EQ(*p.result.ar, 1.0) << p.part;
    }
}

TEST(Fixture, ZeroedHandsLowerHandAp)
{
    auto f = load_fixture();
    std::vector<Detection> preds;
    for (const auto& g : f.gts) preds.push_back({g.image_id, g.pose, 0.9});
    for (auto& d : preds) {
        for (auto& v : d.pose.visibility) v = kVisible;
        for (std::size_t i = wholebody::kHand.begin; i < wholebody::kHand.end; ++i) d.pose.coords[i] = {0.0, 0.0};
    }
    auto rep = per_part_report(preds, f.gts, coco_wholebody_133(), f.params);
    EXPECT_LT(*rep.part("hand").result.ap, *rep.part("whole").result.ap);
}

TEST(Fixture, TopScoredFalsePositiveLowersAp)
{
    auto f = load_fixture();
    const auto base = per_part_report(f.preds, f.gts, coco_wholebody_133(), f.params);
    auto preds = f.preds;
    Detection fp = preds.front();
    for (auto& c : fp.pose.coords) c = {c.x + 300.0, c.y + 300.0};
    fp.score = 0.999;
    preds.push_back(fp);
    const auto worse = per_part_report(preds, f.gts, coco_wholebody_133(), f.params);
    EXPECT_LT(*worse.part("whole").result.ap, *base.part("whole").result.ap);
}

TEST(Report, PartOrderJsonAndTable)
{
    auto f = load_fixture();
    auto rep = per_part_report(f.preds, f.gts, coco_wholebody_133(), f.params);
    std::vector<std::string> names;
    for (const auto& p : rep.parts) names.push_back(p.part);
    EXPECT_EQ(names, (std::vector<std::string>{"whole", "body", "foot", "face", "hand"}));
    auto j = report_to_json(rep);
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.at("parts").items()) keys.push_back(k);
    EXPECT_EQ(keys, names);
    for (const auto& p : rep.parts) {
        EXPECT_GE(*p.result.ap, 0.0);
        EXPECT_LE(*p.result.ap, 1.0);
    }
    auto table = report_table(rep);
    EXPECT_NE(table.find("whole"), std::string::npos);
    EXPECT_NE(table.find("AP"), std::string::npos);
    EXPECT_NE(table.find("AR"), std::string::npos);
}

TEST(Report, SchemaMismatchThrows)
{
    std::mt19937_64 rng(12);
    std::vector<GroundTruth> gts{{1, random_pose(17, rng), {0, 0, 10, 10}, 100.0}};
    EXPECT_THROW(per_part_report({}, gts), Error);
}

namespace {

Pose pose3d(std::mt19937_64& rng)
{
    auto p = random_pose(17, rng);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    p.depth = Depth{std::vector<double>(17), std::vector<std::uint8_t>(17, 1)};
    for (auto& z : p.depth->z) z = u(rng);
    return p;
}

Pose shifted(Pose p, double dx, double dy, double dz)
{
    for (auto& c : p.coords) c = {c.x + dx, c.y + dy};
    for (auto& z : p.depth->z) z += dz;
    return p;
}

} // namespace

TEST(Mpjpe, Examples)
{
    std::mt19937_64 rng(13);
    auto gt = pose3d(rng);
    EXPECT_EQ(mpjpe(gt, gt, false), 0.0);
    auto moved = shifted(gt, 1.0, 0.0, 0.0);
    EXPECT_NEAR(mpjpe(moved, gt, true), 0.0, 1e-12);
    EXPECT_NEAR(mpjpe(moved, gt, false), 1.0, 1e-12);
}

TEST(Mpjpe, RootAlignedInvariantToTranslations)
{
    std::mt19937_64 rng(14);
    for (int t = 0; t < 20; ++t) {
        auto gt = pose3d(rng), pred = pose3d(rng);
        const double base = mpjpe(pred, gt, true);
        EXPECT_NEAR(mpjpe(shifted(pred, 3.5, -2.0, 0.7), shifted(gt, -10.0, 4.0, 2.5), true), base, 1e-9);
    }
}

TEST(Mpjpe, Errors)
{
    std::mt19937_64 rng(15);
    auto gt = pose3d(rng);
    auto none = gt;
    for (auto& v : none.visibility) v = kUnlabeled;
    EXPECT_THROW(mpjpe(gt, none, false), Error);
    auto flat = gt;
    flat.depth.reset();
    EXPECT_THROW(mpjpe(flat, gt, false), Error);
    EXPECT_THROW(mpjpe(gt, random_pose(5, rng), false), Error);
}

TEST(Mpjpe, MatchedAcrossImages)
{
    std::mt19937_64 rng(16);
    const auto sig = coco_body_17().sigmas();
    auto g1 = pose3d(rng), g2 = pose3d(rng);
    std::vector<GroundTruth> gts{{1, g1, {0, 0, 100, 100}, 1e4, false}, {2, g2, {0, 0, 100, 100}, 1e4, false}};
    // Image 1: a far decoy and an exact match; image 2: a translated copy.
    std::vector<Detection> preds{{1, shifted(g1, 80, 80, 0), 0.9}, {1, g1, 0.5}, {2, shifted(g2, 0.5, 0, 0.25), 0.7}};
    EXPECT_NEAR(*matched_mpjpe(preds, gts, sig), 0.0, 1e-12);
    // A per-joint depth error on image 1 only shows up there.
    preds[1].pose.depth->z[3] += 1.7;
    const double expected = 0.5 * (mpjpe(preds[1].pose, g1, true) + 0.0);
    EXPECT_NEAR(*matched_mpjpe(preds, gts, sig), expected, 1e-12);
    // Nothing carrying depth: undefined.
    for (auto& d : preds) d.pose.depth.reset();
    EXPECT_FALSE(matched_mpjpe(preds, gts, sig).has_value());
}

TEST(InstanceScore, MeanOverLabeled)
{
    Pose p = Pose::unlabeled(3);
    p.scores = std::vector<double>{0.2, 0.4, 0.9};
    p.visibility = {2, 2, 0};
    EXPECT_NEAR(instance_score(p), 0.3, 1e-12);
}
