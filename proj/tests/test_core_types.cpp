#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "posekit/core_types.hpp"

using namespace posekit;

namespace {

AnnotatedInstance coco17_instance()
{
    AnnotatedInstance inst;
    inst.image_id = 1;
    inst.bbox = {10, 20, 100, 200};
    inst.area = 15000;
    inst.schema = "coco-17";
    inst.dataset = "coco";
    inst.pose = Pose::unlabeled(17);
    for (std::size_t i = 0; i < 17; ++i) {
        inst.pose.coords[i] = {20.0 + i, 30.0 + 2.0 * i};
        inst.pose.visibility[i] = i % 3 == 0 ? kOccluded : kVisible;
    }
    return inst;
}

bool has_code(const std::vector<Violation>& v, const std::string& code)
{
    for (const auto& x : v)
        if (x.code == code) return true;
    return false;
}

} // namespace

TEST(Schema, WholebodyPartsSumTo133)
{
    auto s = coco_wholebody_133();
    EXPECT_EQ(s.size(), 133u);
    std::size_t total = 0;
    for (const auto& [name, range] : s.parts()) total += range.size();
    EXPECT_EQ(total, 133u);
    EXPECT_EQ(s.part_slice("body").size(), 17u);
    EXPECT_EQ(s.part_slice("foot").size(), 6u);
    EXPECT_EQ(s.part_slice("face").size(), 68u);
    EXPECT_EQ(s.part_slice("hand").size(), 42u);
}

TEST(Schema, PartSliceExamples)
{
    auto s = coco_wholebody_133();
    EXPECT_EQ(part_slice(s, "body"), (IndexRange{0, 17}));
    EXPECT_EQ(part_slice(s, "foot"), (IndexRange{17, 23}));
    EXPECT_EQ(part_slice(s, "face"), (IndexRange{23, 91}));
    EXPECT_EQ(part_slice(s, "hand"), (IndexRange{91, 133}));
}

TEST(Schema, UnknownPartNamesValidParts)
{
    auto s = coco_wholebody_133();
    try {
        part_slice(s, "nose");
        FAIL() << "expected an error";
    } catch (const Error& e) {
        std::string msg = e.what();
        for (const char* p : {"body", "foot", "face", "hand"}) EXPECT_NE(msg.find(p), std::string::npos) << msg;
    }
}

TEST(Schema, DistinctPartsNeverOverlap)
{
    auto s = coco_wholebody_133();
    const auto& parts = s.parts();
    for (std::size_t a = 0; a < parts.size(); ++a)
        for (std::size_t b = a + 1; b < parts.size(); ++b) {
            const auto& ra = parts[a].second;
            const auto& rb = parts[b].second;
            EXPECT_TRUE(ra.end <= rb.begin || rb.end <= ra.begin);
        }
}

TEST(Schema, SigmasPositiveWithStandardBodyValues)
{
    auto s = coco_wholebody_133();
    ASSERT_EQ(s.sigmas().size(), 133u);
    for (double v : s.sigmas()) EXPECT_GT(v, 0.0);
    EXPECT_DOUBLE_EQ(s.sigmas()[0], 0.026);
    EXPECT_DOUBLE_EQ(s.sigmas()[11], 0.107);
}

TEST(Schema, CreateRejectsGapsOverlapsAndBadSigmas)
{
    EXPECT_THROW(KeypointSchema::create("a", 4, {{"p", {0, 3}}}, {1, 1, 1, 1}), Error);
    EXPECT_THROW(KeypointSchema::create("a", 4, {{"p", {0, 3}}, {"q", {2, 4}}}, {1, 1, 1, 1}), Error);
    EXPECT_THROW(KeypointSchema::create("a", 2, {{"p", {0, 2}}}, {1, 0}), Error);
    EXPECT_THROW(KeypointSchema::create("a", 2, {{"p", {0, 2}}}, {1}), Error);
    EXPECT_NO_THROW(KeypointSchema::create("a", 2, {{"p", {0, 1}}, {"q", {1, 2}}}, {0.1, 0.2}));
}

TEST(Schema, JsonRoundTrip)
{
    auto s = coco_wholebody_133();
    auto back = schema_from_json(schema_to_json(s));
    EXPECT_EQ(back.name(), s.name());
    EXPECT_EQ(back.size(), s.size());
    EXPECT_EQ(back.parts(), s.parts());
    EXPECT_EQ(back.sigmas(), s.sigmas());
    EXPECT_EQ(back.skeleton(), s.skeleton());
}

TEST(Schema, ShippedDataFilesMatchBuiltins)
{
    const std::string dir = POSEKIT_DATA_DIR "/schemas/";
    auto wb = load_schema(dir + "coco_wholebody_133.json");
    EXPECT_EQ(wb.sigmas(), coco_wholebody_133().sigmas());
    EXPECT_EQ(wb.parts(), coco_wholebody_133().parts());
    auto body = load_schema(dir + "coco_17.json");
    EXPECT_EQ(body.sigmas(), coco_body_17().sigmas());
}

TEST(Schema, MissingFileErrorNamesPath)
{
    try {
        load_schema("/nonexistent/schema.json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/schema.json"), std::string::npos);
    }
}

TEST(Registry, UnknownSchemaFallsBackToUniformSigma)
{
    SchemaRegistry reg;
    auto s = reg.sigmas_for("mystery", 5);
    ASSERT_EQ(s.size(), 5u);
    for (double v : s) EXPECT_DOUBLE_EQ(v, 0.05);
    EXPECT_EQ(reg.sigmas_for("coco-wholebody-133", 133), coco_wholebody_133().sigmas());
    EXPECT_THROW(reg.at("mystery"), Error);
}

TEST(Validate, WellFormedInstanceIsOk)
{
    SchemaRegistry reg;
    EXPECT_TRUE(validate(coco17_instance(), reg).empty());
}

TEST(Validate, VisibilityOutOfDomain)
{
    SchemaRegistry reg;
    auto inst = coco17_instance();
    inst.pose.visibility[3] = 5;
    EXPECT_TRUE(has_code(validate(inst, reg), "visibility out of domain"));
}

TEST(Validate, NonFiniteCoordinate)
{
    SchemaRegistry reg;
    auto inst = coco17_instance();
    inst.pose.coords[0].x = std::numeric_limits<double>::quiet_NaN();
    EXPECT_TRUE(has_code(validate(inst, reg), "non-finite coordinate"));
}

TEST(Validate, ReportsEveryViolationWithoutThrowing)
{
    SchemaRegistry reg;
    auto inst = coco17_instance();
    inst.pose.coords.pop_back();
    inst.pose.coords[1].y = std::numeric_limits<double>::infinity();
    inst.pose.visibility[2] = 9;
    inst.bbox.w = 0;
    inst.area = -1;
    std::vector<Violation> v;
    ASSERT_NO_THROW(v = validate(inst, reg));
    for (const char* code : {"length mismatch", "non-finite coordinate", "visibility out of domain",
                             "non-positive bbox", "non-positive area"})
        EXPECT_TRUE(has_code(v, code)) << code;
}

TEST(Validate, UnknownSchemaIsReported)
{
    SchemaRegistry reg;
    auto inst = coco17_instance();
    inst.schema = "nope";
    EXPECT_TRUE(has_code(validate(inst, reg), "unknown schema"));
}
