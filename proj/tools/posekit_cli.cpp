// posekit command-line entry point. Exit codes: 0 success, 1 usage error, 2 data error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "posekit/posekit.hpp"

using namespace posekit;
using json = nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t file_checksum(const std::string& bytes) { return fnv1a(bytes.data(), bytes.size()); }

/// Machine-readable output goes to `path`, or to stdout when no path is given.
void emit(const json& j, const std::string& path)
{
    if (path.empty())
        std::cout << j.dump(1) << "\n";
    else
        dataset::write_json_file(path, j);
}

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path);
    out << text;
    if (!out) throw Error("write failed: " + path);
}

std::string read_text(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Saves and returns the FNV-1a of the written bytes.
std::uint64_t save_model(const Model<float>& m, const std::string& path, const json& extra)
{
    const std::string bytes = checkpoint_bytes(m, extra);
    write_text(path, bytes);
    return file_checksum(bytes);
}

json loss_summary(const std::vector<double>& losses)
{
    json j;
    j["steps"] = losses.size();
    if (!losses.empty()) {
        j["initial"] = losses.front();
        j["final"] = losses.back();
        const std::size_t tail = std::min<std::size_t>(10, losses.size());
        double s = 0.0;
        for (std::size_t i = losses.size() - tail; i < losses.size(); ++i) s += losses[i];
        j["final_mean10"] = s / double(tail);
    }
    return j;
}

SchemaRegistry registry_with(const std::string& schema_file)
{
    SchemaRegistry reg;
    reg.add(synth::multiscale_schema());
    if (!schema_file.empty()) reg.add(load_schema(schema_file));
    return reg;
}

// ---- codec -------------------------------------------------------------------------

struct CodecOpts {
    int w = 192, h = 256;
    double k = 2.0;
    double x = 0.0, y = 0.0;
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    std::string in, out;
};

simcc::LabelSpec codec_spec(const CodecOpts& o)
{
    simcc::LabelSpec s;
    s.input_w = o.w;
    s.input_h = o.h;
    s.split_ratio = o.k;
    s.validate();
    return s;
}

int cmd_codec_encode(const CodecOpts& o)
{
    const auto spec = codec_spec(o);
    Pose p = Pose::unlabeled(1);
    p.coords[0] = {o.x, o.y};
    p.visibility[0] = kVisible;
    const auto labels = simcc::encode_pose<double>(p, spec);
    if (labels.keypoint_weights[0] == 0.0) throw Error("codec encode: point lies outside the patch");
    json j;
    j["seed"] = o.seed;
    j["input_w"] = o.w;
    j["input_h"] = o.h;
    j["split_ratio"] = o.k;
    j["sigma_x"] = spec.resolved_sigma_x();
    j["sigma_y"] = spec.resolved_sigma_y();
    j["point"] = {o.x, o.y};
    j["x"] = std::vector<double>(labels.x.vec().begin(), labels.x.vec().end());
    j["y"] = std::vector<double>(labels.y.vec().begin(), labels.y.vec().end());
    emit(j, o.out);
    return 0;
}

int cmd_codec_decode(const CodecOpts& o)
{
    const json in = read_json_file(o.in);
    std::vector<double> x, y;
    double k = o.k;
    try {
        x = in.at("x").get<std::vector<double>>();
        y = in.at("y").get<std::vector<double>>();
        k = in.value("split_ratio", k);
    } catch (const nlohmann::json::exception& e) {
        throw Error(o.in + ": expected \"x\" and \"y\" label vectors (" + e.what() + ")");
    }
    if (x.empty() || y.empty()) throw Error(o.in + ": label vectors must be nonempty");
    simcc::LabelSpec spec;
    spec.input_w = static_cast<int>(std::lround(double(x.size()) / k));
    spec.input_h = static_cast<int>(std::lround(double(y.size()) / k));
    spec.split_ratio = k;
    const Pose p = simcc::decode_pose(Tensor<double>({1, x.size()}, x), Tensor<double>({1, y.size()}, y), spec);
    json j;
    j["seed"] = o.seed;
    j["split_ratio"] = k;
    j["x"] = p.coords[0].x;
    j["y"] = p.coords[0].y;
    j["score"] = p.score(0);
    emit(j, o.out);
    return 0;
}

int cmd_codec_roundtrip(const CodecOpts& o)
{
    const auto spec = codec_spec(o);
    if (o.n == 0) throw UsageError("codec roundtrip: --n must be positive");
    std::mt19937_64 rng(o.seed);
    std::uniform_real_distribution<double> ux(0.0, double(o.w - 1)), uy(0.0, double(o.h - 1));
    std::vector<Point2> pts(o.n);
    for (auto& p : pts) p = {ux(rng), uy(rng)};
    std::vector<double> ex(o.n), ey(o.n);
    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(o.n, [&](std::size_t i) {
        Pose p = Pose::unlabeled(1);
        p.coords[0] = pts[i];
        p.visibility[0] = kVisible;
        const auto labels = simcc::encode_pose<double>(p, spec);
        const Pose d = simcc::decode_pose(labels.x, labels.y, spec);
        ex[i] = std::abs(d.coords[0].x - pts[i].x);
        ey[i] = std::abs(d.coords[0].y - pts[i].y);
    });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double mx = *std::max_element(ex.begin(), ex.end()), my = *std::max_element(ey.begin(), ey.end());
    const double bound = 0.5 / o.k;
    json j;
    j["seed"] = o.seed;
    j["input_w"] = o.w;
    j["input_h"] = o.h;
    j["split_ratio"] = o.k;
    j["n"] = o.n;
    j["max_error_x"] = mx;
    j["max_error_y"] = my;
    j["max_error"] = std::max(mx, my);
    j["bound"] = bound;
    j["within_bound"] = std::max(mx, my) <= bound;
    if (o.out.empty()) {
        emit(j, "");
    } else {
        emit(j, o.out);
        std::cout << "roundtrip: " << o.n << " keypoints, max error " << std::max(mx, my) << " px (bound " << bound
                  << ")\n";
    }
    std::cerr << "roundtrip took " << secs << " s\n";
    return std::max(mx, my) <= bound ? 0 : 2;
}

// ---- training ----------------------------------------------------------------------

struct TrainOpts {
    std::string corpus, model_config, out, report;
    std::size_t k = 8, w = 48, h = 64, n = 16, levels = 2;
    std::size_t steps = 500, batch = 16;
    double lr = 0.05, clip = 5.0;
    std::string optimizer = "sgd", schedule = "cosine";
    std::uint64_t seed = 0;
};

synth::CorpusSpec corpus_from(const std::string& path, const TrainOpts& o)
{
    if (!path.empty()) return synth::corpus_spec_from_json(read_json_file(path));
    synth::CorpusSpec c;
    c.k = o.k;
    c.width = o.w;
    c.height = o.h;
    c.n = o.n;
    c.seed = o.seed;
    c.validate();
    return c;
}

train::TrainConfig train_config(const TrainOpts& o)
{
    train::TrainConfig tc;
    tc.steps = o.steps;
    tc.batch_size = o.batch;
    tc.lr = o.lr;
    tc.clip_norm = o.clip;
    tc.optimizer = o.optimizer;
    tc.schedule = o.schedule;
    tc.seed = o.seed;
    return tc;
}

void require_match(const ModelConfig& mc, const synth::CorpusSpec& c, const std::string& who)
{
    if (mc.input_w != c.width || mc.input_h != c.height || mc.num_keypoints != c.keypoints())
        throw Error(who + ": model expects " + std::to_string(mc.num_keypoints) + " keypoints at " +
                    std::to_string(mc.input_w) + "x" + std::to_string(mc.input_h) + ", corpus has " +
                    std::to_string(c.keypoints()) + " at " + std::to_string(c.width) + "x" + std::to_string(c.height));
}

int cmd_train_toy(const TrainOpts& o)
{
    const auto corpus = corpus_from(o.corpus, o);
    ModelConfig mc;
    if (!o.model_config.empty()) {
        mc = model_config_from_json(read_json_file(o.model_config));
    } else {
        mc.num_keypoints = corpus.keypoints();
        mc.input_w = corpus.width;
        mc.input_h = corpus.height;
        mc.num_levels = o.levels;
        mc.validate();
    }
    require_match(mc, corpus, "train-toy");
    const auto data = train::make_examples(synth::generate(corpus), train::label_spec(mc));
    auto model = Model<float>::build(mc, o.seed);
    const auto tc = train_config(o);
    const double before = train::mean_keypoint_error(model, data);
    const auto log = train::fit(model, data, tc, [&](std::size_t s, double l) {
        if ((s + 1) % 100 == 0) std::cerr << "step " << (s + 1) << " loss " << l << "\n";
    });
    const double after = train::mean_keypoint_error(model, data);

    json j;
    j["command"] = "train-toy";
    j["seed"] = o.seed;
    j["corpus"] = to_json(corpus);
    j["model"] = to_json(mc);
    j["optimizer"] = {{"name", tc.optimizer}, {"lr", tc.lr},       {"schedule", tc.schedule},
                      {"batch", tc.batch_size}, {"clip_norm", tc.clip_norm}};
    j["loss"] = loss_summary(log.losses);
    j["mean_error_px_before"] = before;
    j["mean_error_px"] = after;
    j["parameter_checksum"] = hex64(parameter_checksum(model));
    if (!o.out.empty()) j["checkpoint_fnv1a"] = hex64(save_model(model, o.out, {{"seed", o.seed}, {"corpus", to_json(corpus)}}));
    emit(j, o.report);
    if (!o.report.empty())
        std::cout << "train-toy: " << log.losses.size() << " steps, mean error " << after << " px\n";
    return 0;
}

// ---- distillation ------------------------------------------------------------------

struct DistillOpts {
    TrainOpts train;
    int stage = 1;
    std::string teacher, student;
    double alpha = 1.0, beta = 0.5, tau = 0.1;
    bool linear_decay = false, keep_head = false;
};

int cmd_distill(DistillOpts o)
{
    if (o.student.empty()) throw UsageError("distill: --student is required");
    if (o.train.out.empty()) throw UsageError("distill: --out is required");
    if (o.stage == 1 && o.teacher.empty()) throw UsageError("distill: stage 1 needs --teacher");
    if (o.train.corpus.empty()) throw UsageError("distill: --corpus is required");
    const auto corpus = synth::corpus_spec_from_json(read_json_file(o.train.corpus));

    auto student = load_checkpoint<float>(o.student).model;
    require_match(student.config(), corpus, "distill (student)");
    const auto data = train::make_examples(synth::generate(corpus), train::label_spec(student.config()));
    const auto tc = train_config(o.train);
    distill::DistillConfig dc;
    dc.stage = o.stage;
    dc.alpha = o.alpha;
    dc.beta = o.beta;
    dc.tau_d = o.tau;
    dc.linear_decay = o.linear_decay;
    dc.reinit_head = !o.keep_head;
    dc.validate();

    auto progress = [](std::size_t s, double l) {
        if ((s + 1) % 50 == 0) std::cerr << "step " << (s + 1) << " loss " << l << "\n";
    };
    json j;
    j["command"] = "distill";
    j["stage"] = o.stage;
    j["seed"] = o.train.seed;
    j["corpus"] = to_json(corpus);
    j["distill"] = {{"alpha", dc.alpha}, {"beta", dc.beta}, {"tau_d", dc.tau_d}, {"linear_decay", dc.linear_decay},
                    {"reinit_head", dc.reinit_head}};
    train::TrainLog log;
    if (o.stage == 1) {
        const auto teacher = load_checkpoint<float>(o.teacher).model;
        require_match(teacher.config(), corpus, "distill (teacher)");
        if (teacher.config().num_levels != student.config().num_levels)
            throw Error("distill: teacher and student have different pyramid depths");
        auto projector = distill::FeatureProjector<float>::create(
            std::vector<std::size_t>(student.config().num_levels, student.config().neck_channels),
            std::vector<std::size_t>(teacher.config().num_levels, teacher.config().neck_channels), o.train.seed);
        log = distill::stage1_fit(student, teacher, projector, data, tc, dc, progress);
        j["teacher_checksum"] = hex64(parameter_checksum(teacher));
    } else {
        if (!o.teacher.empty()) std::cerr << "note: stage 2 distills from the student itself; --teacher is ignored\n";
        const auto frozen_before = distill::frozen_checksum(student);
        log = distill::stage2_fit(student, data, tc, dc, progress);
        distill::unfreeze_all(student);
        j["frozen_checksum_before"] = hex64(frozen_before);
        j["frozen_checksum_after"] = hex64(distill::frozen_checksum(student));
    }
    j["loss"] = loss_summary(log.losses);
    j["mean_error_px"] = train::mean_keypoint_error(student, data);
    j["checkpoint_fnv1a"] = hex64(save_model(student, o.train.out, {{"seed", o.train.seed}, {"stage", o.stage}}));
    emit(j, o.train.report);
    if (!o.train.report.empty())
        std::cout << "distill stage " << o.stage << ": loss " << log.losses.front() << " -> " << log.losses.back() << "\n";
    return 0;
}

// ---- conversion and evaluation -----------------------------------------------------

struct DataOpts {
    std::string mapping, in, out, pred, gt, schema, schema_file, format = "table";
    std::uint64_t seed = 0;
};

int cmd_convert(const DataOpts& o)
{
    const auto reg = registry_with(o.schema_file);
    const auto mapping = dataset::load_mapping(o.mapping, &reg);
    const auto src = dataset::load_coco(o.in, reg, o.schema.empty() ? mapping.source : o.schema);
    const auto out = dataset::convert(src, mapping);
    dataset::write_json_file(o.out, dataset::coco_to_json(out));
    std::size_t labeled = 0;
    for (const auto& inst : out.instances) labeled += inst.pose.num_labeled();
    std::cout << "convert: " << out.instances.size() << " instances " << mapping.source << " -> " << mapping.target
              << ", " << labeled << " labeled keypoints\n";
    return 0;
}

int cmd_eval(const DataOpts& o)
{
    const auto reg = registry_with(o.schema_file);
    const auto gt = dataset::load_coco(o.gt, reg, o.schema);
    std::vector<dataset::Detection> preds;
    try {
        preds = dataset::results_from_json(read_json_file(o.pred));
    } catch (const Error& e) {
        const std::string msg = e.what();
        throw Error(msg.find(o.pred) == std::string::npos ? o.pred + ": " + msg : msg);
    }
    if (gt.instances.empty()) throw Error(o.gt + ": no annotations");
    const auto& schema = reg.at(gt.instances.front().schema);
    eval::EvalParams params;
    if (!gt.images.empty()) {
        std::vector<std::int64_t> ids;
        for (const auto& im : gt.images) ids.push_back(im.at("id").get<std::int64_t>());
        params.image_ids = ids;
    }
    const auto gts = eval::ground_truth_from(gt.instances);
    auto report = eval::per_part_report(preds, gts, schema, params);
    if (auto m = eval::matched_mpjpe(preds, gts, schema.sigmas())) {
        report.mpjpe = *m;
        report.mpjpe_units = "input units";
    }
    json j = eval::report_to_json(report);
    j["schema"] = schema.name();
    j["seed"] = o.seed;
    if (!o.out.empty()) dataset::write_json_file(o.out, j);
    if (o.format == "json")
        std::cout << j.dump(1) << "\n";
    else
        std::cout << eval::report_table(report);
    return 0;
}

// ---- pipeline ----------------------------------------------------------------------

struct PipeOpts {
    std::string trace, config, out, write_trace, checkpoint;
    std::size_t frames = 60, people = 3, keypoints = 17, width = 320, height = 240;
    double noise = 0.0;
    std::uint64_t seed = 0;
};

pipeline::PipelineConfig pipeline_config(const std::string& path)
{
    return path.empty() ? pipeline::PipelineConfig{} : pipeline::pipeline_config_from_json(read_json_file(path));
}

int cmd_pipeline_sim(const PipeOpts& o)
{
    if (o.out.empty()) throw UsageError("pipeline-sim: --out is required");
    const pipeline::Trace trace = o.trace.empty()
                                      ? pipeline::synthetic_trace(o.frames, o.people, o.keypoints, o.seed, o.width, o.height)
                                      : pipeline::trace_from_json(read_json_file(o.trace));
    if (!o.write_trace.empty()) dataset::write_json_file(o.write_trace, pipeline::trace_to_json(trace));
    const auto cfg = pipeline_config(o.config);
    auto [frames, sum] = pipeline::simulate(trace, cfg, o.noise, o.seed);
    json j;
    j["command"] = "pipeline-sim";
    j["seed"] = o.seed;
    j["noise_px"] = o.noise;
    j["config"] = pipeline::to_json(cfg);
    j["summary"] = {{"frames", sum.frames},
                    {"detector_calls", sum.detector_calls},
                    {"outputs", sum.outputs},
                    {"mean_error_px", sum.mean_error_px}};
    j["frames"] = frames;
    dataset::write_json_file(o.out, j);
    std::cout << "pipeline-sim: " << sum.frames << " frames, " << sum.detector_calls << " detector calls, "
              << sum.outputs << " poses, mean error " << sum.mean_error_px << " px\n";
    return 0;
}

/// Renders each ground-truth pose of a trace frame into an image so the model sees
/// plausible input.
Tensor<float> render_frame(const pipeline::TraceFrame& f, std::size_t k, std::size_t w, std::size_t h)
{
    Tensor<float> img({3, h, w});
    std::vector<synth::BlobStyle> styles(k);
    for (std::size_t i = 0; i < k; ++i) styles[i] = {synth::palette(i, k), 3.0};
    for (const auto& p : f.poses) {
        const auto layer = synth::render(p, styles, w, h);
        for (std::size_t i = 0; i < img.size(); ++i) img[i] += layer[i];
    }
    return img;
}

int cmd_bench(const PipeOpts& o)
{
    ModelConfig mc;
    Model<float> model;
    if (!o.checkpoint.empty()) {
        model = load_checkpoint<float>(o.checkpoint).model;
        mc = model.config();
    } else {
        mc.num_keypoints = o.keypoints;
        model = Model<float>::build(mc, o.seed);
    }
    auto cfg = pipeline_config(o.config);
    cfg.input_w = mc.input_w;
    cfg.input_h = mc.input_h;
    const auto trace = pipeline::synthetic_trace(o.frames, o.people, mc.num_keypoints, o.seed, o.width, o.height);

    pipeline::Pipeline pipe(cfg);
    pipeline::StageTimes times;
    pipe.set_timer(&times);
    const auto estimator = pipeline::model_estimator(model);
    std::uint64_t out_hash = fnv1a(nullptr, 0);
    std::size_t outputs = 0;
    double render_us = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t f = 0; f < trace.frames.size(); ++f) {
        const auto r0 = std::chrono::steady_clock::now();
        const auto img = render_frame(trace.frames[f], mc.num_keypoints, o.width, o.height);
        render_us += std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - r0).count();
        const auto results =
            pipe.step(f, img, [&](const Tensor<float>&) { return trace.frames[f].detections; }, estimator);
        for (const auto& r : results) {
            for (const auto& c : r.pose.coords) {
                out_hash = fnv1a(&c.x, sizeof c.x, out_hash);
                out_hash = fnv1a(&c.y, sizeof c.y, out_hash);
            }
            out_hash = fnv1a(&r.score, sizeof r.score, out_hash);
        }
        outputs += results.size();
    }
    const double total_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();

    json timings;
    timings["command"] = "bench";
    timings["seed"] = o.seed;
    timings["frames"] = trace.frames.size();
    json stages = json::object();
    for (const auto& [name, us] : times.us) {
        const auto calls = times.calls.at(name);
        stages[name] = {{"total_us", us}, {"calls", calls}, {"mean_us", calls ? us / double(calls) : 0.0}};
    }
    timings["stages_us"] = stages;
    timings["render_us"] = render_us;
    timings["total_us"] = total_us - render_us;
    timings["per_frame_us"] = (total_us - render_us) / double(std::max<std::size_t>(1, trace.frames.size()));
    std::cout << timings.dump(1) << "\n";

    if (!o.out.empty()) {
        json manifest;
        manifest["command"] = "bench";
        manifest["seed"] = o.seed;
        manifest["model"] = to_json(mc);
        manifest["pipeline"] = pipeline::to_json(cfg);
        manifest["frames"] = trace.frames.size();
        manifest["detector_calls"] = pipe.state().detector_calls;
        manifest["outputs"] = outputs;
        manifest["output_checksum"] = hex64(out_hash);
        manifest["stages"] = json::array();
        for (const auto& kv : times.us) manifest["stages"].push_back(kv.first);
        dataset::write_json_file(o.out, manifest);
    }
    return 0;
}

// ---- overlay -----------------------------------------------------------------------

struct OverlayOpts {
    std::string gt, pred, out, schema, schema_file;
    std::int64_t image_id = -1;
    double width = 0.0, height = 0.0;
    std::uint64_t seed = 0;
};

int cmd_plot_overlay(const OverlayOpts& o)
{
    if (o.out.empty()) throw UsageError("plot-overlay: --out is required");
    const auto reg = registry_with(o.schema_file);
    const auto gt = dataset::load_coco(o.gt, reg, o.schema);
    if (gt.instances.empty()) throw Error(o.gt + ": no annotations");
    const std::int64_t id = o.image_id >= 0 ? o.image_id : gt.instances.front().image_id;
    const auto& schema = reg.at(gt.instances.front().schema);

    OverlayLayer truth{{}, "#2ca02c", "ground truth"};
    double maxx = 1.0, maxy = 1.0;
    auto grow = [&](const Pose& p) {
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p.labeled(i)) {
                maxx = std::max(maxx, p.coords[i].x);
                maxy = std::max(maxy, p.coords[i].y);
            }
    };
    for (const auto& inst : gt.instances)
        if (inst.image_id == id) {
            truth.poses.push_back(inst.pose);
            grow(inst.pose);
        }
    if (truth.poses.empty()) throw Error(o.gt + ": image " + std::to_string(id) + " has no annotations");
    std::vector<OverlayLayer> layers{truth};
    if (!o.pred.empty()) {
        OverlayLayer pl{{}, "#d62728", "prediction"};
        for (const auto& d : dataset::results_from_json(read_json_file(o.pred)))
            if (d.image_id == id) {
                pl.poses.push_back(d.pose);
                grow(d.pose);
            }
        layers.push_back(std::move(pl));
    }
    double w = o.width, h = o.height;
    for (const auto& im : gt.images)
        if (im.value("id", std::int64_t{-1}) == id) {
            if (w <= 0.0) w = im.value("width", 0.0);
            if (h <= 0.0) h = im.value("height", 0.0);
        }
    if (w <= 0.0) w = std::ceil(maxx + 10.0);
    if (h <= 0.0) h = std::ceil(maxy + 10.0);
    write_text(o.out, overlay_svg(w, h, schema, layers, "image " + std::to_string(id)));
    std::cout << "plot-overlay: image " << id << ", " << truth.poses.size() << " ground-truth poses\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"posekit: whole-body pose estimation toolkit"};
    // "--h" is the patch height, so help is long-form only.
    app.set_help_flag("--help", "print this help and exit");
    app.require_subcommand(1);

    CodecOpts codec;
    auto* c = app.add_subcommand("codec", "SimCC label encode/decode demos");
    c->require_subcommand(1);
    auto add_codec_common = [&](CLI::App* s) {
        s->add_option("--w", codec.w, "patch width in px")->capture_default_str();
        s->add_option("--h", codec.h, "patch height in px")->capture_default_str();
        s->add_option("--k", codec.k, "split ratio (bins per px)")->capture_default_str();
        s->add_option("--seed", codec.seed, "random seed")->capture_default_str();
        s->add_option("--out", codec.out, "output JSON path (default: stdout)");
    };
    auto* c_enc = c->add_subcommand("encode", "label vectors for one point");
    add_codec_common(c_enc);
    c_enc->add_option("--x", codec.x, "x coordinate")->required();
    c_enc->add_option("--y", codec.y, "y coordinate")->required();
    auto* c_dec = c->add_subcommand("decode", "decode label vectors written by encode");
    add_codec_common(c_dec);
    c_dec->add_option("--in", codec.in, "labels JSON")->required();
    auto* c_rt = c->add_subcommand("roundtrip", "encode/decode random points and report the worst error");
    add_codec_common(c_rt);
    c_rt->add_option("--n", codec.n, "number of points")->capture_default_str();

    TrainOpts toy;
    auto add_train = [](CLI::App* s, TrainOpts& t) {
        s->add_option("--corpus", t.corpus, "corpus spec JSON (default: memorization corpus from the flags)");
        s->add_option("--steps", t.steps, "optimizer steps")->capture_default_str();
        s->add_option("--batch", t.batch, "batch size")->capture_default_str();
        s->add_option("--lr", t.lr, "learning rate")->capture_default_str();
        s->add_option("--clip", t.clip, "gradient clip norm (0 disables)")->capture_default_str();
        s->add_option("--optimizer", t.optimizer, "sgd or adamw")->capture_default_str();
        s->add_option("--schedule", t.schedule, "cosine or constant")->capture_default_str();
        s->add_option("--seed", t.seed, "random seed")->capture_default_str();
        s->add_option("--out", t.out, "checkpoint output path");
        s->add_option("--report", t.report, "summary JSON path (default: stdout)");
    };
    auto* t = app.add_subcommand("train-toy", "overfit a small model on a synthetic corpus");
    add_train(t, toy);
    t->add_option("--keypoints", toy.k, "keypoints per instance")->capture_default_str();
    t->add_option("--width", toy.w, "input width")->capture_default_str();
    t->add_option("--height", toy.h, "input height")->capture_default_str();
    t->add_option("--n", toy.n, "corpus size")->capture_default_str();
    t->add_option("--levels", toy.levels, "pyramid levels fed to the head")->capture_default_str();
    t->add_option("--model-config", toy.model_config, "model config JSON (overrides the size flags)");

    DistillOpts dist;
    dist.train.steps = 200;
    dist.train.lr = 0.01;
    auto* d = app.add_subcommand("distill", "two-stage distillation on a synthetic corpus");
    add_train(d, dist.train);
    d->add_option("--stage", dist.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
    d->add_option("--teacher", dist.teacher, "teacher checkpoint (stage 1)");
    d->add_option("--student", dist.student, "student checkpoint");
    d->add_option("--alpha", dist.alpha, "logit term weight")->capture_default_str();
    d->add_option("--beta", dist.beta, "feature term weight")->capture_default_str();
    d->add_option("--tau", dist.tau, "distillation temperature")->capture_default_str();
    d->add_flag("--linear-decay", dist.linear_decay, "decay the distill weights linearly to zero");
    d->add_flag("--keep-head", dist.keep_head, "stage 2 starts from the stage-1 head");

    DataOpts data;
    auto* cv = app.add_subcommand("convert", "remap COCO-style annotations to the whole-body layout");
    cv->add_option("--mapping", data.mapping, "mapping JSON")->required();
    cv->add_option("--in", data.in, "source annotations")->required();
    cv->add_option("--out", data.out, "converted annotations")->required();
    cv->add_option("--schema", data.schema, "source schema name (default: from the mapping)");
    cv->add_option("--schema-file", data.schema_file, "extra schema definition JSON");
    cv->add_option("--seed", data.seed, "random seed (unused; accepted for uniformity)");
    auto* ev = app.add_subcommand("eval", "per-part AP/AR of predictions against annotations");
    ev->add_option("--pred", data.pred, "predictions (COCO results JSON)")->required();
    ev->add_option("--gt", data.gt, "ground truth annotations")->required();
    ev->add_option("--out", data.out, "report JSON path");
    ev->add_option("--format", data.format, "stdout format: table or json")
        ->check(CLI::IsMember({"table", "json"}))
        ->capture_default_str();
    ev->add_option("--schema", data.schema, "schema name (default: by keypoint count)");
    ev->add_option("--schema-file", data.schema_file, "extra schema definition JSON");
    ev->add_option("--seed", data.seed, "random seed (unused; accepted for uniformity)");

    PipeOpts pipe;
    auto* ps = app.add_subcommand("pipeline-sim", "run the tracking pipeline over a detection trace");
    ps->add_option("--trace", pipe.trace, "trace JSON (default: generate one)");
    ps->add_option("--config", pipe.config, "pipeline config JSON");
    ps->add_option("--out", pipe.out, "results JSON");
    ps->add_option("--write-trace", pipe.write_trace, "also save the trace that was used");
    ps->add_option("--frames", pipe.frames, "generated trace length")->capture_default_str();
    ps->add_option("--people", pipe.people, "generated instances per frame")->capture_default_str();
    ps->add_option("--keypoints", pipe.keypoints, "generated keypoints per instance")->capture_default_str();
    ps->add_option("--noise", pipe.noise, "oracle jitter in px")->capture_default_str();
    ps->add_option("--seed", pipe.seed, "random seed")->capture_default_str();
    PipeOpts bench;
    bench.frames = 20;
    bench.people = 2;
    auto* b = app.add_subcommand("bench", "per-stage pipeline latency with a model estimator");
    b->add_option("--checkpoint", bench.checkpoint, "model checkpoint (default: untrained model)");
    b->add_option("--config", bench.config, "pipeline config JSON");
    b->add_option("--out", bench.out, "deterministic run manifest JSON");
    b->add_option("--frames", bench.frames, "frames to run")->capture_default_str();
    b->add_option("--people", bench.people, "instances per frame")->capture_default_str();
    b->add_option("--keypoints", bench.keypoints, "keypoints of the untrained model")->capture_default_str();
    b->add_option("--width", bench.width, "frame width")->capture_default_str();
    b->add_option("--height", bench.height, "frame height")->capture_default_str();
    b->add_option("--seed", bench.seed, "random seed")->capture_default_str();

    OverlayOpts ov;
    auto* po = app.add_subcommand("plot-overlay", "SVG skeleton overlay of annotations and predictions");
    po->add_option("--gt", ov.gt, "annotations")->required();
    po->add_option("--pred", ov.pred, "predictions (COCO results JSON)");
    po->add_option("--image-id", ov.image_id, "image to draw (default: first annotated)");
    po->add_option("--out", ov.out, "SVG output path");
    po->add_option("--width", ov.width, "canvas width (default: from the image entry)");
    po->add_option("--height", ov.height, "canvas height");
    po->add_option("--schema", ov.schema, "schema name (default: by keypoint count)");
    po->add_option("--schema-file", ov.schema_file, "extra schema definition JSON");
    po->add_option("--seed", ov.seed, "random seed (unused; accepted for uniformity)");

    if (argc <= 1) {
        std::cerr << app.help();
        return 1;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (c_enc->parsed()) return cmd_codec_encode(codec);
        if (c_dec->parsed()) return cmd_codec_decode(codec);
        if (c_rt->parsed()) return cmd_codec_roundtrip(codec);
        if (t->parsed()) return cmd_train_toy(toy);
        if (d->parsed()) return cmd_distill(dist);
        if (cv->parsed()) return cmd_convert(data);
        if (ev->parsed()) return cmd_eval(data);
        if (ps->parsed()) return cmd_pipeline_sim(pipe);
        if (b->parsed()) return cmd_bench(bench);
        if (po->parsed()) return cmd_plot_overlay(ov);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::cerr << app.help();
    return 1;
}
