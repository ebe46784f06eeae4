#include "pkit/cli.hpp"

#include "pkit/blob_io.hpp"
#include "pkit/checks.hpp"
#include "pkit/fkm_io.hpp"
#include "pkit/metrics.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace pkit::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

Projection parse_projection(const std::string& name) {
    if (name == "perspective") return Projection::Perspective;
    if (name == "weak-perspective" || name == "weak") return Projection::WeakPerspective;
    throw std::invalid_argument("unknown projection '" + name + "' (expected perspective or weak-perspective)");
}

std::string projection_name(Projection p) { return p == Projection::Perspective ? "perspective" : "weak-perspective"; }

Prediction parse_prediction(const std::string& name) {
    if (name == "x0") return Prediction::X0;
    if (name == "eps" || name == "epsilon") return Prediction::Epsilon;
    throw std::invalid_argument("unknown prediction '" + name + "' (expected x0 or epsilon)");
}

}  // namespace

std::pair<int, int> parse_size(const std::string& text) {
    const auto x = text.find_first_of("xX");
    if (x == std::string::npos) throw std::invalid_argument("size '" + text + "' must look like WxH");
    try {
        size_t used_w = 0, used_h = 0;
        const int w = std::stoi(text.substr(0, x), &used_w);
        const int h = std::stoi(text.substr(x + 1), &used_h);
        if (used_w != x || used_h != text.size() - x - 1 || w < 1 || h < 1) throw std::invalid_argument("");
        return {w, h};
    } catch (const std::exception&) {
        throw std::invalid_argument("size '" + text + "' must look like WxH with positive integers");
    }
}

void PipelineConfig::validate() const {
    if (model.empty()) throw std::invalid_argument("config: model must name an asset or 'mini'");
    if (n_per_label < 1) throw std::invalid_argument("config: n_per_label must be >= 1");
    if (frames < 1) throw std::invalid_argument("config: frames must be >= 1");
    train.validate();
    if (arch.latent < 1 || arch.layers < 1 || arch.heads < 1 || arch.ff_dim < 1 || arch.latent % arch.heads != 0) {
        throw std::invalid_argument("config: arch needs positive sizes with latent divisible by heads");
    }
    if (sample.count < 1) throw std::invalid_argument("config: sample count must be >= 1");
    if (!(sample.guidance_scale >= 0.0)) throw std::invalid_argument("config: guidance_scale must be >= 0");
    if (sample.smooth_window < 1 || sample.smooth_window % 2 == 0) {
        throw std::invalid_argument("config: sample smooth_window must be odd");
    }
    if (width < 1 || height < 1) throw std::invalid_argument("config: image size must be positive");
    camera.validate();
    (void)parse_views(views, camera);
}

PipelineConfig pipeline_config_from_json(const json& doc, PipelineConfig c) {
    if (!doc.is_object()) throw std::invalid_argument("config: top level must be an object");
    c.model = doc.value("model", c.model);
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("out")) c.out = doc.at("out").get<std::string>();
    if (doc.contains("channel")) c.channel = parse_channel(doc.at("channel").get<std::string>());
    if (doc.contains("synth")) {
        const json& s = doc.at("synth");
        c.n_per_label = s.value("n_per_label", c.n_per_label);
        c.frames = s.value("frames", c.frames);
        c.labels = s.value("labels", c.labels);
    }
    if (doc.contains("train")) c.train = train_config_from_json(doc.at("train"), c.train);
    if (doc.contains("arch")) {
        const json& a = doc.at("arch");
        c.arch.latent = a.value("latent", c.arch.latent);
        c.arch.layers = a.value("layers", c.arch.layers);
        c.arch.heads = a.value("heads", c.arch.heads);
        c.arch.ff_dim = a.value("ff_dim", c.arch.ff_dim);
        if (a.contains("prediction")) c.arch.prediction = parse_prediction(a.at("prediction").get<std::string>());
    }
    if (doc.contains("sample")) {
        const json& s = doc.at("sample");
        c.sample.count = s.value("count", c.sample.count);
        c.sample.guidance_scale = s.value("guidance_scale", c.sample.guidance_scale);
        c.sample.smooth_output = s.value("smooth_output", c.sample.smooth_output);
        c.sample.smooth_window = s.value("smooth_window", c.sample.smooth_window);
        c.condition = s.value("condition", c.condition);
        c.frames = s.value("frames", c.frames);
    }
    if (doc.contains("render")) {
        const json& r = doc.at("render");
        c.views = r.value("views", c.views);
        if (r.contains("size")) std::tie(c.width, c.height) = parse_size(r.at("size").get<std::string>());
        c.threads = r.value("threads", c.threads);
        c.camera.distance = r.value("distance", c.camera.distance);
        c.camera.fov_y = r.value("fov_y", c.camera.fov_y);
        if (r.contains("projection")) c.camera.mode = parse_projection(r.at("projection").get<std::string>());
    }
    return c;
}

json to_json(const PipelineConfig& c) {
    return {{"model", c.model},
            {"seed", c.seed},
            {"out", c.out.string()},
            {"channel", to_string(c.channel)},
            {"synth", {{"n_per_label", c.n_per_label}, {"frames", c.frames}, {"labels", c.labels}}},
            {"train", to_json(c.train)},
            {"arch",
             {{"latent", c.arch.latent},
              {"layers", c.arch.layers},
              {"heads", c.arch.heads},
              {"ff_dim", c.arch.ff_dim},
              {"prediction", c.arch.prediction == Prediction::X0 ? "x0" : "epsilon"}}},
            {"sample",
             {{"count", c.sample.count},
              {"guidance_scale", c.sample.guidance_scale},
              {"smooth_output", c.sample.smooth_output},
              {"smooth_window", c.sample.smooth_window},
              {"condition", c.condition}}},
            {"render",
             {{"views", c.views},
              {"size", std::to_string(c.width) + "x" + std::to_string(c.height)},
              {"threads", c.threads},
              {"distance", c.camera.distance},
              {"fov_y", c.camera.fov_y},
              {"projection", projection_name(c.camera.mode)}}}};
}

namespace {

// Raw flag values; applied on top of the config file only when given.
struct Flags {
    std::string config, out, channel, data, checkpoint, condition, pose, pose_ref, expr, expr_ref, shape, model, views,
        size, projection, prediction;
    uint64_t seed = 0;
    int n_per_label = 0, frames = 0, steps = 0, batch = 0, max_frames = 0, diffusion_steps = 0, smooth_window = 0,
        latent = 0, layers = 0, heads = 0, ff_dim = 0, count = 0, log_every = 0;
    unsigned threads = 0;
    double lr = 0, lambda_vel = 0, cfg_drop = 0, guidance = 0, distance = 0, fov = 0;
    bool smooth = false;
    bool raw = false;
    std::vector<std::string> labels;
};

bool given(const CLI::App* app, const std::string& flag) {
    try {
        return app->get_option(flag)->count() > 0;
    } catch (const CLI::OptionNotFound&) {
        return false;
    }
}

PipelineConfig resolve(const CLI::App* app, const Flags& f) {
    PipelineConfig c;
    if (!f.config.empty()) c = pipeline_config_from_json(json::parse(read_text_file(f.config)), c);
    const auto has = [&](const char* flag) { return given(app, flag); };
    if (has("--seed")) c.seed = f.seed;
    if (has("--out")) c.out = f.out;
    if (has("--channel")) c.channel = parse_channel(f.channel);
    if (has("--model")) c.model = f.model;
    if (has("--n-per-label")) c.n_per_label = f.n_per_label;
    if (has("--frames")) c.frames = f.frames;
    if (has("--label")) c.labels = f.labels;
    if (has("--steps")) c.train.steps = f.steps;
    if (has("--lr")) c.train.lr = f.lr;
    if (has("--batch")) c.train.batch = f.batch;
    if (has("--lambda-vel")) c.train.lambda_vel = f.lambda_vel;
    if (has("--cfg-drop")) c.train.cfg_drop_prob = f.cfg_drop;
    if (has("--max-frames")) c.train.max_frames = f.max_frames;
    if (has("--diffusion-steps")) c.train.diffusion_steps = f.diffusion_steps;
    if (has("--smooth-window")) {
        c.train.smooth_window = f.smooth_window;
        c.sample.smooth_window = f.smooth_window;
    }
    if (has("--log-every")) c.train.log_every = f.log_every;
    if (has("--raw")) c.train.normalize = false;
    if (has("--latent")) c.arch.latent = f.latent;
    if (has("--layers")) c.arch.layers = f.layers;
    if (has("--heads")) c.arch.heads = f.heads;
    if (has("--ff-dim")) c.arch.ff_dim = f.ff_dim;
    if (has("--prediction")) c.arch.prediction = parse_prediction(f.prediction);
    if (has("--count")) c.sample.count = f.count;
    if (has("--guidance")) c.sample.guidance_scale = f.guidance;
    if (has("--smooth")) c.sample.smooth_output = f.smooth;
    if (has("--condition")) c.condition = f.condition;
    if (has("--views")) c.views = f.views;
    if (has("--size")) std::tie(c.width, c.height) = parse_size(f.size);
    if (has("--threads")) c.threads = f.threads;
    if (has("--distance")) c.camera.distance = f.distance;
    if (has("--fov")) c.camera.fov_y = f.fov;
    if (has("--projection")) c.camera.mode = parse_projection(f.projection);
    c.train.seed = c.seed;
    c.validate();
    return c;
}

void emit(std::ostream& out, json summary) {
    out << summary.dump() << std::endl;
}

std::string checkpoint_name(Channel channel) { return channel == Channel::Pose ? "motion_dm.json" : "emotion_dm.json"; }

json cmd_synth(const PipelineConfig& c) {
    const std::vector<MotionPattern> all = default_patterns(c.channel);
    std::vector<MotionPattern> chosen;
    if (c.labels.empty()) {
        chosen = all;
    } else {
        for (const std::string& l : c.labels) chosen.push_back(find_pattern(all, l));
    }
    const Dataset data = synth_dataset(chosen, c.n_per_label, c.frames, c.seed);
    save_dataset(data, c.out);
    std::vector<std::string> labels;
    for (const MotionPattern& p : chosen) labels.push_back(p.label);
    return {{"items", data.size()}, {"labels", labels}, {"channel", to_string(c.channel)}, {"dataset", c.out.string()}};
}

json cmd_train(const PipelineConfig& c, const fs::path& data_dir, std::ostream& err) {
    const Dataset data = load_dataset(data_dir);
    if (data.empty()) throw std::runtime_error("dataset " + data_dir.string() + " is empty");
    if (data.front().seq.channel != c.channel) {
        throw std::runtime_error("dataset channel is " + to_string(data.front().seq.channel) + " but --channel is " +
                                 to_string(c.channel));
    }
    TrainConfig tc = c.train;
    if (tc.log_every > 0) err << "training " << (c.channel == Channel::Pose ? "MotionDM" : "EmotionDM") << " on "
                              << data.size() << " sequences\n";
    const TrainResult r = train(data, tc, c.arch);
    fs::create_directories(c.out);
    const fs::path ckpt = c.out / checkpoint_name(c.channel);
    save_checkpoint(r.net, ckpt);
    std::ostringstream curve;
    curve << "step,loss\n";
    for (size_t i = 0; i < r.loss_curve.size(); ++i) curve << i + 1 << "," << r.loss_curve[i] << "\n";
    const fs::path curve_path = c.out / (c.channel == Channel::Pose ? "motion_loss.csv" : "emotion_loss.csv");
    write_text_file(curve_path, curve.str());
    return {{"checkpoint", ckpt.string()},
            {"loss_curve", curve_path.string()},
            {"input_dim", r.net.config().input_dim},
            {"param_count", r.net.param_count()},
            {"steps", tc.steps},
            {"final_loss", r.loss_curve.empty() ? 0.0 : r.loss_curve.back()}};
}

json cmd_sample(const PipelineConfig& c, const fs::path& ckpt) {
    const DenoiserNet net = load_checkpoint(ckpt);
    const NoiseSchedule sched = cosine_schedule(c.train.diffusion_steps);
    SampleConfig sc = c.sample;
    sc.frames = c.frames;
    std::mt19937_64 rng(c.seed);
    const std::vector<ad::Matrix> seqs = sample(net, c.condition, sc, sched, rng);
    fs::create_directories(c.out);
    const Channel channel = net.config().input_dim == kPoseDim ? Channel::Pose : Channel::Expr;
    std::vector<std::string> files;
    for (size_t i = 0; i < seqs.size(); ++i) {
        FlameSequence s;
        s.channel = channel;
        s.frames = seqs[i];
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%03zu.json", i);
        save_fseq(s, c.out / name);
        files.push_back((c.out / name).string());
    }
    return {{"files", files}, {"condition", c.condition}, {"frames", sc.frames}, {"guidance_scale", sc.guidance_scale}};
}

Eigen::VectorXd load_shape(const fs::path& path, int n_shape) {
    const json doc = json::parse(read_text_file(path));
    const json& values = doc.is_object() ? doc.at("shape") : doc;
    std::vector<double> v = values.get<std::vector<double>>();
    if (static_cast<int>(v.size()) > n_shape) {
        throw std::runtime_error("shape file " + path.string() + " has " + std::to_string(v.size()) +
                                 " values but the model has " + std::to_string(n_shape));
    }
    Eigen::VectorXd shape = Eigen::VectorXd::Zero(n_shape);
    for (size_t i = 0; i < v.size(); ++i) shape[static_cast<Eigen::Index>(i)] = v[i];
    return shape;
}

json cmd_render(const PipelineConfig& c, const Flags& f) {
    const FlameModel model = load_model(c.model);
    std::optional<FlameSequence> pose, expr;
    if (!f.pose.empty()) pose = load_fseq(f.pose);
    if (!f.expr.empty()) expr = load_fseq(f.expr);
    if (pose && pose->channel != Channel::Pose) throw std::runtime_error(f.pose + " is not a pose sequence");
    if (expr && expr->channel != Channel::Expr) throw std::runtime_error(f.expr + " is not an expression sequence");
    const Eigen::VectorXd shape = f.shape.empty() ? Eigen::VectorXd::Zero(model.n_shape()) : load_shape(f.shape, model.n_shape());
    const std::vector<FlameParams> frames = assemble_frames(model, shape, pose ? &*pose : nullptr, expr ? &*expr : nullptr);
    const std::vector<CameraPose> cams = parse_views(c.views, c.camera);
    const FrameGrid grid = render_sequence(model, frames, cams, c.width, c.height, c.threads);
    fs::path target = c.out;
    if (target.extension() != ".png") target /= "sprite.png";
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    write_sprite_sheet(grid, target);
    return {{"image", target.string()},
            {"views", cams.size()},
            {"frames", frames.size()},
            {"frame_size", std::to_string(c.width) + "x" + std::to_string(c.height)}};
}

json cmd_metrics(const Flags& f, const fs::path& out, bool out_given, std::ostream& table) {
    if (f.pose.empty() && f.expr.empty()) throw std::invalid_argument("metrics needs --pose and/or --expr");
    std::optional<FlameSequence> pose, pose_ref, expr, expr_ref;
    if (!f.pose.empty()) pose = load_fseq(f.pose);
    if (!f.pose_ref.empty()) pose_ref = load_fseq(f.pose_ref);
    if (!f.expr.empty()) expr = load_fseq(f.expr);
    if (!f.expr_ref.empty()) expr_ref = load_fseq(f.expr_ref);
    const MetricReport report = compute_report(pose ? &*pose : nullptr, pose_ref ? &*pose_ref : nullptr,
                                               expr ? &*expr : nullptr, expr_ref ? &*expr_ref : nullptr);
    table << to_table(report);
    json doc = to_json(report);
    if (out_given) {
        fs::path target = out;
        if (target.extension() != ".json") target /= "metrics.json";
        if (target.has_parent_path()) fs::create_directories(target.parent_path());
        write_text_file(target, doc.dump(2) + "\n");
        doc["report"] = target.string();
    }
    return doc;
}

json cmd_check(uint64_t seed, std::ostream& log, bool& all_passed) {
    int passed = 0, failed = 0;
    const auto results = run_checks(seed, [&](const CheckResult& r) {
        char secs[32];
        std::snprintf(secs, sizeof(secs), "%.2fs", r.seconds);
        log << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " (" << secs << ")\n";
        log.flush();
    });
    json names = json::array();
    for (const CheckResult& r : results) {
        (r.passed ? passed : failed) += 1;
        if (!r.passed) names.push_back(r.name);
    }
    all_passed = failed == 0;
    return {{"passed", passed}, {"failed", failed}, {"failures", names}};
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Text-to-FLAME sequence diffusion, multi-view rendering and attention kernels", "pkit"};
    app.require_subcommand(1);
    Flags f;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON pipeline config; flags override its fields")->check(CLI::ExistingFile);
        sub->add_option("--seed", f.seed, "Random seed");
        sub->add_option("--out", f.out, "Output directory or file");
    };
    const auto sizes = [&](CLI::App* sub) {
        sub->add_option("--model", f.model, "FLAME asset manifest or 'mini'");
        sub->add_option("--views", f.views, "Cameras as 'yaw,pitch,roll;...' in degrees");
        sub->add_option("--size", f.size, "Frame size WxH");
        sub->add_option("--threads", f.threads, "Render threads (0 = all cores)");
        sub->add_option("--distance", f.distance, "Camera distance in meters");
        sub->add_option("--fov", f.fov, "Vertical field of view (radians) or weak-perspective scale");
        sub->add_option("--projection", f.projection, "perspective | weak-perspective");
    };

    CLI::App* synth = app.add_subcommand("synth", "Write a synthetic labeled corpus");
    common(synth);
    synth->add_option("--channel", f.channel, "pose | expr");
    synth->add_option("--n-per-label", f.n_per_label, "Sequences per label");
    synth->add_option("--frames", f.frames, "Frames per sequence");
    synth->add_option("--label", f.labels, "Restrict to these labels (repeatable)");

    CLI::App* train_cmd = app.add_subcommand("train", "Train MotionDM (--channel pose) or EmotionDM (--channel expr)");
    common(train_cmd);
    train_cmd->add_option("--data", f.data, "Dataset directory")->required();
    train_cmd->add_option("--channel", f.channel, "pose | expr")->required();
    train_cmd->add_option("--steps", f.steps, "Optimizer steps");
    train_cmd->add_option("--lr", f.lr, "Learning rate");
    train_cmd->add_option("--batch", f.batch, "Batch size");
    train_cmd->add_option("--lambda-vel", f.lambda_vel, "Velocity loss weight");
    train_cmd->add_option("--cfg-drop", f.cfg_drop, "Probability of training on the null condition");
    train_cmd->add_option("--max-frames", f.max_frames, "Pad/truncate length (0 = longest)");
    train_cmd->add_option("--diffusion-steps", f.diffusion_steps, "Noise schedule length T");
    train_cmd->add_option("--smooth-window", f.smooth_window, "Training data smoothing window (odd)");
    train_cmd->add_option("--latent", f.latent, "Latent width");
    train_cmd->add_option("--layers", f.layers, "Encoder blocks");
    train_cmd->add_option("--heads", f.heads, "Attention heads");
    train_cmd->add_option("--ff-dim", f.ff_dim, "Feed-forward width");
    train_cmd->add_option("--prediction", f.prediction, "x0 | epsilon");
    train_cmd->add_option("--log-every", f.log_every, "Log the loss every n steps");
    train_cmd->add_flag("--raw", f.raw, "Train on unstandardized channels");

    CLI::App* sample_cmd = app.add_subcommand("sample", "Sample sequences from a checkpoint");
    common(sample_cmd);
    sample_cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
    sample_cmd->add_option("--condition", f.condition, "Condition labels joined by ',' or '+'; empty = unconditional");
    sample_cmd->add_option("--frames", f.frames, "Frames per sample");
    sample_cmd->add_option("--count", f.count, "Number of samples");
    sample_cmd->add_option("--guidance", f.guidance, "Classifier-free guidance scale");
    sample_cmd->add_option("--diffusion-steps", f.diffusion_steps, "Noise schedule length T used in training");
    sample_cmd->add_flag("--smooth", f.smooth, "Smooth sampled sequences");
    sample_cmd->add_option("--smooth-window", f.smooth_window, "Smoothing window (odd)");

    CLI::App* render_cmd = app.add_subcommand("render", "Render sequences from several views into a sprite sheet");
    common(render_cmd);
    sizes(render_cmd);
    render_cmd->add_option("--pose", f.pose, "Pose fseq file")->check(CLI::ExistingFile);
    render_cmd->add_option("--expr", f.expr, "Expression fseq file")->check(CLI::ExistingFile);
    render_cmd->add_option("--shape", f.shape, "Shape parameters file {\"shape\": [...]}")->check(CLI::ExistingFile);

    CLI::App* metrics_cmd = app.add_subcommand("metrics", "Variability and FLAME-L1 of sequences");
    common(metrics_cmd);
    metrics_cmd->add_option("--pose", f.pose, "Pose fseq file")->check(CLI::ExistingFile);
    metrics_cmd->add_option("--pose-ref", f.pose_ref, "Reference pose fseq file")->check(CLI::ExistingFile);
    metrics_cmd->add_option("--expr", f.expr, "Expression fseq file")->check(CLI::ExistingFile);
    metrics_cmd->add_option("--expr-ref", f.expr_ref, "Reference expression fseq file")->check(CLI::ExistingFile);

    CLI::App* check_cmd = app.add_subcommand("check", "Run the invariant and oracle suite");
    common(check_cmd);

    std::string command = "pkit";
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << "\n" << "run with --help for usage\n";
        return kExitUsage;
    }

    const CLI::App* active = app.get_subcommands().front();
    command = active->get_name();
    PipelineConfig cfg;
    try {
        cfg = resolve(active, f);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    const auto start = std::chrono::steady_clock::now();
    try {
        json summary;
        bool ok = true;
        if (command == "synth") {
            summary = cmd_synth(cfg);
        } else if (command == "train") {
            summary = cmd_train(cfg, f.data, err);
        } else if (command == "sample") {
            summary = cmd_sample(cfg, f.checkpoint);
        } else if (command == "render") {
            summary = cmd_render(cfg, f);
        } else if (command == "metrics") {
            summary = cmd_metrics(f, cfg.out, given(active, "--out"), err);
        } else {
            summary = cmd_check(cfg.seed, err, ok);
        }
        summary["command"] = command;
        summary["status"] = ok ? "ok" : "failed";
        summary["seed"] = cfg.seed;
        summary["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        emit(out, summary);
        return ok ? kExitOk : kExitRuntime;
    } catch (const std::invalid_argument& e) {
        emit(err, {{"command", command}, {"status", "error"}, {"kind", "invalid_argument"}, {"error", e.what()}});
        return kExitRuntime;
    } catch (const std::exception& e) {
        emit(err, {{"command", command}, {"status", "error"}, {"kind", "runtime"}, {"error", e.what()}});
        return kExitRuntime;
    }
}

}  // namespace pkit::cli
