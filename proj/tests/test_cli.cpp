#include <doctest.h>

#include "helpers.hpp"
#include "pkit/cli.hpp"
#include "pkit/render.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

using namespace pkit;
using nlohmann::json;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
    json summary() const {
        std::istringstream lines(out);
        std::string line, json_line;
        while (std::getline(lines, line)) {
            if (!line.empty() && line.front() == '{') json_line = line;
        }
        return json::parse(json_line);
    }
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "pkit");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("help and usage errors") {
        CHECK(run({"--help"}).code == cli::kExitOk);
        CHECK(run({"--help"}).out.find("train") != std::string::npos);
        CHECK(run({}).code == cli::kExitUsage);
        CHECK(run({"fly"}).code == cli::kExitUsage);
        CHECK(run({"train"}).code == cli::kExitUsage);  // --data and --channel are required
        CHECK(run({"synth", "--channel", "hands"}).code == cli::kExitUsage);
        CHECK(run({"render", "--size", "12by3"}).code == cli::kExitUsage);
        CHECK(run({"synth", "--frames", "0"}).code == cli::kExitUsage);
    }

    TEST_CASE("size parsing and config round trip") {
        CHECK(cli::parse_size("64x32") == std::pair<int, int>{64, 32});
        CHECK_THROWS(cli::parse_size("64"));
        CHECK_THROWS(cli::parse_size("0x3"));
        cli::PipelineConfig c;
        c.seed = 42;
        c.train.steps = 17;
        c.arch.latent = 32;
        c.sample.guidance_scale = 3.0;
        c.width = 80;
        const cli::PipelineConfig back = cli::pipeline_config_from_json(cli::to_json(c));
        CHECK(back.seed == 42);
        CHECK(back.train.steps == 17);
        CHECK(back.arch.latent == 32);
        CHECK(back.sample.guidance_scale == 3.0);
        CHECK(back.width == 80);
        CHECK(cli::to_json(back) == cli::to_json(c));
        CHECK_THROWS(cli::pipeline_config_from_json(json{{"channel", "hands"}}));
    }

    TEST_CASE("runtime failures exit 1 with a JSON error") {
        testing::TempDir dir("cli_err");
        std::ofstream(dir / "broken.json") << "{ not json";
        const Outcome o = run({"sample", "--checkpoint", (dir / "broken.json").string(), "--out", (dir / "s").string()});
        CHECK(o.code == cli::kExitRuntime);
        const json e = json::parse(o.err.substr(o.err.find('{')));
        CHECK(e.at("status") == "error");
        CHECK(e.at("command") == "sample");
    }

    TEST_CASE("config file values are overridden by flags") {
        testing::TempDir dir("cli_cfg");
        std::ofstream(dir / "cfg.json") << json{{"seed", 9}, {"synth", {{"n_per_label", 3}, {"frames", 7}}}}.dump();
        const Outcome a = run({"synth", "--config", (dir / "cfg.json").string(), "--out", (dir / "a").string()});
        REQUIRE(a.code == cli::kExitOk);
        CHECK(a.summary().at("items") == 12);
        CHECK(a.summary().at("seed") == 9);
        const Outcome b = run({"synth", "--config", (dir / "cfg.json").string(), "--n-per-label", "2", "--seed", "5",
                               "--out", (dir / "b").string()});
        REQUIRE(b.code == cli::kExitOk);
        CHECK(b.summary().at("items") == 8);
        CHECK(b.summary().at("seed") == 5);
        const Dataset d = load_dataset(dir / "b");
        CHECK(d.front().seq.length() == 7);
    }

    TEST_CASE("synth, train, sample, render and metrics on tiny settings") {
        testing::TempDir dir("cli_pipe");
        const std::string data = (dir / "data").string();
        Outcome o = run({"synth", "--channel", "pose", "--n-per-label", "2", "--frames", "8", "--seed", "3", "--out", data});
        REQUIRE(o.code == cli::kExitOk);
        CHECK(o.summary().at("status") == "ok");
        CHECK(o.summary().at("items") == 8);

        o = run({"train", "--data", data, "--channel", "pose", "--steps", "5", "--batch", "4", "--diffusion-steps", "20",
                 "--latent", "16", "--heads", "2", "--ff-dim", "16", "--out", (dir / "ckpt").string()});
        REQUIRE(o.code == cli::kExitOk);
        const json t = o.summary();
        CHECK(t.at("steps") == 5);
        CHECK(t.at("input_dim") == kPoseDim);
        CHECK(std::filesystem::exists(dir / "ckpt" / "motion_dm.json"));
        CHECK(std::filesystem::exists(dir / "ckpt" / "motion_loss.csv"));

        CHECK(run({"train", "--data", data, "--channel", "expr", "--steps", "1", "--out", (dir / "x").string()}).code ==
              cli::kExitRuntime);

        o = run({"sample", "--checkpoint", (dir / "ckpt" / "motion_dm.json").string(), "--condition", "nodding",
                 "--frames", "6", "--count", "2", "--diffusion-steps", "20", "--out", (dir / "samples").string()});
        REQUIRE(o.code == cli::kExitOk);
        REQUIRE(o.summary().at("files").size() == 2);
        const FlameSequence s = load_fseq(dir / "samples" / "sample_000.json");
        CHECK(s.length() == 6);
        CHECK(s.frames.allFinite());

        CHECK(run({"sample", "--checkpoint", (dir / "ckpt" / "motion_dm.json").string(), "--condition", "juggling",
                   "--diffusion-steps", "20", "--out", (dir / "bad").string()})
                  .code == cli::kExitRuntime);

        const std::string png = (dir / "sheet.png").string();
        o = run({"render", "--pose", (dir / "samples" / "sample_000.json").string(), "--views", "0,0,0;45,0,0", "--size",
                 "32x24", "--out", png});
        REQUIRE(o.code == cli::kExitOk);
        CHECK(o.summary().at("frames") == 6);
        CHECK(o.summary().at("views") == 2);
        const Image sheet = read_png(png);
        CHECK(sheet.width == 6 * 32);
        CHECK(sheet.height == 2 * 24);

        o = run({"metrics", "--pose", (dir / "samples" / "sample_000.json").string(), "--pose-ref",
                 (dir / "samples" / "sample_001.json").string(), "--out", (dir / "m").string()});
        REQUIRE(o.code == cli::kExitOk);
        CHECK(o.err.find("variability") != std::string::npos);
        const json m = json::parse(std::ifstream(dir / "m" / "metrics.json"));
        CHECK(m.at("flame_l1_pose").get<double>() > 0.0);
    }

    TEST_CASE("sampling a memorized single frame reproduces it") {
        testing::TempDir dir("cli_mem");
        std::mt19937_64 rng(91);
        FlameSequence frame = FlameSequence::rest_pose(1);
        frame.frames += testing::gaussian(1, kPoseDim, rng, 0.2);
        save_dataset({{"still", frame}}, dir / "data");
        Outcome o = run({"train", "--data", (dir / "data").string(), "--channel", "pose", "--raw", "--steps", "1500",
                         "--lr", "2e-3", "--batch", "32", "--diffusion-steps", "100", "--smooth-window", "1",
                         "--cfg-drop", "0", "--latent", "32", "--heads", "4", "--ff-dim", "64", "--seed", "2", "--out",
                         (dir / "ckpt").string()});
        REQUIRE(o.code == cli::kExitOk);
        o = run({"sample", "--checkpoint", (dir / "ckpt" / "motion_dm.json").string(), "--condition", "still", "--frames",
                 "1", "--count", "5", "--guidance", "1", "--diffusion-steps", "100", "--out", (dir / "s").string()});
        REQUIRE(o.code == cli::kExitOk);
        for (int i = 0; i < 5; ++i) {
            const FlameSequence s = load_fseq(dir / "s" / ("sample_00" + std::to_string(i) + ".json"));
            REQUIRE(s.length() == 1);
            CHECK((s.frames - frame.frames).cwiseAbs().maxCoeff() < 0.1);
        }
    }

    TEST_CASE("a zero-parameter sequence renders identical frames") {
        testing::TempDir dir("cli_rest");
        save_fseq(FlameSequence::rest_pose(3), dir / "rest.json");
        const Outcome o = run({"render", "--pose", (dir / "rest.json").string(), "--views", "20,0,0", "--size", "40x30",
                               "--out", (dir / "rest.png").string()});
        REQUIRE(o.code == cli::kExitOk);
        const Image sheet = read_png(dir / "rest.png");
        REQUIRE(sheet.width == 3 * 40);
        const auto tile = [&](int f) {
            std::vector<uint8_t> px;
            for (int y = 0; y < 30; ++y) {
                const auto row = sheet.rgb.begin() + (y * sheet.width + f * 40) * 3;
                px.insert(px.end(), row, row + 40 * 3);
            }
            return px;
        };
        CHECK(tile(0) == tile(1));
        CHECK(tile(1) == tile(2));
        const std::vector<uint8_t> first = tile(0);
        CHECK(std::any_of(first.begin(), first.end(), [](uint8_t v) { return v != 0; }));
    }

    TEST_CASE("pose and expression checkpoints have 12 and 50 inputs") {
        testing::TempDir dir("cli_dims");
        for (const char* channel : {"pose", "expr"}) {
            const std::string data = (dir / (std::string(channel) + "_data")).string();
            REQUIRE(run({"synth", "--channel", channel, "--n-per-label", "1", "--frames", "4", "--out", data}).code == 0);
            const Outcome o = run({"train", "--data", data, "--channel", channel, "--steps", "1", "--batch", "2",
                                   "--diffusion-steps", "10", "--out", (dir / channel).string()});
            REQUIRE(o.code == cli::kExitOk);
            CHECK(o.summary().at("input_dim") == (std::string(channel) == "pose" ? kPoseDim : kExprDim));
        }
        CHECK(std::filesystem::exists(dir / "pose" / "motion_dm.json"));
        CHECK(std::filesystem::exists(dir / "expr" / "emotion_dm.json"));
    }
}
