#pragma once

#include "pkit/diffusion.hpp"
#include "pkit/render.hpp"
#include "pkit/sequence.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace pkit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Everything a pipeline run needs. Loaded from one JSON file; command-line
// flags override individual fields.
struct PipelineConfig {
    std::string model = "mini";
    uint64_t seed = 0;
    std::filesystem::path out = "out";
    Channel channel = Channel::Pose;

    int n_per_label = 200;
    int frames = 30;                  // synthesized and sampled sequence length
    std::vector<std::string> labels;  // empty: every pattern of the channel

    TrainConfig train;
    DenoiserConfig arch;

    SampleConfig sample;
    std::string condition;

    std::string views = "-30,0,0;0,0,0;30,0,0;60,0,0";
    int width = 512;
    int height = 512;
    unsigned threads = 0;
    CameraPose camera;

    // Throws std::invalid_argument on the first inconsistent field.
    void validate() const;
};

PipelineConfig pipeline_config_from_json(const nlohmann::json& doc, PipelineConfig defaults = {});
nlohmann::json to_json(const PipelineConfig& cfg);

// Parses "WxH".
std::pair<int, int> parse_size(const std::string& text);

// Entry point of the `pkit` tool. Human-oriented output goes to `err`; every
// successful command ends with one JSON summary line on `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pkit::cli
