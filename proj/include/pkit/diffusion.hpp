#pragma once

#include "pkit/denoiser.hpp"
#include "pkit/schedule.hpp"
#include "pkit/sequence.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace pkit {

struct TrainConfig {
    double lambda_vel = 0.5;
    double lr = 1e-4;
    int batch = 64;
    int steps = 5000;
    int max_frames = 0;        // 0: longest sequence in the dataset
    double cfg_drop_prob = 0.1;
    int diffusion_steps = 1000;
    int smooth_window = 3;     // applied to the training data; 1 disables
    bool normalize = true;     // standardize each channel with dataset statistics
    uint64_t seed = 0;
    int log_every = 0;         // 0: silent

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig defaults = {});

// A padded minibatch of clean sequences.
struct Batch {
    ad::Matrix f0;                         // (B * frames) x D
    Eigen::Index frames = 0;
    std::vector<uint8_t> frame_valid;      // B * frames
    std::vector<std::vector<int>> tokens;  // B

    Eigen::Index size() const { return static_cast<Eigen::Index>(tokens.size()); }
};

// The random quantities of one loss evaluation, drawn up front so the loss is
// a deterministic function of the parameters.
struct NoiseDraw {
    std::vector<int> timesteps;
    ad::Matrix eps;
    std::vector<uint8_t> use_null;
};

NoiseDraw draw_noise(const Batch& batch, const NoiseSchedule& sched, double drop_prob, std::mt19937_64& rng);

struct LossWeights {
    double simple = 1.0;
    double velocity = 0.5;
};

struct LossResult {
    double total = 0.0;
    double simple = 0.0;
    double velocity = 0.0;
    std::vector<double> grad;  // aligned with DenoiserNet::params()
};

// x0-parameterized objective:
//   simple * mean over valid elements of (f0 - DM(f_t, t, y))^2
// + velocity * mean over samples of 1/(n-1) sum_i |d f0_i - d f0hat_i|^2
// where differences only pair adjacent valid frames.
LossResult loss(const DenoiserNet& net, const Batch& batch, const NoiseDraw& draw, const NoiseSchedule& sched,
                const LossWeights& weights, bool with_grad = true);

// Noise-prediction objective: mean over valid elements of (eps - eps_theta)^2.
LossResult eps_loss(const DenoiserNet& net, const Batch& batch, const NoiseDraw& draw, const NoiseSchedule& sched,
                    bool with_grad = true);

struct LabeledSequence {
    std::string condition;
    FlameSequence seq;
};
using Dataset = std::vector<LabeledSequence>;

// Index file "index.json" in `dir` listing (condition, fseq file) pairs.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Pads/truncates the chosen sequences to `frames`.
Batch make_batch(const Dataset& data, std::span<const size_t> indices, const Vocabulary& vocab, Eigen::Index frames);

struct TrainResult {
    DenoiserNet net;
    std::vector<double> loss_curve;
};

// Per-channel mean and standard deviation over every frame, with the
// deviation floored at `min_scale`.
void fit_normalization(const Dataset& data, DenoiserConfig& arch, double min_scale = 1e-3);

// Adam on the combined objective (or the noise objective for epsilon
// networks). Deterministic for a fixed cfg.seed. Throws std::runtime_error
// naming the step if the loss becomes non-finite.
TrainResult train(const Dataset& data, const TrainConfig& cfg, DenoiserConfig arch);

// Continues optimizing an existing network in place.
std::vector<double> train_in_place(DenoiserNet& net, const Dataset& data, const TrainConfig& cfg);

// x_t (rows x D) at step t -> clean estimate.
using X0Predictor = std::function<ad::Matrix(const ad::Matrix& x_t, int t)>;

// Ancestral DDPM sampling with the x0-parameterized posterior and fixed
// posterior variance. Returns the clean estimate at t = 0.
ad::Matrix sample_ddpm(const X0Predictor& predict, Eigen::Index rows, Eigen::Index cols, const NoiseSchedule& sched,
                       std::mt19937_64& rng);

struct SampleConfig {
    Eigen::Index frames = 30;
    int count = 1;
    double guidance_scale = 1.5;
    bool smooth_output = false;
    int smooth_window = 3;
};

// `count` sequences of `frames` frames for `condition` ("" samples the
// unconditional model). With guidance s the clean estimate is
// null + s (cond - null); s = 1 evaluates the conditional branch only.
std::vector<ad::Matrix> sample(const DenoiserNet& net, const std::string& condition, const SampleConfig& cfg,
                               const NoiseSchedule& sched, std::mt19937_64& rng);

}  // namespace pkit
