#pragma once

#include "pkit/autodiff.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace pkit {

enum class Prediction { X0, Epsilon };

// Fixed vocabulary of condition labels. A condition string lists labels
// separated by ',' or '+'; their embeddings are mean-pooled. The empty
// string is the null condition.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> labels);

    const std::vector<std::string>& labels() const { return labels_; }
    int size() const { return static_cast<int>(labels_.size()); }

    // Throws std::invalid_argument for an unknown label.
    std::vector<int> encode(const std::string& condition) const;

    static std::vector<std::string> split(const std::string& condition);

private:
    std::vector<std::string> labels_;
};

struct DenoiserConfig {
    int input_dim = 12;
    int latent = 64;
    int layers = 1;
    int heads = 4;
    int ff_dim = 128;
    Prediction prediction = Prediction::X0;
    std::vector<std::string> vocab;
    uint64_t init_seed = 0;
    // Per-channel standardization; the network sees (x - data_mean) / data_scale.
    // Empty means identity.
    std::vector<double> data_mean;
    std::vector<double> data_scale;

    void validate() const;
    bool normalized() const { return !data_mean.empty(); }
    ad::Matrix normalize(const ad::Matrix& frames) const;
    ad::Matrix denormalize(const ad::Matrix& frames) const;
};

nlohmann::json to_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& doc);

// One minibatch of equally padded sequences: sample b owns rows
// [b * frames, (b + 1) * frames).
struct DenoiserInput {
    ad::Matrix x_t;                        // (B * frames) x D
    Eigen::Index frames = 0;
    std::vector<int> timesteps;            // B
    std::vector<std::vector<int>> tokens;  // B, condition token ids
    std::vector<uint8_t> use_null;         // B, 1 replaces the condition by the null embedding
    std::vector<uint8_t> frame_valid;      // optional, B * frames

    Eigen::Index batch() const { return static_cast<Eigen::Index>(timesteps.size()); }
};

// Encoder-only transformer denoiser: frame tokens plus one token carrying
// the timestep and condition embedding, post-norm blocks, linear readout.
// All weights live in one flat vector addressed through named views.
class DenoiserNet {
public:
    struct View {
        std::string name;
        size_t offset = 0;
        Eigen::Index rows = 0;
        Eigen::Index cols = 0;
    };

    DenoiserNet() = default;
    explicit DenoiserNet(DenoiserConfig cfg);

    const DenoiserConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    const std::vector<View>& views() const { return views_; }
    const View& view(const std::string& name) const;

    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }
    size_t param_count() const { return params_.size(); }

    ad::Matrix get(const std::string& name) const;
    void set(const std::string& name, const ad::Matrix& value);

    // Records the forward pass on `tape`. When `leaves` is non-null the
    // parameters become differentiable leaves (one per view, in view order).
    ad::Var forward(ad::Tape& tape, const DenoiserInput& in, std::vector<ad::Var>* leaves) const;

    // Inference-only forward.
    ad::Matrix predict(const DenoiserInput& in) const;

    // Gathers leaf gradients back into a flat vector aligned with params().
    std::vector<double> flatten_grad(const std::vector<ad::Var>& leaves) const;

    static std::vector<View> layout(const DenoiserConfig& cfg);

private:
    DenoiserConfig cfg_;
    Vocabulary vocab_;
    std::vector<View> views_;
    std::map<std::string, size_t> index_;
    std::vector<double> params_;
};

// "dmck-v1": JSON manifest with config, vocabulary and view layout, plus a
// little-endian float32 blob of the flat parameter vector.
void save_checkpoint(const DenoiserNet& net, const std::filesystem::path& manifest);
DenoiserNet load_checkpoint(const std::filesystem::path& manifest);

}  // namespace pkit
