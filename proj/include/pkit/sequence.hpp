#pragma once

#include "pkit/autodiff.hpp"
#include "pkit/flame.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace pkit {

enum class Channel { Pose, Expr };

inline constexpr int kPoseDim = 12;  // head 6D | jaw 6D
inline constexpr int kExprDim = 50;

int channel_dim(Channel channel);
std::string to_string(Channel channel);
Channel parse_channel(const std::string& name);

// N frames x D values of one parameter channel.
struct FlameSequence {
    Channel channel = Channel::Pose;
    double fps = 30.0;
    ad::Matrix frames;

    Eigen::Index length() const { return frames.rows(); }
    // Throws std::invalid_argument if D does not match the channel or an
    // entry is non-finite.
    void validate() const;

    // Every frame encodes the identity head and jaw rotation.
    static FlameSequence rest_pose(Eigen::Index frames, double fps = 30.0);
};

// "fseq-v1": {"format","channel","fps","frames":[[...],...]}.
nlohmann::json to_json(const FlameSequence& seq);
FlameSequence fseq_from_json(const nlohmann::json& doc);
void save_fseq(const FlameSequence& seq, const std::filesystem::path& path);
FlameSequence load_fseq(const std::filesystem::path& path);

// Centered moving average per channel; near the ends the window shrinks to
// the valid indices. window must be odd and >= 1.
ad::Matrix smooth_frames(const ad::Matrix& frames, int window);
FlameSequence smooth(const FlameSequence& seq, int window);

// Builds per-frame FLAME parameters from a shared shape and optional pose and
// expression channels. Expression vectors are truncated or zero-padded to
// the model's expression dimension. With neither channel, yields one rest
// frame.
std::vector<FlameParams> assemble_frames(const FlameModel& model, const Eigen::VectorXd& shape,
                                         const FlameSequence* pose, const FlameSequence* expr);

}  // namespace pkit
