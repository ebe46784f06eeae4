#pragma once

#include "pkit/diffusion.hpp"
#include "pkit/sequence.hpp"

#include <nlohmann/json_fwd.hpp>

#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace pkit {

// Procedural stand-in for a captioned motion/expression clip.
struct MotionPattern {
    std::string label;
    Channel channel = Channel::Pose;
    // N x D frames; must depend only on the generator state and N.
    std::function<ad::Matrix(std::mt19937_64& rng, Eigen::Index frames, double fps)> generate;
};

// Pose: "nodding" (pitch), "shaking head" (yaw), "tilting head" (roll),
// "talking" (jaw). Expression: "surprised", "happy", "sad", "angry".
std::vector<MotionPattern> default_patterns(Channel channel);
const MotionPattern& find_pattern(const std::vector<MotionPattern>& patterns, const std::string& label);

// n_per_label sequences per pattern, each drawn from its own stream derived
// from (seed, label index, sample index).
Dataset synth_dataset(const std::vector<MotionPattern>& patterns, int n_per_label, Eigen::Index frames, uint64_t seed,
                      double fps = 30.0);

// Per-frame head yaw/pitch/roll (intrinsic Y-X-Z) and jaw opening angle
// decoded from the 6D blocks, N x 4.
ad::Matrix pose_angles(const FlameSequence& seq);

// Mean absolute frame-to-frame change per angle: yaw, pitch, roll, jaw.
struct AxisVariability {
    double yaw = 0.0;
    double pitch = 0.0;
    double roll = 0.0;
    double jaw = 0.0;
};
AxisVariability axis_variability(const FlameSequence& seq);

// Mean of |angle_{i+1} - angle_i| over frames and the three head angles,
// in radians per frame. Requires a pose sequence with N >= 2.
double variability(const FlameSequence& seq);

// Mean absolute difference over all frames and values.
double flame_l1(const FlameSequence& a, const FlameSequence& b);

// Label of the dominant moving axis: nodding / shaking head / tilting head /
// talking.
std::string classify_motion(const FlameSequence& seq);

struct MetricReport {
    std::optional<double> variability;
    std::optional<double> flame_l1_pose;
    std::optional<double> flame_l1_expr;
    std::optional<double> flame_l1;  // over pose and expression values together
    std::optional<AxisVariability> axes;
};

MetricReport compute_report(const FlameSequence* pose, const FlameSequence* pose_ref, const FlameSequence* expr,
                            const FlameSequence* expr_ref);
nlohmann::json to_json(const MetricReport& report);
std::string to_table(const MetricReport& report);

}  // namespace pkit
