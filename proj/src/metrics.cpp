#include "pkit/metrics.hpp"

#include "pkit/rotation.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace pkit {

using ad::Matrix;
using Eigen::Index;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kAngleNoise = 0.004;
constexpr double kExprNoise = 0.02;

struct PoseTrack {
    Eigen::VectorXd yaw, pitch, roll, jaw;
};

Matrix encode_pose(const PoseTrack& p) {
    Matrix out(p.yaw.size(), kPoseDim);
    for (Index i = 0; i < p.yaw.size(); ++i) {
        out.row(i).head<6>() = matrix_to_rot6d(euler_yxz_to_matrix({p.yaw[i], p.pitch[i], p.roll[i]})).values.transpose();
        out.row(i).tail<6>() = matrix_to_rot6d(euler_yxz_to_matrix({0.0, p.jaw[i], 0.0})).values.transpose();
    }
    return out;
}

// Small rest offsets plus per-frame jitter on every angle.
PoseTrack idle_track(std::mt19937_64& rng, Index n) {
    std::normal_distribution<double> noise(0.0, kAngleNoise);
    std::uniform_real_distribution<double> rest(-0.05, 0.05);
    PoseTrack p{Eigen::VectorXd::Constant(n, rest(rng)), Eigen::VectorXd::Constant(n, rest(rng)),
                Eigen::VectorXd::Constant(n, rest(rng)), Eigen::VectorXd::Constant(n, 0.02)};
    for (Eigen::VectorXd* v : {&p.yaw, &p.pitch, &p.roll, &p.jaw}) {
        for (Index i = 0; i < n; ++i) (*v)[i] += noise(rng);
    }
    return p;
}

// amplitude * sin(2 pi f t + phase) with jittered amplitude/frequency/phase.
Eigen::VectorXd oscillation(std::mt19937_64& rng, Index n, double fps, double amp_lo, double amp_hi, double f_lo,
                            double f_hi) {
    std::uniform_real_distribution<double> amp(amp_lo, amp_hi);
    std::uniform_real_distribution<double> freq(f_lo, f_hi);
    std::uniform_real_distribution<double> phase(0.0, kTwoPi);
    const double a = amp(rng), f = freq(rng), ph = phase(rng);
    Eigen::VectorXd out(n);
    for (Index i = 0; i < n; ++i) out[i] = a * std::sin(kTwoPi * f * static_cast<double>(i) / fps + ph);
    return out;
}

MotionPattern head_motion(std::string label, Eigen::VectorXd PoseTrack::*axis) {
    return {std::move(label), Channel::Pose, [axis](std::mt19937_64& rng, Index n, double fps) {
                PoseTrack p = idle_track(rng, n);
                p.*axis += oscillation(rng, n, fps, 0.2, 0.35, 1.0, 2.0);
                return encode_pose(p);
            }};
}

MotionPattern talking() {
    return {"talking", Channel::Pose, [](std::mt19937_64& rng, Index n, double fps) {
                PoseTrack p = idle_track(rng, n);
                const Eigen::VectorXd osc = oscillation(rng, n, fps, 0.1, 0.2, 2.5, 4.0);
                p.jaw.array() += osc.array().abs();
                return encode_pose(p);
            }};
}

// Expression curves over a block of three basis coefficients.
enum class Envelope { Bump, Rise, Fall, Pulse };

MotionPattern expression(std::string label, Index first, Envelope shape) {
    return {std::move(label), Channel::Expr, [first, shape](std::mt19937_64& rng, Index n, double fps) {
                std::normal_distribution<double> noise(0.0, kExprNoise);
                std::uniform_real_distribution<double> amp(1.5, 2.5);
                std::uniform_real_distribution<double> onset(0.3, 0.7);
                const double a = amp(rng);
                const double c = onset(rng) * static_cast<double>(n);
                const double width = std::max(1.0, static_cast<double>(n) / 6.0);
                Matrix out(n, kExprDim);
                for (Index i = 0; i < out.size(); ++i) out.data()[i] = noise(rng);
                for (Index i = 0; i < n; ++i) {
                    const double x = (static_cast<double>(i) - c) / width;
                    double e = 0.0;
                    switch (shape) {
                        case Envelope::Bump: e = std::exp(-0.5 * x * x); break;
                        case Envelope::Rise: e = 1.0 / (1.0 + std::exp(-2.0 * x)); break;
                        case Envelope::Fall: e = -1.0 / (1.0 + std::exp(-2.0 * x)); break;
                        case Envelope::Pulse: e = 0.6 * std::sin(kTwoPi * 2.0 * static_cast<double>(i) / fps); break;
                    }
                    for (Index k = 0; k < 3; ++k) out(i, first + k) += a * e * (1.0 - 0.25 * static_cast<double>(k));
                }
                return out;
            }};
}

double wrap(double a) { return std::remainder(a, kTwoPi); }

void require_pose(const FlameSequence& seq, const char* what) {
    if (seq.channel != Channel::Pose) throw std::invalid_argument(std::string(what) + ": pose sequence required");
    if (seq.frames.cols() != kPoseDim) throw std::invalid_argument(std::string(what) + ": frames must have 12 values");
    if (seq.length() < 2) throw std::invalid_argument(std::string(what) + ": at least two frames required");
}

}  // namespace

std::vector<MotionPattern> default_patterns(Channel channel) {
    if (channel == Channel::Pose) {
        return {head_motion("nodding", &PoseTrack::pitch), head_motion("shaking head", &PoseTrack::yaw),
                head_motion("tilting head", &PoseTrack::roll), talking()};
    }
    return {expression("surprised", 0, Envelope::Bump), expression("happy", 3, Envelope::Rise),
            expression("sad", 6, Envelope::Fall), expression("angry", 9, Envelope::Pulse)};
}

const MotionPattern& find_pattern(const std::vector<MotionPattern>& patterns, const std::string& label) {
    for (const MotionPattern& p : patterns) {
        if (p.label == label) return p;
    }
    throw std::invalid_argument("unknown pattern label '" + label + "'");
}

Dataset synth_dataset(const std::vector<MotionPattern>& patterns, int n_per_label, Index frames, uint64_t seed,
                      double fps) {
    if (n_per_label < 1) throw std::invalid_argument("synth_dataset: n_per_label must be >= 1");
    if (frames < 1) throw std::invalid_argument("synth_dataset: frames must be >= 1");
    if (patterns.empty()) throw std::invalid_argument("synth_dataset: no patterns");
    Dataset data;
    for (size_t l = 0; l < patterns.size(); ++l) {
        for (int k = 0; k < n_per_label; ++k) {
            std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(l),
                              static_cast<uint32_t>(k)};
            std::mt19937_64 rng(seq);
            FlameSequence s;
            s.channel = patterns[l].channel;
            s.fps = fps;
            s.frames = patterns[l].generate(rng, frames, fps);
            s.validate();
            data.push_back({patterns[l].label, std::move(s)});
        }
    }
    return data;
}

Matrix pose_angles(const FlameSequence& seq) {
    if (seq.frames.cols() != kPoseDim) throw std::invalid_argument("pose_angles: frames must have 12 values");
    Matrix out(seq.length(), 4);
    for (Index i = 0; i < seq.length(); ++i) {
        const Eigen::VectorXd row = seq.frames.row(i).transpose();
        const EulerYXZ head = matrix_to_euler_yxz(rot6d_to_matrix(Rot6d::from({row.data(), 6})));
        const EulerYXZ jaw = matrix_to_euler_yxz(rot6d_to_matrix(Rot6d::from({row.data() + 6, 6})));
        out.row(i) << head.yaw, head.pitch, head.roll, jaw.pitch;
    }
    return out;
}

AxisVariability axis_variability(const FlameSequence& seq) {
    require_pose(seq, "variability");
    const Matrix a = pose_angles(seq);
    Eigen::Vector4d total = Eigen::Vector4d::Zero();
    for (Index i = 0; i + 1 < a.rows(); ++i) {
        for (Index k = 0; k < 4; ++k) total[k] += std::abs(wrap(a(i + 1, k) - a(i, k)));
    }
    total /= static_cast<double>(a.rows() - 1);
    return {total[0], total[1], total[2], total[3]};
}

double variability(const FlameSequence& seq) {
    const AxisVariability v = axis_variability(seq);
    return (v.yaw + v.pitch + v.roll) / 3.0;
}

double flame_l1(const FlameSequence& a, const FlameSequence& b) {
    if (a.channel != b.channel || a.frames.rows() != b.frames.rows() || a.frames.cols() != b.frames.cols()) {
        throw std::invalid_argument("flame_l1: sequences differ in channel or shape");
    }
    if (a.frames.size() == 0) throw std::invalid_argument("flame_l1: empty sequences");
    return (a.frames - b.frames).cwiseAbs().mean();
}

std::string classify_motion(const FlameSequence& seq) {
    const AxisVariability v = axis_variability(seq);
    const std::pair<double, const char*> axes[] = {
        {v.pitch, "nodding"}, {v.yaw, "shaking head"}, {v.roll, "tilting head"}, {v.jaw, "talking"}};
    const auto* best = &axes[0];
    for (const auto& a : axes) {
        if (a.first > best->first) best = &a;
    }
    return best->second;
}

MetricReport compute_report(const FlameSequence* pose, const FlameSequence* pose_ref, const FlameSequence* expr,
                            const FlameSequence* expr_ref) {
    MetricReport r;
    double abs_sum = 0.0;
    double count = 0.0;
    if (pose) {
        if (pose->length() >= 2) {
            r.axes = axis_variability(*pose);
            r.variability = (r.axes->yaw + r.axes->pitch + r.axes->roll) / 3.0;
        }
        if (pose_ref) {
            r.flame_l1_pose = flame_l1(*pose, *pose_ref);
            abs_sum += *r.flame_l1_pose * static_cast<double>(pose->frames.size());
            count += static_cast<double>(pose->frames.size());
        }
    }
    if (expr && expr_ref) {
        r.flame_l1_expr = flame_l1(*expr, *expr_ref);
        abs_sum += *r.flame_l1_expr * static_cast<double>(expr->frames.size());
        count += static_cast<double>(expr->frames.size());
    }
    if (count > 0.0) r.flame_l1 = abs_sum / count;
    return r;
}

nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json doc = nlohmann::json::object();
    if (r.variability) doc["variability"] = *r.variability;
    if (r.axes) {
        doc["variability_axes"] = {{"yaw", r.axes->yaw}, {"pitch", r.axes->pitch}, {"roll", r.axes->roll},
                                   {"jaw", r.axes->jaw}};
    }
    if (r.flame_l1) doc["flame_l1"] = *r.flame_l1;
    if (r.flame_l1_pose) doc["flame_l1_pose"] = *r.flame_l1_pose;
    if (r.flame_l1_expr) doc["flame_l1_expr"] = *r.flame_l1_expr;
    return doc;
}

std::string to_table(const MetricReport& r) {
    std::vector<std::pair<std::string, double>> rows;
    if (r.variability) rows.emplace_back("variability", *r.variability);
    if (r.axes) {
        rows.emplace_back("  yaw", r.axes->yaw);
        rows.emplace_back("  pitch", r.axes->pitch);
        rows.emplace_back("  roll", r.axes->roll);
        rows.emplace_back("  jaw", r.axes->jaw);
    }
    if (r.flame_l1) rows.emplace_back("flame_l1", *r.flame_l1);
    if (r.flame_l1_pose) rows.emplace_back("  pose", *r.flame_l1_pose);
    if (r.flame_l1_expr) rows.emplace_back("  expr", *r.flame_l1_expr);
    std::ostringstream out;
    out << std::left << std::setw(16) << "metric" << std::right << std::setw(14) << "value" << "\n";
    for (const auto& [name, value] : rows) {
        out << std::left << std::setw(16) << name << std::right << std::setw(14) << std::fixed << std::setprecision(6)
            << value << "\n";
    }
    return out.str();
}

}  // namespace pkit
