#include "pkit/sequence.hpp"

#include "pkit/blob_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <stdexcept>

namespace pkit {

using json = nlohmann::json;

int channel_dim(Channel channel) { return channel == Channel::Pose ? kPoseDim : kExprDim; }

std::string to_string(Channel channel) { return channel == Channel::Pose ? "pose" : "expr"; }

Channel parse_channel(const std::string& name) {
    if (name == "pose") return Channel::Pose;
    if (name == "expr") return Channel::Expr;
    throw std::invalid_argument("unknown channel '" + name + "' (expected pose or expr)");
}

void FlameSequence::validate() const {
    if (frames.cols() != channel_dim(channel)) {
        throw std::invalid_argument("fseq: " + to_string(channel) + " frames must have " +
                                    std::to_string(channel_dim(channel)) + " values, got " +
                                    std::to_string(frames.cols()));
    }
    if (!frames.allFinite()) throw std::invalid_argument("fseq: non-finite value");
    if (!(fps > 0.0)) throw std::invalid_argument("fseq: fps must be positive");
}

FlameSequence FlameSequence::rest_pose(Eigen::Index n, double fps) {
    FlameSequence seq;
    seq.channel = Channel::Pose;
    seq.fps = fps;
    seq.frames = ad::Matrix::Zero(n, kPoseDim);
    for (Eigen::Index i = 0; i < n; ++i) {
        seq.frames(i, 0) = seq.frames(i, 4) = seq.frames(i, 6) = seq.frames(i, 10) = 1.0;
    }
    return seq;
}

json to_json(const FlameSequence& seq) {
    json frames = json::array();
    for (Eigen::Index r = 0; r < seq.frames.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < seq.frames.cols(); ++c) row.push_back(seq.frames(r, c));
        frames.push_back(std::move(row));
    }
    return {{"format", "fseq-v1"}, {"channel", to_string(seq.channel)}, {"fps", seq.fps}, {"frames", frames}};
}

FlameSequence fseq_from_json(const json& doc) {
    if (doc.value("format", "") != "fseq-v1") throw std::invalid_argument("fseq: missing format tag fseq-v1");
    FlameSequence seq;
    seq.channel = parse_channel(doc.at("channel").get<std::string>());
    seq.fps = doc.at("fps").get<double>();
    const json& frames = doc.at("frames");
    const auto d = static_cast<Eigen::Index>(channel_dim(seq.channel));
    seq.frames.resize(static_cast<Eigen::Index>(frames.size()), d);
    for (size_t r = 0; r < frames.size(); ++r) {
        if (frames[r].size() != static_cast<size_t>(d)) {
            throw std::invalid_argument("fseq: frame " + std::to_string(r) + " has the wrong length");
        }
        for (Eigen::Index c = 0; c < d; ++c) {
            seq.frames(static_cast<Eigen::Index>(r), c) = frames[r][static_cast<size_t>(c)].get<double>();
        }
    }
    seq.validate();
    return seq;
}

void save_fseq(const FlameSequence& seq, const std::filesystem::path& path) {
    seq.validate();
    write_text_file(path, to_json(seq).dump() + "\n");
}

FlameSequence load_fseq(const std::filesystem::path& path) {
    try {
        return fseq_from_json(json::parse(read_text_file(path)));
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

ad::Matrix smooth_frames(const ad::Matrix& frames, int window) {
    if (window < 1 || window % 2 == 0) {
        throw std::invalid_argument("smooth: window must be odd and >= 1, got " + std::to_string(window));
    }
    const Eigen::Index n = frames.rows();
    const Eigen::Index half = window / 2;
    ad::Matrix out(n, frames.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, i - half);
        const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + half);
        out.row(i) = frames.middleRows(lo, hi - lo + 1).colwise().sum() / static_cast<double>(hi - lo + 1);
    }
    return out;
}

FlameSequence smooth(const FlameSequence& seq, int window) {
    FlameSequence out = seq;
    out.frames = smooth_frames(seq.frames, window);
    return out;
}

std::vector<FlameParams> assemble_frames(const FlameModel& model, const Eigen::VectorXd& shape,
                                         const FlameSequence* pose, const FlameSequence* expr) {
    if (shape.size() != model.n_shape()) {
        throw std::invalid_argument("assemble_frames: shape has " + std::to_string(shape.size()) +
                                    " values, model expects " + std::to_string(model.n_shape()));
    }
    if (pose && pose->channel != Channel::Pose) throw std::invalid_argument("assemble_frames: pose channel expected");
    if (expr && expr->channel != Channel::Expr) throw std::invalid_argument("assemble_frames: expr channel expected");
    Eigen::Index n = 1;
    if (pose) n = pose->length();
    if (expr) {
        if (pose && expr->length() != n) throw std::invalid_argument("assemble_frames: pose and expr lengths differ");
        n = expr->length();
    }
    std::vector<FlameParams> frames;
    frames.reserve(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        FlameParams p = FlameParams::zeros(model);
        p.shape = shape;
        if (pose) {
            const Eigen::VectorXd row = pose->frames.row(i).transpose();
            p.pose = pose_vec_to_flame(std::span<const double>(row.data(), 12), model.n_joints());
        }
        if (expr) {
            const Eigen::Index k = std::min<Eigen::Index>(model.n_expr(), expr->frames.cols());
            p.expr.head(k) = expr->frames.row(i).head(k).transpose();
        }
        frames.push_back(std::move(p));
    }
    return frames;
}

}  // namespace pkit
