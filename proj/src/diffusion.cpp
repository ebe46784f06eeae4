#include "pkit/diffusion.hpp"

#include "pkit/blob_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <iostream>
#include <set>
#include <stdexcept>

namespace pkit {

using json = nlohmann::json;
using ad::Matrix;
using ad::Var;
using Eigen::Index;

void TrainConfig::validate() const {
    if (!(lambda_vel >= 0.0)) throw std::invalid_argument("train config: lambda_vel must be >= 0");
    if (!(lr >= 0.0)) throw std::invalid_argument("train config: lr must be >= 0");
    if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
    if (steps < 0) throw std::invalid_argument("train config: steps must be >= 0");
    if (max_frames < 0) throw std::invalid_argument("train config: max_frames must be >= 0");
    if (!(cfg_drop_prob >= 0.0 && cfg_drop_prob <= 1.0)) {
        throw std::invalid_argument("train config: cfg_drop_prob must lie in [0, 1]");
    }
    if (diffusion_steps < 1) throw std::invalid_argument("train config: diffusion_steps must be >= 1");
    if (smooth_window < 1 || smooth_window % 2 == 0) throw std::invalid_argument("train config: smooth_window must be odd");
}

json to_json(const TrainConfig& cfg) {
    return {{"lambda_vel", cfg.lambda_vel},   {"lr", cfg.lr},
            {"batch", cfg.batch},             {"steps", cfg.steps},
            {"max_frames", cfg.max_frames},   {"cfg_drop_prob", cfg.cfg_drop_prob},
            {"diffusion_steps", cfg.diffusion_steps}, {"smooth_window", cfg.smooth_window},
            {"normalize", cfg.normalize}, {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const json& doc, TrainConfig cfg) {
    cfg.lambda_vel = doc.value("lambda_vel", cfg.lambda_vel);
    cfg.lr = doc.value("lr", cfg.lr);
    cfg.batch = doc.value("batch", cfg.batch);
    cfg.steps = doc.value("steps", cfg.steps);
    cfg.max_frames = doc.value("max_frames", cfg.max_frames);
    cfg.cfg_drop_prob = doc.value("cfg_drop_prob", cfg.cfg_drop_prob);
    cfg.diffusion_steps = doc.value("diffusion_steps", cfg.diffusion_steps);
    cfg.smooth_window = doc.value("smooth_window", cfg.smooth_window);
    cfg.normalize = doc.value("normalize", cfg.normalize);
    cfg.seed = doc.value("seed", cfg.seed);
    return cfg;
}

NoiseDraw draw_noise(const Batch& batch, const NoiseSchedule& sched, double drop_prob, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> step(0, sched.steps() - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution drop(drop_prob);
    NoiseDraw d;
    for (Index b = 0; b < batch.size(); ++b) d.timesteps.push_back(step(rng));
    d.eps.resize(batch.f0.rows(), batch.f0.cols());
    for (Index i = 0; i < d.eps.size(); ++i) d.eps.data()[i] = normal(rng);
    for (Index b = 0; b < batch.size(); ++b) d.use_null.push_back(drop(rng) ? 1 : 0);
    return d;
}

namespace {

void check_batch(const Batch& batch, const NoiseDraw& draw, const DenoiserNet& net) {
    if (batch.size() < 1 || batch.frames < 1) throw std::invalid_argument("loss: empty batch");
    if (batch.f0.rows() != batch.size() * batch.frames || batch.f0.cols() != net.config().input_dim) {
        throw std::invalid_argument("loss: f0 shape does not match batch/network");
    }
    if (static_cast<Index>(batch.frame_valid.size()) != batch.f0.rows()) {
        throw std::invalid_argument("loss: frame_valid must have one flag per frame");
    }
    if (draw.eps.rows() != batch.f0.rows() || draw.eps.cols() != batch.f0.cols() ||
        static_cast<Index>(draw.timesteps.size()) != batch.size() ||
        static_cast<Index>(draw.use_null.size()) != batch.size()) {
        throw std::invalid_argument("loss: noise draw does not match batch");
    }
    if (!batch.f0.allFinite() || !draw.eps.allFinite()) throw std::invalid_argument("loss: non-finite input");
}

DenoiserInput noised_input(const Batch& batch, const NoiseDraw& draw, const NoiseSchedule& sched) {
    DenoiserInput in;
    in.frames = batch.frames;
    in.timesteps = draw.timesteps;
    in.tokens = batch.tokens;
    in.use_null = draw.use_null;
    in.frame_valid = batch.frame_valid;
    in.x_t.resize(batch.f0.rows(), batch.f0.cols());
    for (Index b = 0; b < batch.size(); ++b) {
        const int t = draw.timesteps[static_cast<size_t>(b)];
        if (t < 0 || t >= sched.steps()) throw std::out_of_range("loss: timestep out of range");
        in.x_t.middleRows(b * batch.frames, batch.frames) =
            q_sample(batch.f0.middleRows(b * batch.frames, batch.frames), t,
                     draw.eps.middleRows(b * batch.frames, batch.frames), sched);
    }
    return in;
}

Matrix element_weights(const Batch& batch) {
    Index valid = 0;
    for (uint8_t v : batch.frame_valid) valid += v ? 1 : 0;
    Matrix w = Matrix::Zero(batch.f0.rows(), batch.f0.cols());
    if (valid == 0) return w;
    const double per = 1.0 / static_cast<double>(valid * batch.f0.cols());
    for (Index r = 0; r < w.rows(); ++r) {
        if (batch.frame_valid[static_cast<size_t>(r)]) w.row(r).setConstant(per);
    }
    return w;
}

LossResult evaluate(const DenoiserNet& net, const Batch& batch, const NoiseDraw& draw, const NoiseSchedule& sched,
                    const Matrix& target, const LossWeights& weights, bool with_grad) {
    ad::Tape tape;
    std::vector<Var> leaves;
    const DenoiserInput in = noised_input(batch, draw, sched);
    const Var pred = net.forward(tape, in, with_grad ? &leaves : nullptr);
    const Var diff = sub(pred, tape.constant(target));

    const Var simple = weighted_sum_squares(diff, element_weights(batch));
    Var total = scale(simple, weights.simple);

    LossResult r;
    r.simple = simple.value()(0, 0);
    if (weights.velocity != 0.0) {
        // Adjacent valid pairs; each sample's pairs share 1 / (pairs * B).
        std::vector<Index> prev, next;
        std::vector<double> pair_weight;
        for (Index b = 0; b < batch.size(); ++b) {
            std::vector<Index> sample_pairs;
            for (Index i = 0; i + 1 < batch.frames; ++i) {
                const Index r0 = b * batch.frames + i;
                if (batch.frame_valid[static_cast<size_t>(r0)] && batch.frame_valid[static_cast<size_t>(r0 + 1)]) {
                    sample_pairs.push_back(r0);
                }
            }
            for (Index r0 : sample_pairs) {
                prev.push_back(r0);
                next.push_back(r0 + 1);
                pair_weight.push_back(1.0 / static_cast<double>(sample_pairs.size() * static_cast<size_t>(batch.size())));
            }
        }
        if (!prev.empty()) {
            const Var vel_diff = sub(gather_rows(diff, next), gather_rows(diff, prev));
            Matrix w(static_cast<Index>(prev.size()), diff.cols());
            for (Index k = 0; k < w.rows(); ++k) w.row(k).setConstant(pair_weight[static_cast<size_t>(k)]);
            const Var vel = weighted_sum_squares(vel_diff, w);
            r.velocity = vel.value()(0, 0);
            total = add(total, scale(vel, weights.velocity));
        }
    }
    r.total = total.value()(0, 0);
    if (with_grad) {
        tape.backward(total);
        r.grad = net.flatten_grad(leaves);
    }
    return r;
}

}  // namespace

LossResult loss(const DenoiserNet& net, const Batch& batch, const NoiseDraw& draw, const NoiseSchedule& sched,
                const LossWeights& weights, bool with_grad) {
    check_batch(batch, draw, net);
    if (net.config().prediction != Prediction::X0) throw std::invalid_argument("loss: network must predict x0");
    return evaluate(net, batch, draw, sched, batch.f0, weights, with_grad);
}

LossResult eps_loss(const DenoiserNet& net, const Batch& batch, const NoiseDraw& draw, const NoiseSchedule& sched,
                    bool with_grad) {
    check_batch(batch, draw, net);
    if (net.config().prediction != Prediction::Epsilon) throw std::invalid_argument("eps_loss: network must predict noise");
    return evaluate(net, batch, draw, sched, draw.eps, {1.0, 0.0}, with_grad);
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json items = json::array();
    for (size_t i = 0; i < data.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "seq_%05zu.json", i);
        save_fseq(data[i].seq, dir / name);
        items.push_back({{"condition", data[i].condition}, {"file", name}});
    }
    write_text_file(dir / "index.json", json{{"format", "fds-v1"}, {"items", items}}.dump(1) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const std::filesystem::path index = dir / "index.json";
    json doc;
    try {
        doc = json::parse(read_text_file(index));
    } catch (const json::exception& e) {
        throw std::runtime_error(index.string() + ": " + e.what());
    }
    Dataset data;
    for (const json& item : doc.at("items")) {
        data.push_back({item.at("condition").get<std::string>(), load_fseq(dir / item.at("file").get<std::string>())});
    }
    if (data.empty()) throw std::runtime_error(index.string() + ": dataset is empty");
    return data;
}

Batch make_batch(const Dataset& data, std::span<const size_t> indices, const Vocabulary& vocab, Index frames) {
    if (indices.empty() || frames < 1) throw std::invalid_argument("make_batch: empty batch");
    const Index d = data.at(indices.front()).seq.frames.cols();
    Batch b;
    b.frames = frames;
    b.f0 = Matrix::Zero(static_cast<Index>(indices.size()) * frames, d);
    b.frame_valid.assign(static_cast<size_t>(b.f0.rows()), 0);
    for (size_t k = 0; k < indices.size(); ++k) {
        const LabeledSequence& item = data.at(indices[k]);
        if (item.seq.frames.cols() != d) throw std::invalid_argument("make_batch: mixed frame widths");
        const Index n = std::min(frames, item.seq.length());
        const Index base = static_cast<Index>(k) * frames;
        b.f0.middleRows(base, n) = item.seq.frames.topRows(n);
        for (Index i = 0; i < n; ++i) b.frame_valid[static_cast<size_t>(base + i)] = 1;
        b.tokens.push_back(vocab.encode(item.condition));
    }
    return b;
}

std::vector<double> train_in_place(DenoiserNet& net, const Dataset& raw, const TrainConfig& cfg) {
    cfg.validate();
    if (raw.empty()) throw std::invalid_argument("train: dataset is empty");
    Dataset data = raw;
    for (LabeledSequence& item : data) {
        if (item.seq.frames.cols() != net.config().input_dim) {
            throw std::invalid_argument("train: sequence width " + std::to_string(item.seq.frames.cols()) +
                                        " does not match the network input " + std::to_string(net.config().input_dim));
        }
        if (cfg.smooth_window > 1) item.seq.frames = smooth_frames(item.seq.frames, cfg.smooth_window);
        item.seq.frames = net.config().normalize(item.seq.frames);
    }
    Index frames = cfg.max_frames;
    if (frames == 0) {
        for (const auto& item : data) frames = std::max(frames, item.seq.length());
    }

    const NoiseSchedule sched = cosine_schedule(cfg.diffusion_steps);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<size_t> pick(0, data.size() - 1);

    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    const size_t n = net.param_count();
    std::vector<double> m(n, 0.0), v(n, 0.0);
    std::vector<double> curve;
    curve.reserve(static_cast<size_t>(cfg.steps));
    std::vector<size_t> idx(static_cast<size_t>(cfg.batch));
    const LossWeights weights{1.0, cfg.lambda_vel};
    const bool eps_net = net.config().prediction == Prediction::Epsilon;

    for (int step = 1; step <= cfg.steps; ++step) {
        for (size_t& i : idx) i = pick(rng);
        const Batch batch = make_batch(data, idx, net.vocab(), frames);
        const NoiseDraw draw = draw_noise(batch, sched, cfg.cfg_drop_prob, rng);
        const LossResult r = eps_net ? eps_loss(net, batch, draw, sched) : loss(net, batch, draw, sched, weights);
        if (!std::isfinite(r.total)) {
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
        }
        curve.push_back(r.total);

        const double c1 = 1.0 - std::pow(beta1, step);
        const double c2 = 1.0 - std::pow(beta2, step);
        auto params = net.params();
        for (size_t k = 0; k < n; ++k) {
            const double g = r.grad[k];
            m[k] = beta1 * m[k] + (1.0 - beta1) * g;
            v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
            params[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + adam_eps);
        }
        if (cfg.log_every > 0 && step % cfg.log_every == 0) {
            std::cerr << "step " << step << " loss " << r.total << " (simple " << r.simple << ", vel " << r.velocity
                      << ")\n";
        }
    }
    return curve;
}

void fit_normalization(const Dataset& data, DenoiserConfig& arch, double min_scale) {
    if (data.empty()) throw std::invalid_argument("fit_normalization: dataset is empty");
    const Index d = data.front().seq.frames.cols();
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(d), sq = Eigen::RowVectorXd::Zero(d);
    double count = 0.0;
    for (const auto& item : data) {
        if (item.seq.frames.cols() != d) throw std::invalid_argument("fit_normalization: ragged sequence widths");
        sum += item.seq.frames.colwise().sum();
        count += static_cast<double>(item.seq.length());
    }
    if (count == 0.0) throw std::invalid_argument("fit_normalization: no frames");
    const Eigen::RowVectorXd mean = sum / count;
    for (const auto& item : data) sq += (item.seq.frames.rowwise() - mean).array().square().matrix().colwise().sum();
    arch.data_mean.assign(mean.data(), mean.data() + d);
    arch.data_scale.resize(static_cast<size_t>(d));
    for (Index c = 0; c < d; ++c) arch.data_scale[static_cast<size_t>(c)] = std::max(std::sqrt(sq(c) / count), min_scale);
}

TrainResult train(const Dataset& data, const TrainConfig& cfg, DenoiserConfig arch) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("train: dataset is empty");
    const Channel channel = data.front().seq.channel;
    std::set<std::string> labels;
    for (const auto& item : data) {
        if (item.seq.channel != channel) throw std::invalid_argument("train: dataset mixes pose and expr sequences");
        item.seq.validate();
        for (auto& l : Vocabulary::split(item.condition)) labels.insert(l);
    }
    arch.input_dim = channel_dim(channel);
    arch.vocab.assign(labels.begin(), labels.end());
    arch.init_seed = cfg.seed;
    arch.data_mean.clear();
    arch.data_scale.clear();
    if (cfg.normalize) fit_normalization(data, arch);
    TrainResult result{DenoiserNet(std::move(arch)), {}};
    result.loss_curve = train_in_place(result.net, data, cfg);
    return result;
}

Matrix sample_ddpm(const X0Predictor& predict, Index rows, Index cols, const NoiseSchedule& sched,
                   std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(rows, cols);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    for (int t = sched.steps() - 1; t >= 0; --t) {
        Matrix x0 = predict(x, t);
        if (t == 0) return x0;
        const double sd = std::sqrt(sched.posterior_variance(t));
        x = sched.posterior_coef_x0(t) * x0 + sched.posterior_coef_xt(t) * x;
        for (Index i = 0; i < x.size(); ++i) x.data()[i] += sd * normal(rng);
    }
    return x;
}

std::vector<Matrix> sample(const DenoiserNet& net, const std::string& condition, const SampleConfig& cfg,
                           const NoiseSchedule& sched, std::mt19937_64& rng) {
    if (!(cfg.guidance_scale >= 0.0)) throw std::invalid_argument("sample: guidance_scale must be >= 0");
    if (cfg.frames < 1 || cfg.count < 1) throw std::invalid_argument("sample: frames and count must be >= 1");
    const std::vector<int> tokens = net.vocab().encode(condition);
    const bool conditional = !tokens.empty();
    const bool guided = conditional && cfg.guidance_scale != 1.0;
    const Index count = cfg.count;
    const Index rows = count * cfg.frames;
    const bool eps_net = net.config().prediction == Prediction::Epsilon;

    DenoiserInput in;
    in.frames = cfg.frames;
    const Index passes = guided ? 2 : 1;
    for (Index p = 0; p < passes; ++p) {
        for (Index b = 0; b < count; ++b) {
            in.tokens.push_back(tokens);
            in.use_null.push_back(p == 1 || !conditional ? 1 : 0);
        }
    }
    const X0Predictor predict = [&](const Matrix& x_t, int t) -> Matrix {
        in.timesteps.assign(static_cast<size_t>(passes * count), t);
        in.x_t = guided ? Matrix(x_t.replicate(2, 1)) : x_t;
        Matrix out = net.predict(in);
        if (eps_net) out = x0_from_eps(in.x_t, out, t, sched);
        if (!guided) return out;
        const Matrix cond = out.topRows(rows);
        const Matrix null = out.bottomRows(rows);
        return null + cfg.guidance_scale * (cond - null);
    };
    const Matrix all = sample_ddpm(predict, rows, net.config().input_dim, sched, rng);
    std::vector<Matrix> out;
    for (Index b = 0; b < count; ++b) {
        Matrix seq = net.config().denormalize(all.middleRows(b * cfg.frames, cfg.frames));
        if (cfg.smooth_output) seq = smooth_frames(seq, cfg.smooth_window);
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace pkit
