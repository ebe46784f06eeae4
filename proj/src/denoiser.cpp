#include "pkit/denoiser.hpp"

#include "pkit/blob_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace pkit {

using json = nlohmann::json;
using ad::Matrix;
using ad::Var;
using Eigen::Index;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string block_name(int i, const char* leaf) { return "block" + std::to_string(i) + "." + leaf; }

Matrix timestep_features(const std::vector<int>& timesteps, Index width) {
    Matrix m(static_cast<Index>(timesteps.size()), width);
    for (size_t b = 0; b < timesteps.size(); ++b) {
        for (Index i = 0; i < width; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
            const double a = static_cast<double>(timesteps[b]) * freq;
            m(static_cast<Index>(b), i) = (i % 2 == 0) ? std::sin(a) : std::cos(a);
        }
    }
    return m;
}

Matrix frame_positions(Index positions, Index width) {
    Matrix pe(positions, width);
    for (Index p = 0; p < positions; ++p) {
        for (Index i = 0; i < width; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
            pe(p, i) = (i % 2 == 0) ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
        }
    }
    return pe;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> labels) : labels_(std::move(labels)) {
    for (auto& l : labels_) l = trim(l);
    std::sort(labels_.begin(), labels_.end());
    labels_.erase(std::unique(labels_.begin(), labels_.end()), labels_.end());
    if (!labels_.empty() && labels_.front().empty()) throw std::invalid_argument("vocabulary: empty label");
}

std::vector<std::string> Vocabulary::split(const std::string& condition) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : condition + ",") {
        if (ch == ',' || ch == '+') {
            if (std::string t = trim(cur); !t.empty()) out.push_back(std::move(t));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    return out;
}

std::vector<int> Vocabulary::encode(const std::string& condition) const {
    std::vector<int> ids;
    for (const std::string& label : split(condition)) {
        const auto it = std::lower_bound(labels_.begin(), labels_.end(), label);
        if (it == labels_.end() || *it != label) {
            throw std::invalid_argument("unknown condition label '" + label + "'");
        }
        ids.push_back(static_cast<int>(it - labels_.begin()));
    }
    return ids;
}

void DenoiserConfig::validate() const {
    if (input_dim < 1 || latent < 1 || layers < 0 || heads < 1 || ff_dim < 1) {
        throw std::invalid_argument("denoiser config: dimensions must be positive");
    }
    if (latent % heads != 0) throw std::invalid_argument("denoiser config: latent must be divisible by heads");
    const auto d = static_cast<size_t>(input_dim);
    if (data_mean.size() != data_scale.size() || (!data_mean.empty() && data_mean.size() != d)) {
        throw std::invalid_argument("denoiser config: data_mean/data_scale must be empty or have input_dim entries");
    }
    for (double s : data_scale) {
        if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("denoiser config: data_scale must be positive");
    }
}

Matrix DenoiserConfig::normalize(const Matrix& frames) const {
    if (!normalized()) return frames;
    const auto mean = Eigen::Map<const Eigen::RowVectorXd>(data_mean.data(), input_dim);
    const auto scale = Eigen::Map<const Eigen::RowVectorXd>(data_scale.data(), input_dim);
    return (frames.rowwise() - mean).array().rowwise() / scale.array();
}

Matrix DenoiserConfig::denormalize(const Matrix& frames) const {
    if (!normalized()) return frames;
    const auto mean = Eigen::Map<const Eigen::RowVectorXd>(data_mean.data(), input_dim);
    const auto scale = Eigen::Map<const Eigen::RowVectorXd>(data_scale.data(), input_dim);
    return (frames.array().rowwise() * scale.array()).matrix().rowwise() + mean;
}

json to_json(const DenoiserConfig& cfg) {
    return {{"input_dim", cfg.input_dim}, {"latent", cfg.latent},   {"layers", cfg.layers},
            {"heads", cfg.heads},         {"ff_dim", cfg.ff_dim},   {"vocab", cfg.vocab},
            {"prediction", cfg.prediction == Prediction::X0 ? "x0" : "epsilon"},
            {"init_seed", cfg.init_seed}, {"data_mean", cfg.data_mean}, {"data_scale", cfg.data_scale}};
}

DenoiserConfig denoiser_config_from_json(const json& doc) {
    DenoiserConfig cfg;
    cfg.input_dim = doc.at("input_dim").get<int>();
    cfg.latent = doc.at("latent").get<int>();
    cfg.layers = doc.at("layers").get<int>();
    cfg.heads = doc.at("heads").get<int>();
    cfg.ff_dim = doc.at("ff_dim").get<int>();
    cfg.vocab = doc.at("vocab").get<std::vector<std::string>>();
    const std::string pred = doc.at("prediction").get<std::string>();
    if (pred != "x0" && pred != "epsilon") throw std::invalid_argument("denoiser config: unknown prediction " + pred);
    cfg.prediction = pred == "x0" ? Prediction::X0 : Prediction::Epsilon;
    cfg.init_seed = doc.value("init_seed", uint64_t{0});
    cfg.data_mean = doc.value("data_mean", std::vector<double>{});
    cfg.data_scale = doc.value("data_scale", std::vector<double>{});
    cfg.validate();
    return cfg;
}

std::vector<DenoiserNet::View> DenoiserNet::layout(const DenoiserConfig& cfg) {
    const Index d = cfg.input_dim;
    const Index l = cfg.latent;
    const Index f = cfg.ff_dim;
    const auto v = static_cast<Index>(Vocabulary(cfg.vocab).size());
    std::vector<View> views;
    size_t offset = 0;
    auto add = [&](std::string name, Index rows, Index cols) {
        views.push_back({std::move(name), offset, rows, cols});
        offset += static_cast<size_t>(rows * cols);
    };
    add("in.w", d, l);
    add("in.b", 1, l);
    add("time.w1", l, l);
    add("time.b1", 1, l);
    add("time.w2", l, l);
    add("time.b2", 1, l);
    add("cond.table", v, l);
    add("cond.null", 1, l);
    add("cond.w", l, l);
    add("cond.b", 1, l);
    for (int i = 0; i < cfg.layers; ++i) {
        for (const char* p : {"wq", "wk", "wv"}) {
            add(block_name(i, p), l, l);
            add(block_name(i, (std::string("b") + p[1]).c_str()), 1, l);
        }
        add(block_name(i, "wo"), l, l);
        add(block_name(i, "bo"), 1, l);
        add(block_name(i, "ln1.g"), 1, l);
        add(block_name(i, "ln1.b"), 1, l);
        add(block_name(i, "ff.w1"), l, f);
        add(block_name(i, "ff.b1"), 1, f);
        add(block_name(i, "ff.w2"), f, l);
        add(block_name(i, "ff.b2"), 1, l);
        add(block_name(i, "ln2.g"), 1, l);
        add(block_name(i, "ln2.b"), 1, l);
    }
    add("out.w", l, d);
    add("out.b", 1, d);
    return views;
}

DenoiserNet::DenoiserNet(DenoiserConfig cfg) : cfg_(std::move(cfg)), vocab_(cfg_.vocab) {
    cfg_.validate();
    cfg_.vocab = vocab_.labels();
    views_ = layout(cfg_);
    for (size_t i = 0; i < views_.size(); ++i) index_[views_[i].name] = i;
    const View& last = views_.back();
    params_.assign(last.offset + static_cast<size_t>(last.rows * last.cols), 0.0);

    std::mt19937_64 rng(cfg_.init_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const View& v : views_) {
        const std::string leaf = v.name.substr(v.name.rfind('.') + 1);
        const bool bias = leaf.front() == 'b';
        const bool gain = leaf == "g";
        double stddev = 1.0 / std::sqrt(static_cast<double>(v.rows));
        if (v.name == "cond.table" || v.name == "cond.null") stddev = 1.0;
        for (Index k = 0; k < v.rows * v.cols; ++k) {
            double& p = params_[v.offset + static_cast<size_t>(k)];
            if (gain) {
                p = 1.0;
            } else if (bias) {
                p = 0.0;
            } else {
                p = stddev * normal(rng);
            }
        }
    }
}

const DenoiserNet::View& DenoiserNet::view(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("denoiser: no parameter named " + name);
    return views_[it->second];
}

Matrix DenoiserNet::get(const std::string& name) const {
    const View& v = view(name);
    return Eigen::Map<const Matrix>(params_.data() + v.offset, v.rows, v.cols);
}

void DenoiserNet::set(const std::string& name, const Matrix& value) {
    const View& v = view(name);
    if (value.rows() != v.rows || value.cols() != v.cols) throw std::invalid_argument("denoiser: shape mismatch for " + name);
    Eigen::Map<Matrix>(params_.data() + v.offset, v.rows, v.cols) = value;
}

Var DenoiserNet::forward(ad::Tape& tape, const DenoiserInput& in, std::vector<Var>* leaves) const {
    const Index batch = in.batch();
    const Index frames = in.frames;
    const Index width = cfg_.latent;
    if (batch < 1 || frames < 1) throw std::invalid_argument("denoiser: empty batch");
    if (in.x_t.rows() != batch * frames || in.x_t.cols() != cfg_.input_dim) {
        throw std::invalid_argument("denoiser: x_t must be (B * frames) x " + std::to_string(cfg_.input_dim));
    }
    if (static_cast<Index>(in.tokens.size()) != batch || static_cast<Index>(in.use_null.size()) != batch) {
        throw std::invalid_argument("denoiser: tokens/use_null must have one entry per sample");
    }
    if (!in.frame_valid.empty() && static_cast<Index>(in.frame_valid.size()) != batch * frames) {
        throw std::invalid_argument("denoiser: frame_valid must have one flag per frame");
    }

    std::vector<Var> p;
    p.reserve(views_.size());
    for (const View& v : views_) {
        Matrix m = Eigen::Map<const Matrix>(params_.data() + v.offset, v.rows, v.cols);
        p.push_back(leaves ? tape.variable(std::move(m)) : tape.constant(std::move(m)));
    }
    if (leaves) *leaves = p;
    const auto P = [&](const std::string& name) { return p[index_.at(name)]; };

    const Var x = linear(tape.constant(in.x_t), P("in.w"), P("in.b"));

    const Var t_feat = tape.constant(timestep_features(in.timesteps, width));
    const Var t_emb = linear(silu(linear(t_feat, P("time.w1"), P("time.b1"))), P("time.w2"), P("time.b2"));

    const Index vocab = vocab_.size();
    Matrix pool = Matrix::Zero(batch, vocab);
    Matrix null_sel = Matrix::Zero(batch, 1);
    for (Index b = 0; b < batch; ++b) {
        const auto& toks = in.tokens[static_cast<size_t>(b)];
        if (in.use_null[static_cast<size_t>(b)] || toks.empty()) {
            null_sel(b, 0) = 1.0;
            continue;
        }
        for (int id : toks) {
            if (id < 0 || id >= vocab) throw std::out_of_range("denoiser: token id out of range");
            pool(b, id) += 1.0 / static_cast<double>(toks.size());
        }
    }
    const Var cond_vec = add(matmul(tape.constant(std::move(pool)), P("cond.table")),
                             matmul(tape.constant(std::move(null_sel)), P("cond.null")));
    const Var emb = add(t_emb, linear(cond_vec, P("cond.w"), P("cond.b")));

    // Per-sample token order: [emb_b, frame_b0, ..., frame_b(N-1)].
    const Index seq_len = frames + 1;
    std::vector<Index> order;
    order.reserve(static_cast<size_t>(batch * seq_len));
    for (Index b = 0; b < batch; ++b) {
        order.push_back(b);
        for (Index i = 0; i < frames; ++i) order.push_back(batch + b * frames + i);
    }
    const Var parts[] = {emb, x};
    Var h = gather_rows(concat_rows(parts), order);
    h = add(h, tape.constant(frame_positions(seq_len, width).replicate(batch, 1)));

    ad::AttentionLayout attn;
    attn.groups = batch;
    attn.heads = cfg_.heads;
    if (!in.frame_valid.empty()) {
        attn.key_valid.reserve(static_cast<size_t>(batch * seq_len));
        for (Index b = 0; b < batch; ++b) {
            attn.key_valid.push_back(1);
            for (Index i = 0; i < frames; ++i) attn.key_valid.push_back(in.frame_valid[static_cast<size_t>(b * frames + i)]);
        }
    }
    for (int i = 0; i < cfg_.layers; ++i) {
        const auto B = [&](const char* leaf) { return P(block_name(i, leaf)); };
        const Var q = linear(h, B("wq"), B("bq"));
        const Var k = linear(h, B("wk"), B("bk"));
        const Var v = linear(h, B("wv"), B("bv"));
        const Var a = linear(ad::attention(q, k, v, attn), B("wo"), B("bo"));
        h = layer_norm(add(h, a), B("ln1.g"), B("ln1.b"));
        const Var f = linear(gelu(linear(h, B("ff.w1"), B("ff.b1"))), B("ff.w2"), B("ff.b2"));
        h = layer_norm(add(h, f), B("ln2.g"), B("ln2.b"));
    }

    std::vector<Index> frame_rows;
    frame_rows.reserve(static_cast<size_t>(batch * frames));
    for (Index b = 0; b < batch; ++b) {
        for (Index i = 0; i < frames; ++i) frame_rows.push_back(b * seq_len + 1 + i);
    }
    return linear(gather_rows(h, frame_rows), P("out.w"), P("out.b"));
}

Matrix DenoiserNet::predict(const DenoiserInput& in) const {
    ad::Tape tape;
    return forward(tape, in, nullptr).value();
}

std::vector<double> DenoiserNet::flatten_grad(const std::vector<Var>& leaves) const {
    if (leaves.size() != views_.size()) throw std::invalid_argument("denoiser: leaf count mismatch");
    std::vector<double> grad(params_.size(), 0.0);
    for (size_t i = 0; i < views_.size(); ++i) {
        const Matrix& g = leaves[i].grad();
        if (g.size() == 0) continue;
        std::copy(g.data(), g.data() + g.size(), grad.begin() + static_cast<std::ptrdiff_t>(views_[i].offset));
    }
    return grad;
}

void save_checkpoint(const DenoiserNet& net, const std::filesystem::path& manifest) {
    std::filesystem::path blob = manifest;
    blob.replace_extension(".bin");
    json layout = json::array();
    for (const auto& v : net.views()) {
        layout.push_back({{"name", v.name}, {"offset", v.offset}, {"rows", v.rows}, {"cols", v.cols}});
    }
    const json doc = {{"format", "dmck-v1"},
                      {"config", to_json(net.config())},
                      {"param_count", net.param_count()},
                      {"layout", layout},
                      {"blob", blob.filename().string()}};
    write_f32_blob(blob, net.params());
    write_text_file(manifest, doc.dump(1) + "\n");
}

DenoiserNet load_checkpoint(const std::filesystem::path& manifest) {
    json doc;
    try {
        doc = json::parse(read_text_file(manifest));
    } catch (const json::exception& e) {
        throw std::runtime_error(manifest.string() + ": " + e.what());
    }
    if (doc.value("format", "") != "dmck-v1") throw std::runtime_error(manifest.string() + ": not a dmck-v1 checkpoint");
    DenoiserNet net(denoiser_config_from_json(doc.at("config")));
    const json& layout = doc.at("layout");
    if (layout.size() != net.views().size()) throw std::runtime_error(manifest.string() + ": layout mismatch");
    for (size_t i = 0; i < layout.size(); ++i) {
        const auto& v = net.views()[i];
        if (layout[i].at("name").get<std::string>() != v.name || layout[i].at("offset").get<size_t>() != v.offset ||
            layout[i].at("rows").get<Index>() != v.rows || layout[i].at("cols").get<Index>() != v.cols) {
            throw std::runtime_error(manifest.string() + ": layout entry " + std::to_string(i) + " does not match config");
        }
    }
    const std::vector<double> values = read_f32_blob(manifest.parent_path() / doc.at("blob").get<std::string>());
    if (values.size() != net.param_count()) throw std::runtime_error(manifest.string() + ": parameter blob size mismatch");
    std::copy(values.begin(), values.end(), net.params().begin());
    return net;
}

}  // namespace pkit
