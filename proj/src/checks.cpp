#include "pkit/checks.hpp"

#include "pkit/attention.hpp"
#include "pkit/diffusion.hpp"
#include "pkit/flame.hpp"
#include "pkit/metrics.hpp"
#include "pkit/oracles.hpp"
#include "pkit/render.hpp"
#include "pkit/schedule.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace pkit {

using ad::Var;
using Eigen::Index;

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::Simple: return "simple";
        case LossKind::Velocity: return "velocity";
        case LossKind::Combined: return "combined";
        case LossKind::Epsilon: return "epsilon";
    }
    return "?";
}

std::string to_string(KernelKind kind) {
    switch (kind) {
        case KernelKind::Attention: return "attention";
        case KernelKind::Reference: return "reference";
        case KernelKind::Temporal: return "temporal";
        case KernelKind::View: return "view";
    }
    return "?";
}

namespace {

Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

Tensor gaussian_tensor(std::vector<Tensor::Index> shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : t.data()) v = n(rng);
    return t;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace

double loss_gradient_error(LossKind kind, uint64_t seed) {
    std::mt19937_64 rng(seed);
    DenoiserConfig arch;
    arch.input_dim = uniform_int(rng, 1, 3);
    arch.latent = 8;
    arch.heads = uniform_int(rng, 1, 2);
    arch.ff_dim = 16;
    arch.vocab = {"a", "b"};
    arch.prediction = kind == LossKind::Epsilon ? Prediction::Epsilon : Prediction::X0;
    arch.init_seed = seed;
    DenoiserNet net(arch);

    const NoiseSchedule sched = cosine_schedule(20);
    Batch batch;
    const int samples = uniform_int(rng, 1, 3);
    batch.frames = uniform_int(rng, 2, 4);
    batch.f0 = gaussian(samples * batch.frames, arch.input_dim, rng);
    batch.frame_valid.assign(static_cast<size_t>(samples * batch.frames), 1);
    for (int b = 0; b < samples; ++b) {
        const int length = uniform_int(rng, 1, static_cast<int>(batch.frames));
        for (Index i = length; i < batch.frames; ++i) batch.frame_valid[static_cast<size_t>(b * batch.frames + i)] = 0;
        batch.tokens.push_back(b % 2 == 0 ? std::vector<int>{0} : std::vector<int>{0, 1});
    }
    const NoiseDraw draw = draw_noise(batch, sched, 0.3, rng);

    LossWeights weights{1.0, 0.0};
    if (kind == LossKind::Velocity) weights = {0.0, 1.0};
    if (kind == LossKind::Combined) weights = {1.0, 0.5};
    const auto evaluate = [&](const DenoiserNet& n, bool grad) {
        return kind == LossKind::Epsilon ? eps_loss(n, batch, draw, sched, grad) : loss(n, batch, draw, sched, weights, grad);
    };

    const LossResult analytic = evaluate(net, true);
    const std::vector<double> x(net.params().begin(), net.params().end());
    DenoiserNet probe = net;
    const auto f = [&](std::span<const double> p) {
        std::copy(p.begin(), p.end(), probe.params().begin());
        return evaluate(probe, false).total;
    };
    // Central differences resolve gradients only to about eps |f| / h, so the
    // denominator floor scales with the loss value.
    const double floor = 1e-6 * std::max(1.0, std::abs(analytic.total));
    return oracle::max_relative_error(analytic.grad, oracle::numeric_gradient(f, x), floor);
}

double kernel_gradient_error(KernelKind kind, uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int heads = uniform_int(rng, 1, 2);
    const Index c = uniform_int(rng, 2, 3);
    const Index d = heads * uniform_int(rng, 1, 2);
    AttentionWeights w = AttentionWeights::random(c, d, rng, 0.7, heads);

    // Inputs and shapes for each kernel; at most six tokens per attention.
    std::vector<Tensor::Index> shape;
    Matrix x, y;
    switch (kind) {
        case KernelKind::Attention:
        case KernelKind::Reference:
            x = gaussian(uniform_int(rng, 1, 3), c, rng);
            y = gaussian(uniform_int(rng, 0, 3), c, rng);
            break;
        case KernelKind::Temporal:
            shape = {1, uniform_int(rng, 1, 4), uniform_int(rng, 1, 2), uniform_int(rng, 1, 2), c};
            break;
        case KernelKind::View:
            shape = {1, uniform_int(rng, 1, 4), uniform_int(rng, 1, 2), 1, uniform_int(rng, 1, 2), c};
            break;
    }
    if (!shape.empty()) {
        Index rows = 1;
        for (size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
        x = gaussian(rows, c, rng);
    }

    // Flat parameter vector: x | y | wq | wk | wv | wo.
    std::vector<Matrix*> parts = {&x, &y, &w.wq, &w.wk, &w.wv, &w.wo};
    std::vector<double> flat;
    for (Matrix* m : parts) flat.insert(flat.end(), m->data(), m->data() + m->size());
    const auto unpack = [&](std::span<const double> p) {
        size_t at = 0;
        for (Matrix* m : parts) {
            std::copy(p.begin() + static_cast<std::ptrdiff_t>(at), p.begin() + static_cast<std::ptrdiff_t>(at + m->size()),
                      m->data());
            at += static_cast<size_t>(m->size());
        }
    };

    Matrix readout;
    const auto run = [&](ad::Tape& tape, bool grad, std::vector<Var>* leaves) {
        const auto leaf = [&](const Matrix& m) { return grad ? tape.variable(m) : tape.constant(m); };
        const Var xv = leaf(x), yv = leaf(y);
        AttentionVars av{leaf(w.wq), leaf(w.wk), leaf(w.wv), leaf(w.wo), w.heads};
        if (leaves) *leaves = {xv, yv, av.wq, av.wk, av.wv, av.wo};
        Var out;
        switch (kind) {
            case KernelKind::Attention: {
                ad::AttentionLayout layout;
                layout.heads = w.heads;
                const Var kv = y.rows() > 0 ? ad::concat_rows(std::vector<Var>{xv, yv}) : xv;
                out = ad::attention(matmul(xv, av.wq), matmul(kv, av.wk), matmul(kv, av.wv), layout);
                break;
            }
            case KernelKind::Reference: out = reference_attention(xv, yv, av); break;
            case KernelKind::Temporal: out = temporal_attention(xv, shape, av); break;
            case KernelKind::View: out = view_attention(xv, shape, av); break;
        }
        if (readout.size() == 0) {
            std::mt19937_64 r(seed ^ 0x9e3779b97f4a7c15ULL);
            readout = gaussian(out.rows(), out.cols(), r);
        }
        return sum(hadamard(out, tape.constant(readout)));
    };

    ad::Tape tape;
    std::vector<Var> leaves;
    const Var total = run(tape, true, &leaves);
    tape.backward(total);
    std::vector<double> analytic;
    for (const Var& v : leaves) {
        const Matrix& g = v.grad();
        if (g.size() == 0) {
            analytic.insert(analytic.end(), static_cast<size_t>(v.value().size()), 0.0);
        } else {
            analytic.insert(analytic.end(), g.data(), g.data() + g.size());
        }
    }
    const std::vector<double> x0 = flat;
    const auto f = [&](std::span<const double> p) {
        unpack(p);
        ad::Tape t;
        return run(t, false, nullptr).value()(0, 0);
    };
    const std::vector<double> numeric = oracle::numeric_gradient(f, x0);
    unpack(x0);
    return oracle::max_relative_error(analytic, numeric);
}

PatchDemoResult run_patch_demo(uint64_t seed, int train_steps) {
    constexpr int kSize = 32, kPatch = 8, kFrames = 4;
    constexpr Index kChannels = 8;
    const FlameModel model = make_mini_flame();
    const Dataset clip = synth_dataset({find_pattern(default_patterns(Channel::Pose), "nodding")}, 1, kFrames, seed);
    const std::vector<FlameParams> params =
        assemble_frames(model, Eigen::VectorXd::Zero(model.n_shape()), &clip.front().seq, nullptr);
    const std::vector<CameraPose> cams = parse_views("-30,0,0;0,0,0;30,0,0;60,0,0");
    const FrameGrid grid = render_sequence(model, params, cams, kSize, kSize, 1);

    const Index m = static_cast<Index>(cams.size());
    const Index grid_side = kSize / kPatch;
    std::mt19937_64 rng(seed);
    const Matrix embed = gaussian(kPatch * kPatch * 3, kChannels, rng, 1.0 / std::sqrt(kPatch * kPatch * 3.0));
    const std::vector<Tensor::Index> shape = {1, m, kFrames, grid_side, grid_side, kChannels};
    Matrix clean(m * kFrames * grid_side * grid_side, kChannels);
    Index row = 0;
    for (Index v = 0; v < m; ++v) {
        for (Index t = 0; t < kFrames; ++t) {
            const RenderFrame& f = grid[static_cast<size_t>(v)][static_cast<size_t>(t)];
            for (Index py = 0; py < grid_side; ++py) {
                for (Index px = 0; px < grid_side; ++px) {
                    Eigen::RowVectorXd patch(kPatch * kPatch * 3);
                    Index k = 0;
                    for (int y = 0; y < kPatch; ++y) {
                        for (int x = 0; x < kPatch; ++x) {
                            const size_t at = 3 * (static_cast<size_t>(py * kPatch + y) * kSize + static_cast<size_t>(px * kPatch + x));
                            for (int ch = 0; ch < 3; ++ch) patch[k++] = f.rgb[at + static_cast<size_t>(ch)] / 255.0;
                        }
                    }
                    clean.row(row++) = patch * embed;
                }
            }
        }
    }

    const NoiseSchedule sched = cosine_schedule(100);
    const Matrix noisy = q_sample(clean, 30, gaussian(clean.rows(), clean.cols(), rng), sched);
    const std::vector<Tensor::Index> per_view = {shape[0] * shape[1], shape[2], shape[3], shape[4], shape[5]};

    AttentionWeights temporal = AttentionWeights::random(kChannels, kChannels, rng, 0.3);
    AttentionWeights view = AttentionWeights::random(kChannels, kChannels, rng, 0.3);
    Matrix readout = Matrix::Identity(kChannels, kChannels);
    std::vector<Matrix*> weights = {&temporal.wq, &temporal.wk, &temporal.wv, &temporal.wo,
                                    &view.wq,     &view.wk,     &view.wv,     &view.wo,     &readout};

    // x_t -> temporal attention per view -> view attention -> linear readout.
    const auto forward = [&](ad::Tape& tape, const Matrix& input, bool grad, std::vector<Var>* leaves) {
        const auto leaf = [&](const Matrix& w) { return grad ? tape.variable(w) : tape.constant(w); };
        std::vector<Var> vars;
        for (Matrix* w : weights) vars.push_back(leaf(*w));
        if (leaves) *leaves = vars;
        const AttentionVars tv{vars[0], vars[1], vars[2], vars[3], 1};
        const AttentionVars vv{vars[4], vars[5], vars[6], vars[7], 1};
        const Var h = temporal_attention(tape.constant(input), per_view, tv);
        return matmul(view_attention(h, shape, vv), vars[8]);
    };
    const Matrix weight_all = Matrix::Constant(clean.rows(), clean.cols(), 1.0 / static_cast<double>(clean.size()));

    PatchDemoResult result;
    std::vector<Matrix> m1, m2;
    for (Matrix* w : weights) {
        m1.push_back(Matrix::Zero(w->rows(), w->cols()));
        m2.push_back(Matrix::Zero(w->rows(), w->cols()));
    }
    for (int step = 0; step <= train_steps; ++step) {
        ad::Tape tape;
        std::vector<Var> leaves;
        const Var pred = forward(tape, noisy, true, &leaves);
        const Var l = weighted_sum_squares(sub(pred, tape.constant(clean)), weight_all);
        if (step == 0) result.initial_loss = l.value()(0, 0);
        result.final_loss = l.value()(0, 0);
        if (step == train_steps) break;
        tape.backward(l);
        for (size_t i = 0; i < weights.size(); ++i) {
            const Matrix& g = leaves[i].grad();
            if (g.size() == 0) continue;
            m1[i] = 0.9 * m1[i] + 0.1 * g;
            m2[i] = 0.999 * m2[i] + 0.001 * g.cwiseProduct(g);
            const double c1 = 1.0 - std::pow(0.9, step + 1), c2 = 1.0 - std::pow(0.999, step + 1);
            weights[i]->array() -= 1e-2 * (m1[i].array() / c1) / ((m2[i].array() / c2).sqrt() + 1e-8);
        }
    }

    // Reversing the view axis commutes with the network.
    const auto reverse_views = [&](const Matrix& rows) {
        Matrix out(rows.rows(), rows.cols());
        const Index block = rows.rows() / m;
        for (Index v = 0; v < m; ++v) out.middleRows((m - 1 - v) * block, block) = rows.middleRows(v * block, block);
        return out;
    };
    ad::Tape a, b;
    const Matrix base = forward(a, noisy, false, nullptr).value();
    const Matrix permuted = forward(b, reverse_views(noisy), false, nullptr).value();
    result.equivariance_error = (permuted - reverse_views(base)).cwiseAbs().maxCoeff();
    result.finite = base.allFinite() && std::isfinite(result.final_loss);
    return result;
}

namespace {

struct Suite {
    std::vector<CheckResult> results;
    const std::function<void(const CheckResult&)>& report;

    void run(const std::string& name, const std::function<std::string(bool&)>& body) {
        CheckResult r;
        r.name = name;
        const auto start = std::chrono::steady_clock::now();
        try {
            bool ok = true;
            r.detail = body(ok);
            r.passed = ok;
        } catch (const std::exception& e) {
            r.passed = false;
            r.detail = std::string("exception: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        results.push_back(r);
        if (report) report(r);
    }
};

std::string fmt(const char* label, double value) {
    std::ostringstream s;
    s << label << "=" << value;
    return s.str();
}

FlameParams random_params(const FlameModel& model, std::mt19937_64& rng) {
    FlameParams p = FlameParams::zeros(model);
    std::normal_distribution<double> n(0.0, 1.0), a(0.0, 0.4);
    for (Index i = 0; i < p.shape.size(); ++i) p.shape[i] = n(rng);
    for (Index i = 0; i < p.expr.size(); ++i) p.expr[i] = n(rng);
    for (Index i = 0; i < p.pose.size(); ++i) p.pose[i] = a(rng);
    return p;
}

}  // namespace

std::vector<CheckResult> run_checks(uint64_t seed, const std::function<void(const CheckResult&)>& report) {
    Suite suite{{}, report};
    std::mt19937_64 rng(seed);

    suite.run("rot6d round trip", [&](bool& ok) {
        double worst = 0.0, ortho = 0.0;
        std::normal_distribution<double> n(0.0, 1.0);
        for (int i = 0; i < 1000; ++i) {
            const Mat3 r = oracle::random_rotation(rng);
            worst = std::max(worst, (rot6d_to_matrix(matrix_to_rot6d(r)) - r).cwiseAbs().maxCoeff());
            Rot6d noisy;
            for (int k = 0; k < 6; ++k) noisy.values[k] = n(rng);
            const Mat3 d = rot6d_to_matrix(noisy);
            ortho = std::max({ortho, (d.transpose() * d - Mat3::Identity()).cwiseAbs().maxCoeff(), std::abs(d.determinant() - 1.0)});
        }
        ok = worst < 1e-12 && ortho < 1e-6;
        return fmt("roundtrip", worst) + " " + fmt("orthonormality", ortho);
    });

    const FlameModel model = make_mini_flame();
    suite.run("flame vs dense oracle", [&](bool& ok) {
        double blend = 0.0, full = 0.0;
        for (int i = 0; i < 200; ++i) {
            const FlameParams p = random_params(model, rng);
            blend = std::max(blend, (blend_shapes(model, p) - oracle::blend_shapes(model, p)).cwiseAbs().maxCoeff());
            full = std::max(full, (flame_forward(model, p).vertices - oracle::flame_forward(model, p)).cwiseAbs().maxCoeff());
        }
        const Mesh rest = flame_forward(model, FlameParams::zeros(model));
        const double rest_err =
            (rest.vertices - Eigen::Map<const VertexMatrix>(model.template_vertices.data(), model.n_vertices(), 3))
                .cwiseAbs()
                .maxCoeff();
        ok = blend < 1e-10 && full < 1e-9 && rest_err == 0.0;
        return fmt("blend", blend) + " " + fmt("forward", full) + " " + fmt("rest", rest_err);
    });

    suite.run("cosine schedule", [&](bool& ok) {
        const NoiseSchedule s = cosine_schedule(1000);
        bool monotone = true;
        for (size_t t = 1; t < s.alpha_bars.size(); ++t) monotone = monotone && s.alpha_bars[t] < s.alpha_bars[t - 1];
        ok = monotone && s.alpha_bars.front() > 0.999 && s.alpha_bars.back() < 1e-4;
        return fmt("abar0", s.alpha_bars.front()) + " " + fmt("abar999", s.alpha_bars.back());
    });

    suite.run("q_sample moments", [&](bool& ok) {
        const NoiseSchedule s = cosine_schedule(1000);
        constexpr int kDraws = 100000;
        const int t = 400;
        const Matrix f0 = Matrix::Constant(kDraws, 1, 1.5);
        const Matrix x = q_sample(f0, t, gaussian(kDraws, 1, rng), s);
        const double mean = x.mean();
        const double var = (x.array() - mean).square().sum() / (kDraws - 1);
        const double ab = s.alpha_bars[t];
        const double mean_sigma = std::sqrt((1 - ab) / kDraws);
        const double var_sigma = (1 - ab) * std::sqrt(2.0 / (kDraws - 1));
        ok = std::abs(mean - std::sqrt(ab) * 1.5) < 3 * mean_sigma && std::abs(var - (1 - ab)) < 3 * var_sigma;
        return fmt("mean", mean) + " " + fmt("var", var);
    });

    suite.run("loss gradients", [&](bool& ok) {
        double worst = 0.0;
        for (LossKind k : {LossKind::Simple, LossKind::Velocity, LossKind::Combined, LossKind::Epsilon}) {
            for (int i = 0; i < 3; ++i) worst = std::max(worst, loss_gradient_error(k, rng()));
        }
        ok = worst < 1e-4;
        return fmt("max_rel_err", worst);
    });

    suite.run("kernel gradients", [&](bool& ok) {
        double worst = 0.0;
        for (KernelKind k : {KernelKind::Attention, KernelKind::Reference, KernelKind::Temporal, KernelKind::View}) {
            for (int i = 0; i < 5; ++i) worst = std::max(worst, kernel_gradient_error(k, rng()));
        }
        ok = worst < 1e-4;
        return fmt("max_rel_err", worst);
    });

    suite.run("attention loop oracles", [&](bool& ok) {
        double worst = 0.0;
        for (int i = 0; i < 20; ++i) {
            const Index c = uniform_int(rng, 1, 4);
            const int heads = uniform_int(rng, 1, 2);
            const AttentionWeights w = AttentionWeights::random(c, heads * uniform_int(rng, 1, 3), rng, 0.5, heads);
            const Matrix q = gaussian(uniform_int(rng, 1, 5), c, rng), k = gaussian(uniform_int(rng, 1, 5), c, rng);
            const Matrix v = gaussian(k.rows(), c, rng);
            worst = std::max(worst, (attention(q, k, v) - oracle::attention(q, k, v, 1.0 / std::sqrt(double(c)))).cwiseAbs().maxCoeff());
            const Matrix y = gaussian(uniform_int(rng, 0, 3), c, rng);
            worst = std::max(worst, (reference_attention(q, y, w) - oracle::reference_attention(q, y, w)).cwiseAbs().maxCoeff());
            const Tensor x5 = gaussian_tensor({uniform_int(rng, 1, 2), uniform_int(rng, 1, 3), uniform_int(rng, 1, 2), uniform_int(rng, 1, 2), c}, rng);
            const Tensor t1 = temporal_attention(x5, w), t2 = oracle::temporal_attention(x5, w);
            for (Tensor::Index e = 0; e < t1.size(); ++e) worst = std::max(worst, std::abs(t1.data()[e] - t2.data()[e]));
            const Tensor x6 = gaussian_tensor({uniform_int(rng, 1, 2), uniform_int(rng, 1, 4), uniform_int(rng, 1, 2), 1, uniform_int(rng, 1, 2), c}, rng);
            const Tensor v1 = view_attention(x6, w), v2 = oracle::view_attention(x6, w);
            for (Tensor::Index e = 0; e < v1.size(); ++e) worst = std::max(worst, std::abs(v1.data()[e] - v2.data()[e]));
        }
        ok = worst < 1e-12;
        return fmt("max_abs_err", worst);
    });

    suite.run("view permutation equivariance", [&](bool& ok) {
        bool exact = true;
        for (Tensor::Index m : {2, 3, 4}) {
            const AttentionWeights w = AttentionWeights::random(3, 4, rng, 0.5, 2);
            const Tensor x = gaussian_tensor({1, m, 2, 2, 1, 3}, rng);
            std::vector<Tensor::Index> perm(static_cast<size_t>(m));
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            const auto permute = [&](const Tensor& t) {
                Tensor out = t;
                const Tensor::Index block = t.size() / m;
                for (Tensor::Index v = 0; v < m; ++v) {
                    std::copy_n(t.data().begin() + perm[static_cast<size_t>(v)] * block, block, out.data().begin() + v * block);
                }
                return out;
            };
            exact = exact && view_attention(permute(x), w) == permute(view_attention(x, w));
        }
        ok = exact;
        return exact ? "m=2,3,4 exact" : "mismatch";
    });

    suite.run("reshape index map", [&](bool& ok) {
        bool good = true;
        const std::vector<Tensor::Index> s6 = {2, 3, 2, 2, 3, 2};
        Tensor x(s6);
        for (Tensor::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<double>(i);
        for (ReshapePattern p : {ReshapePattern::MergeAllButView, ReshapePattern::MergeViewIntoBatch}) {
            const Tensor y = reshape_contract(x, p);
            std::vector<Tensor::Index> c(6);
            for (c[0] = 0; c[0] < s6[0]; ++c[0])
                for (c[1] = 0; c[1] < s6[1]; ++c[1])
                    for (c[2] = 0; c[2] < s6[2]; ++c[2])
                        for (c[3] = 0; c[3] < s6[3]; ++c[3])
                            for (c[4] = 0; c[4] < s6[4]; ++c[4])
                                for (c[5] = 0; c[5] < s6[5]; ++c[5])
                                    good = good && y.data()[oracle::contracted_index(p, s6, c)] == x.data()[x.offset(c)];
            good = good && reshape_expand(y, p, s6) == x;
        }
        const std::vector<Tensor::Index> s5 = {2, 3, 2, 3, 2};
        Tensor x5(s5);
        for (Tensor::Index i = 0; i < x5.size(); ++i) x5.data()[i] = static_cast<double>(i);
        const Tensor y5 = reshape_contract(x5, ReshapePattern::MergeSpatialForTime);
        for (Tensor::Index i = 0; i < x5.size(); ++i) {
            std::vector<Tensor::Index> c(5);
            Tensor::Index rem = i;
            for (int d = 4; d >= 0; --d) {
                c[static_cast<size_t>(d)] = rem % s5[static_cast<size_t>(d)];
                rem /= s5[static_cast<size_t>(d)];
            }
            good = good && y5.data()[oracle::contracted_index(ReshapePattern::MergeSpatialForTime, s5, c)] == x5.data()[i];
        }
        ok = good;
        return good ? "all patterns match enumeration" : "mismatch";
    });

    suite.run("rasterizer coverage", [&](bool& ok) {
        int disagreements = 0, tested = 0;
        std::uniform_real_distribution<double> u(-0.05, 0.05);
        for (int i = 0; i < 30; ++i) {
            Mesh mesh;
            mesh.vertices.resize(3, 3);
            for (int v = 0; v < 3; ++v) mesh.vertices.row(v) << u(rng), u(rng), 0.0;
            mesh.faces = {{0, 1, 2}};
            CameraPose cam;
            const RenderFrame f = render_mesh(mesh, cam, 24, 24);
            const Vec3 center = mesh_centroid(mesh);
            std::array<Eigen::Vector2d, 3> p;
            for (int v = 0; v < 3; ++v) p[static_cast<size_t>(v)] = project_point(mesh.vertices.row(v).transpose(), center, cam, 24, 24).head<2>();
            for (int y = 0; y < 24; ++y) {
                for (int x = 0; x < 24; ++x) {
                    const auto cls = oracle::point_in_triangle(p[0], p[1], p[2], {x + 0.5, y + 0.5});
                    if (cls == oracle::Coverage::Edge) continue;
                    ++tested;
                    const bool covered = std::isfinite(f.depth[static_cast<size_t>(y * 24 + x)]);
                    if (covered != (cls == oracle::Coverage::Inside)) ++disagreements;
                }
            }
        }
        ok = disagreements == 0;
        return fmt("disagreements", disagreements) + " " + fmt("pixels", tested);
    });

    suite.run("sampler collapse", [&](bool& ok) {
        const NoiseSchedule one = cosine_schedule(1);
        const Matrix c = gaussian(3, 2, rng);
        const Matrix out = sample_ddpm([&](const Matrix&, int) { return c; }, 3, 2, one, rng);
        ok = out == c;
        return ok ? "T=1 returns the prediction" : "mismatch";
    });

    suite.run("smoothing reduces variability", [&](bool& ok) {
        const Dataset data = synth_dataset(default_patterns(Channel::Pose), 5, 30, seed);
        int violations = 0;
        for (const LabeledSequence& item : data) {
            const double raw = variability(item.seq);
            const double s3 = variability(smooth(item.seq, 3));
            const double s5 = variability(smooth(item.seq, 5));
            if (!(s3 < raw) || !(s5 <= s3)) ++violations;
        }
        ok = violations == 0;
        return fmt("violations", violations);
    });

    suite.run("patch attention demo", [&](bool& ok) {
        const PatchDemoResult r = run_patch_demo(seed);
        ok = r.finite && r.final_loss < r.initial_loss && r.equivariance_error == 0.0;
        return fmt("loss0", r.initial_loss) + " " + fmt("loss", r.final_loss) + " " + fmt("equivariance", r.equivariance_error);
    });

    return suite.results;
}

}  // namespace pkit
