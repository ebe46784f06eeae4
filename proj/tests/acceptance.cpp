// One PASS/FAIL line per acceptance criterion. Arguments select criteria by
// number; none runs all of them.
#include "pkit/attention.hpp"
#include "pkit/checks.hpp"
#include "pkit/cli.hpp"
#include "pkit/diffusion.hpp"
#include "pkit/metrics.hpp"
#include "pkit/oracles.hpp"
#include "pkit/platform.hpp"
#include "pkit/render.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace pkit;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

Tensor gaussian_tensor(std::vector<Tensor::Index> shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : t.data()) v = n(rng);
    return t;
}

double max_abs(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double worst = 0.0;
    for (Tensor::Index i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

fs::path scratch_dir(const std::string& tag) {
    std::random_device rd;
    fs::path p = fs::temp_directory_path() / ("pkit-accept-" + tag + "-" + std::to_string(rd()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Verdict flame_oracle() {
    const auto start = Clock::now();
    const FlameModel m = make_mini_flame();
    std::mt19937_64 rng(1001);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        FlameParams p;
        p.shape = gaussian(m.n_shape(), 1, rng);
        p.expr = gaussian(m.n_expr(), 1, rng);
        p.pose = gaussian(m.pose_dim(), 1, rng, 0.6);
        worst = std::max(worst, (flame_forward(m, p).vertices - oracle::flame_forward(m, p)).cwiseAbs().maxCoeff());
    }
    const VertexMatrix rest = flame_forward(m, FlameParams::zeros(m)).vertices;
    bool exact = true;
    for (Eigen::Index v = 0; v < rest.rows(); ++v) {
        for (int k = 0; k < 3; ++k) exact = exact && rest(v, k) == m.template_vertices[3 * v + k];
    }
    const double t = seconds_since(start);
    return {worst < 1e-9 && exact && t < 5.0,
            "max err " + num(worst) + " over 1000 draws, template " + (exact ? "exact" : "inexact") + ", " + num(t) + " s"};
}

Verdict gradient_suite() {
    const auto start = Clock::now();
    double worst_loss = 0.0, worst_kernel = 0.0;
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        for (LossKind k : {LossKind::Simple, LossKind::Velocity, LossKind::Combined, LossKind::Epsilon}) {
            worst_loss = std::max(worst_loss, loss_gradient_error(k, seed));
        }
        for (KernelKind k : {KernelKind::Attention, KernelKind::Reference, KernelKind::Temporal, KernelKind::View}) {
            worst_kernel = std::max(worst_kernel, kernel_gradient_error(k, seed));
        }
    }
    const double t = seconds_since(start);
    return {worst_loss < 1e-4 && worst_kernel < 1e-4 && t < 60.0,
            "losses " + num(worst_loss) + ", kernels " + num(worst_kernel) + " over 20 configs each, " + num(t) + " s"};
}

Verdict schedule_moments() {
    const NoiseSchedule s = cosine_schedule(1000);
    bool monotone = true;
    for (size_t t = 1; t < s.alpha_bars.size(); ++t) monotone = monotone && s.alpha_bars[t] < s.alpha_bars[t - 1];
    const bool ends = s.alpha_bars.front() > 0.999 && s.alpha_bars.back() < 1e-4;

    std::mt19937_64 rng(1003);
    const int n = 100000;
    const double x0 = 0.8;
    const Matrix f0 = Matrix::Constant(n, 1, x0);
    double worst_sigma = 0.0;
    for (int t : {0, 250, 500, 750, 999}) {
        const Matrix x = q_sample(f0, t, gaussian(n, 1, rng), s);
        const double ab = s.alpha_bars[static_cast<size_t>(t)];
        const double var_true = 1.0 - ab;
        const double mean = x.mean();
        const double var = (x.array() - mean).square().sum() / (n - 1);
        worst_sigma = std::max(worst_sigma, std::abs(mean - std::sqrt(ab) * x0) / std::sqrt(var_true / n));
        worst_sigma = std::max(worst_sigma, std::abs(var - var_true) / (var_true * std::sqrt(2.0 / (n - 1))));
    }
    return {monotone && ends && worst_sigma < 3.0,
            "ab0 " + std::to_string(s.alpha_bars.front()) + ", ab999 " + num(s.alpha_bars.back()) + ", monotone " +
                (monotone ? "yes" : "no") + ", worst moment deviation " + num(worst_sigma) + " sigma"};
}

constexpr int kDeskSteps = 20000;

Verdict desk_training() {
    const auto start = Clock::now();
    const Dataset data = synth_dataset(default_patterns(Channel::Pose), 200, 30, 7);
    TrainConfig cfg;  // lambda 0.5, lr 1e-4, batch 64
    cfg.steps = kDeskSteps;
    cfg.seed = 1;
    DenoiserConfig arch;  // 1 layer, latent 64
    const TrainResult r = train(data, cfg, arch);
    const NoiseSchedule sched = cosine_schedule(cfg.diffusion_steps);

    SampleConfig sc;
    sc.frames = 30;
    sc.count = 100;
    std::mt19937_64 rng(11);
    std::ostringstream detail;
    bool pass = true;
    for (const std::string& label : r.net.vocab().labels()) {
        int hits = 0;
        for (const Matrix& m : sample(r.net, label, sc, sched, rng)) {
            FlameSequence s;
            s.frames = m;
            hits += classify_motion(s) == label;
        }
        detail << label << " " << hits << "% ";
        pass = pass && hits >= 90;
    }
    std::map<std::string, int> counts;
    for (const Matrix& m : sample(r.net, "", sc, sched, rng)) {
        FlameSequence s;
        s.frames = m;
        ++counts[classify_motion(s)];
    }
    double entropy = 0.0;
    for (const auto& [label, c] : counts) {
        const double p = c / 100.0;
        entropy -= p * std::log2(p);
    }
    pass = pass && entropy >= 1.0;
    const double t = seconds_since(start);
    pass = pass && t < 1800.0;
    detail << "| null entropy " << num(entropy) << " bits | " << kDeskSteps << " steps, " << num(t) << " s";
    return {pass, detail.str()};
}

Verdict smoothing() {
    const Dataset data = synth_dataset(default_patterns(Channel::Pose), 200, 30, 7);
    int bad3 = 0, bad_order = 0, constant = 0;
    for (const LabeledSequence& item : data) {
        const double raw = variability(item.seq);
        const double s3 = variability(smooth(item.seq, 3));
        const double s5 = variability(smooth(item.seq, 5));
        if (raw == 0.0) {
            ++constant;
            bad3 += s3 > raw;
        } else {
            bad3 += !(s3 < raw);
        }
        bad_order += !(s5 <= s3);
    }
    return {bad3 == 0 && bad_order == 0, std::to_string(data.size()) + " sequences, " + std::to_string(bad3) +
                                             " window-3 violations, " + std::to_string(bad_order) +
                                             " 5-vs-3 violations, " + std::to_string(constant) + " constant"};
}

Verdict attention_oracles() {
    std::mt19937_64 rng(1006);
    std::uniform_int_distribution<int> small(1, 3);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Eigen::Index c = 2 + i % 3, d = 2 + (i / 3) % 3;
        const int heads = (d % 2 == 0 && i % 2) ? 2 : 1;
        const AttentionWeights w = AttentionWeights::random(c, d, rng, 0.6, heads);
        const Matrix z = gaussian(small(rng) * 2, c, rng), y = gaussian(small(rng) * 2, c, rng);
        worst = std::max(worst, (reference_attention(z, y, w) - oracle::reference_attention(z, y, w)).cwiseAbs().maxCoeff());
        const Tensor xt = gaussian_tensor({small(rng), small(rng) + 1, small(rng), small(rng), c}, rng);
        worst = std::max(worst, max_abs(temporal_attention(xt, w), oracle::temporal_attention(xt, w)));
        const Tensor xv = gaussian_tensor({small(rng), small(rng) + 1, small(rng), small(rng), small(rng), c}, rng);
        worst = std::max(worst, max_abs(view_attention(xv, w), oracle::view_attention(xv, w)));
    }
    bool exact = true;
    for (Tensor::Index m : {2, 3, 4}) {
        for (int trial = 0; trial < 10; ++trial) {
            const AttentionWeights w = AttentionWeights::random(4, 4, rng, 0.8, 2);
            const Tensor x = gaussian_tensor({2, m, 3, 2, 2, 4}, rng);
            std::vector<Tensor::Index> perm(static_cast<size_t>(m));
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            const auto permute = [&](const Tensor& t) {
                Tensor out = t;
                const Tensor::Index block = t.size() / (t.dim(0) * m);
                for (Tensor::Index b = 0; b < t.dim(0); ++b) {
                    for (Tensor::Index v = 0; v < m; ++v) {
                        std::copy_n(t.data().begin() + (b * m + perm[static_cast<size_t>(v)]) * block, block,
                                    out.data().begin() + (b * m + v) * block);
                    }
                }
                return out;
            };
            exact = exact && view_attention(permute(x), w) == permute(view_attention(x, w));
        }
    }
    const AttentionWeights w4 = AttentionWeights::random(8, 8, rng, 0.5, 2);
    const Tensor four = gaussian_tensor({1, 4, 4, 4, 4, 8}, rng);
    const Tensor out4 = view_attention(four, w4);
    const bool m4 = out4.shape() == four.shape() && std::all_of(out4.data().begin(), out4.data().end(),
                                                                [](double v) { return std::isfinite(v); });
    return {worst < 1e-12 && exact && m4, "max oracle err " + num(worst) + " over 300 cases, equivariance " +
                                              (exact ? "exact" : "broken") + ", m=4 " + (m4 ? "ok" : "failed")};
}

Verdict renderer() {
    CameraPose cam;
    cam.distance = 2.0;
    cam.fov_y = std::numbers::pi / 3.0;
    const double focal = 256.0 / std::tan(cam.fov_y / 2.0);
    Mesh tri;
    tri.vertices.resize(3, 3);
    tri.vertices << 0.0, 0.5, 0.0, -0.5, -0.25, 0.0, 0.5, -0.25, 0.0;
    tri.faces = {{0, 1, 2}};
    const Vec3 center = mesh_centroid(tri);
    double px = 0.0;
    for (int i = 0; i < 3; ++i) {
        const Vec3 p = tri.vertices.row(i).transpose();
        const Vec3 uv = project_point(p, center, cam, 512, 512);
        const double z = cam.distance - (p - center).z();
        px = std::max(px, std::hypot(uv.x() - (256.0 + focal * (p - center).x() / z),
                                     uv.y() - (256.0 - focal * (p - center).y() / z)));
    }

    const FlameModel model = make_mini_flame();
    bool yaw_exact = true;
    std::mt19937_64 rng(1007);
    for (double yaw : {-0.6, 0.3, 1.1}) {
        FlameParams p;
        p.shape = gaussian(model.n_shape(), 1, rng);
        p.expr = gaussian(model.n_expr(), 1, rng);
        p.pose = gaussian(model.pose_dim(), 1, rng, 0.2);
        const Mesh mesh = flame_forward(model, p);
        CameraPose turned;
        turned.yaw = yaw;
        const Mat3 back = turned.rotation().transpose();
        Mesh rotated = mesh;
        const Vec3 c = mesh_centroid(mesh);
        for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v) {
            rotated.vertices.row(v) = (back * (Vec3(mesh.vertices.row(v).transpose()) - c) + c).transpose();
        }
        yaw_exact = yaw_exact && render_mesh(mesh, turned, 128, 128).rgb == render_mesh(rotated, CameraPose{}, 128, 128).rgb;
    }

    const Dataset nod = synth_dataset({find_pattern(default_patterns(Channel::Pose), "nodding")}, 1, 16, 1007);
    const FlameSequence& seq = nod.front().seq;
    const auto start = Clock::now();
    const auto frames = assemble_frames(model, Eigen::VectorXd::Zero(model.n_shape()), &seq, nullptr);
    const auto cams = parse_views("-30,0,0;0,0,0;30,0,0;60,0,0");
    const FrameGrid grid = render_sequence(model, frames, cams, 512, 512);
    const fs::path dir = scratch_dir("sheet");
    write_sprite_sheet(grid, dir / "nodding.png");
    const double t = seconds_since(start);
    const Image sheet = read_png(dir / "nodding.png");
    fs::remove_all(dir);
    const AxisVariability v = axis_variability(seq);
    const bool pitch_dominant = v.pitch > std::max({v.yaw, v.roll, v.jaw});
    // Pitch must swing: count direction reversals of the decoded pitch track.
    const Matrix angles = pose_angles(seq);
    int reversals = 0;
    for (Eigen::Index i = 2; i < angles.rows(); ++i) {
        reversals += (angles(i, 1) - angles(i - 1, 1)) * (angles(i - 1, 1) - angles(i - 2, 1)) < 0.0;
    }
    const bool sheet_ok = sheet.width == 16 * 512 && sheet.height == 4 * 512;
    return {px < 0.5 && yaw_exact && t < 30.0 && sheet_ok && pitch_dominant && reversals >= 1,
            "projection err " + num(px) + " px, yaw " + (yaw_exact ? "pixel-exact" : "differs") + ", 4x16 sheet " +
                num(t) + " s, pitch variability " + num(v.pitch) + " vs max other " +
                num(std::max({v.yaw, v.roll, v.jaw})) + ", " + std::to_string(reversals) + " pitch reversals"};
}

Verdict metrics_axioms() {
    std::mt19937_64 rng(1008);
    int violations = 0;
    for (int i = 0; i < 1000; ++i) {
        FlameSequence a, b, c;
        a.frames = gaussian(4, kPoseDim, rng);
        b.frames = gaussian(4, kPoseDim, rng);
        c.frames = gaussian(4, kPoseDim, rng);
        const double ab = flame_l1(a, b);
        violations += flame_l1(a, a) != 0.0;
        violations += !(ab > 0.0);
        violations += ab != flame_l1(b, a);
        violations += flame_l1(a, c) > ab + flame_l1(b, c) + 1e-12;
    }
    const auto encode = [](const std::vector<std::array<double, 4>>& rows) {
        FlameSequence s;
        s.frames.resize(static_cast<Eigen::Index>(rows.size()), kPoseDim);
        for (size_t i = 0; i < rows.size(); ++i) {
            const auto& r = rows[i];
            const Eigen::Matrix3d head = (Eigen::AngleAxisd(r[0], Eigen::Vector3d::UnitY()) *
                                          Eigen::AngleAxisd(r[1], Eigen::Vector3d::UnitX()) *
                                          Eigen::AngleAxisd(r[2], Eigen::Vector3d::UnitZ()))
                                             .toRotationMatrix();
            const Eigen::Matrix3d jaw = Eigen::AngleAxisd(r[3], Eigen::Vector3d::UnitX()).toRotationMatrix();
            Eigen::Matrix<double, 12, 1> row;
            row << head.col(0), head.col(1), jaw.col(0), jaw.col(1);
            s.frames.row(static_cast<Eigen::Index>(i)) = row.transpose();
        }
        return s;
    };
    const double still = variability(encode(std::vector<std::array<double, 4>>(5, {0.3, -0.2, 0.1, 0.05})));
    std::vector<std::array<double, 4>> ramp;
    for (int i = 0; i < 6; ++i) ramp.push_back({0.05 * i, -0.03 * i, 0.2, 0.0});
    // mean |step| per axis: yaw 0.05, pitch 0.03, roll 0 -> (0.05 + 0.03 + 0) / 3
    const double ramp_err = std::abs(variability(encode(ramp)) - 0.08 / 3.0);
    return {violations == 0 && std::abs(still) < 1e-12 && ramp_err < 1e-12,
            std::to_string(violations) + " axiom violations over 1000 triples, constant " + num(still) + ", ramp err " +
                num(ramp_err)};
}

uint64_t fnv1a(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    uint64_t h = 1469598103934665603ull;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

std::map<std::string, uint64_t> pipeline_hashes(const fs::path& root) {
    std::ostringstream out, err;
    const auto call = [&](std::vector<std::string> args) {
        args.insert(args.begin(), "pkit");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        if (code != 0) throw std::runtime_error("pkit " + args[1] + " failed: " + err.str());
    };
    const std::string data = (root / "data").string(), model = (root / "model").string();
    call({"synth", "--channel", "pose", "--n-per-label", "20", "--seed", "5", "--out", data});
    call({"train", "--data", data, "--channel", "pose", "--steps", "1000", "--seed", "5", "--out", model});
    call({"sample", "--checkpoint", model + "/motion_dm.json", "--condition", "nodding", "--count", "2", "--frames", "16",
          "--seed", "5", "--out", (root / "samples").string()});
    call({"render", "--pose", (root / "samples" / "sample_000.json").string(), "--size", "128x128", "--seed", "5",
          "--out", (root / "render" / "sheet.png").string()});
    std::map<std::string, uint64_t> hashes;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file()) hashes[fs::relative(entry.path(), root).string()] = fnv1a(entry.path());
    }
    return hashes;
}

Verdict determinism() {
    const fs::path a = scratch_dir("run-a"), b = scratch_dir("run-b");
    const auto ha = pipeline_hashes(a);
    const auto hb = pipeline_hashes(b);
    fs::remove_all(a);
    fs::remove_all(b);
    int differing = 0;
    for (const auto& [name, h] : ha) differing += !hb.contains(name) || hb.at(name) != h;
    differing += static_cast<int>(hb.size() != ha.size());
    const auto sheet = ha.find("render/sheet.png");
    char hex[17] = "none";
    if (sheet != ha.end()) std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(sheet->second));
    return {differing == 0 && sheet != ha.end(), std::to_string(ha.size()) + " artifacts, " +
                                                     std::to_string(differing) + " differ, sheet " + hex};
}

}  // namespace

int main(int argc, char** argv) {
    retain_heap_memory();
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"flame oracle equivalence", flame_oracle},
        {"gradient suite", gradient_suite},
        {"schedule and forward process", schedule_moments},
        {"desk-scale conditional training", desk_training},
        {"smoothing lowers variability", smoothing},
        {"attention kernel oracles", attention_oracles},
        {"renderer", renderer},
        {"metrics", metrics_axioms},
        {"end-to-end determinism", determinism},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.contains(id)) continue;
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += !v.pass;
        std::cout << (v.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << v.detail
                  << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
