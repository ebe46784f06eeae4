#include <doctest.h>

#include "helpers.hpp"
#include "pkit/metrics.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <map>

using namespace pkit;
using ad::Matrix;

namespace {

Eigen::Matrix3d euler_oracle(double yaw, double pitch, double roll) {
    using Eigen::AngleAxisd;
    return (AngleAxisd(yaw, Eigen::Vector3d::UnitY()) * AngleAxisd(pitch, Eigen::Vector3d::UnitX()) *
            AngleAxisd(roll, Eigen::Vector3d::UnitZ()))
        .toRotationMatrix();
}

// Rows of (yaw, pitch, roll, jaw) angles written as head and jaw 6D blocks.
FlameSequence from_angles(const Matrix& angles) {
    FlameSequence s;
    s.frames.resize(angles.rows(), kPoseDim);
    for (Eigen::Index i = 0; i < angles.rows(); ++i) {
        const Eigen::Matrix3d head = euler_oracle(angles(i, 0), angles(i, 1), angles(i, 2));
        const Eigen::Matrix3d jaw = euler_oracle(0.0, angles(i, 3), 0.0);
        s.frames.row(i) << head(0, 0), head(1, 0), head(2, 0), head(0, 1), head(1, 1), head(2, 1), jaw(0, 0), jaw(1, 0),
            jaw(2, 0), jaw(0, 1), jaw(1, 1), jaw(2, 1);
    }
    return s;
}

FlameSequence random_seq(Channel c, Eigen::Index n, std::mt19937_64& rng) {
    FlameSequence s;
    s.channel = c;
    s.frames = testing::gaussian(n, channel_dim(c), rng);
    return s;
}

}  // namespace

TEST_SUITE("metrics") {
    TEST_CASE("flame_l1 behaves as a metric") {
        std::mt19937_64 rng(81);
        for (int trial = 0; trial < 1000; ++trial) {
            const Channel c = trial % 2 ? Channel::Pose : Channel::Expr;
            const FlameSequence a = random_seq(c, 3, rng), b = random_seq(c, 3, rng), d = random_seq(c, 3, rng);
            const double ab = flame_l1(a, b);
            CHECK(flame_l1(a, a) == 0.0);
            CHECK(ab > 0.0);
            CHECK(ab == flame_l1(b, a));
            CHECK(flame_l1(a, d) <= ab + flame_l1(b, d) + 1e-12);
        }
    }

    TEST_CASE("flame_l1 hand value and shape errors") {
        FlameSequence a, b;
        a.frames = Matrix::Zero(2, kPoseDim);
        b.frames = Matrix::Zero(2, kPoseDim);
        b.frames(0, 0) = 2.4;
        b.frames(1, 7) = -1.2;
        CHECK(flame_l1(a, b) == doctest::Approx(3.6 / 24.0).epsilon(1e-15));
        FlameSequence shorter = a;
        shorter.frames.conservativeResize(1, kPoseDim);
        CHECK_THROWS_AS(flame_l1(a, shorter), std::invalid_argument);
        FlameSequence expr;
        expr.channel = Channel::Expr;
        expr.frames = Matrix::Zero(2, kExprDim);
        CHECK_THROWS_AS(flame_l1(a, expr), std::invalid_argument);
    }

    TEST_CASE("variability of constant and ramp sequences") {
        Matrix still(6, 4);
        still.rowwise() = Eigen::RowVector4d(0.2, -0.1, 0.3, 0.05);
        const AxisVariability zero = axis_variability(from_angles(still));
        CHECK(std::abs(zero.yaw) < 1e-12);
        CHECK(std::abs(zero.pitch) < 1e-12);
        CHECK(std::abs(zero.roll) < 1e-12);
        CHECK(std::abs(zero.jaw) < 1e-12);

        // yaw steps of 0.1, pitch alternating by 0.04, roll fixed, jaw rising by 0.02.
        Matrix ramp(5, 4);
        for (int i = 0; i < 5; ++i) ramp.row(i) << 0.1 * i, (i % 2) * 0.04, 0.1, 0.02 * i;
        const FlameSequence s = from_angles(ramp);
        const AxisVariability v = axis_variability(s);
        CHECK(std::abs(v.yaw - 0.1) < 1e-12);
        CHECK(std::abs(v.pitch - 0.04) < 1e-12);
        CHECK(std::abs(v.roll) < 1e-12);
        CHECK(std::abs(v.jaw - 0.02) < 1e-12);
        CHECK(std::abs(variability(s) - 0.14 / 3.0) < 1e-12);
        CHECK(classify_motion(s) == "shaking head");
    }

    TEST_CASE("pose angles invert the encoding") {
        std::mt19937_64 rng(82);
        std::uniform_real_distribution<double> angle(-1.2, 1.2);
        Matrix angles(50, 4);
        for (Eigen::Index i = 0; i < angles.size(); ++i) angles.data()[i] = angle(rng);
        CHECK((pose_angles(from_angles(angles)) - angles).cwiseAbs().maxCoeff() < 1e-12);
    }

    TEST_CASE("variability input validation") {
        FlameSequence one = FlameSequence::rest_pose(1);
        CHECK_THROWS_AS(axis_variability(one), std::invalid_argument);
        FlameSequence expr;
        expr.channel = Channel::Expr;
        expr.frames = Matrix::Zero(3, kExprDim);
        CHECK_THROWS_AS(variability(expr), std::invalid_argument);
    }

    TEST_CASE("classifier picks the dominant axis") {
        const char* labels[] = {"shaking head", "nodding", "tilting head", "talking"};
        for (int axis = 0; axis < 4; ++axis) {
            Matrix a = Matrix::Zero(8, 4);
            for (int i = 0; i < 8; ++i) {
                a.row(i).setConstant(0.001 * (i % 2));
                a(i, axis) = 0.2 * std::sin(0.7 * i);
            }
            CHECK(classify_motion(from_angles(a)) == labels[axis]);
        }
    }

    TEST_CASE("synthetic corpus is labelled consistently by the classifier") {
        const Dataset data = synth_dataset(default_patterns(Channel::Pose), 50, 30, 5);
        REQUIRE(data.size() == 200);
        std::map<std::string, int> correct;
        for (const auto& item : data) correct[item.condition] += classify_motion(item.seq) == item.condition;
        for (const auto& [label, n] : correct) {
            INFO(label);
            CHECK(n == 50);
        }
    }

    TEST_CASE("synthesis is deterministic and seed dependent") {
        const auto patterns = default_patterns(Channel::Expr);
        const Dataset a = synth_dataset(patterns, 3, 20, 11);
        const Dataset b = synth_dataset(patterns, 3, 20, 11);
        const Dataset c = synth_dataset(patterns, 3, 20, 12);
        REQUIRE(a.size() == 12);
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].seq.frames == b[i].seq.frames);
            CHECK(a[i].seq.frames != c[i].seq.frames);
            CHECK(a[i].seq.frames.cols() == kExprDim);
        }
        CHECK_THROWS_AS(find_pattern(patterns, "bored"), std::invalid_argument);
        CHECK_THROWS_AS(synth_dataset(patterns, 0, 20, 1), std::invalid_argument);
    }

    TEST_CASE("report combines channels by element count") {
        std::mt19937_64 rng(83);
        const FlameSequence p = random_seq(Channel::Pose, 4, rng), pr = random_seq(Channel::Pose, 4, rng);
        const FlameSequence e = random_seq(Channel::Expr, 4, rng), er = random_seq(Channel::Expr, 4, rng);
        const MetricReport r = compute_report(&p, &pr, &e, &er);
        REQUIRE(r.flame_l1);
        const double total = ((p.frames - pr.frames).cwiseAbs().sum() + (e.frames - er.frames).cwiseAbs().sum()) /
                             static_cast<double>(p.frames.size() + e.frames.size());
        CHECK(*r.flame_l1 == doctest::Approx(total).epsilon(1e-12));
        const nlohmann::json doc = to_json(r);
        CHECK(doc.contains("variability"));
        CHECK(doc.at("variability_axes").contains("jaw"));
        CHECK(to_table(r).find("flame_l1") != std::string::npos);
        const MetricReport only_expr = compute_report(nullptr, nullptr, &e, &er);
        CHECK(!only_expr.variability);
        CHECK(*only_expr.flame_l1 == *only_expr.flame_l1_expr);
    }
}
