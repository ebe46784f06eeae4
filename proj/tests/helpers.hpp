#pragma once

#include "pkit/autodiff.hpp"
#include "pkit/flame.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing {

inline pkit::ad::Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    pkit::ad::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

inline Eigen::VectorXd gaussian_vec(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> d(0.0, sd);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
    return v;
}

inline pkit::FlameParams random_params(const pkit::FlameModel& model, std::mt19937_64& rng, double pose_sd = 0.4) {
    pkit::FlameParams p;
    p.shape = gaussian_vec(model.n_shape(), rng);
    p.pose = gaussian_vec(model.pose_dim(), rng, pose_sd);
    p.expr = gaussian_vec(model.n_expr(), rng);
    return p;
}

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("pkit-" + tag + "-" + std::to_string(rd()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
