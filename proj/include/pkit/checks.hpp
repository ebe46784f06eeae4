#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pkit {

enum class LossKind { Simple, Velocity, Combined, Epsilon };
enum class KernelKind { Attention, Reference, Temporal, View };

std::string to_string(LossKind kind);
std::string to_string(KernelKind kind);

// Max relative error between reverse-mode and central-difference (h = 1e-5)
// gradients for one random configuration drawn from `seed`. Loss checks
// differentiate w.r.t. every network parameter of a tiny denoiser; kernel
// checks w.r.t. the inputs and all projection weights.
double loss_gradient_error(LossKind kind, uint64_t seed);
double kernel_gradient_error(KernelKind kind, uint64_t seed);

// Toy denoiser built from temporal and view attention over patch embeddings
// of rendered multi-view frames of the mini head.
struct PatchDemoResult {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double equivariance_error = 0.0;  // max |f(perm x) - perm f(x)| over views
    bool finite = false;
};
PatchDemoResult run_patch_demo(uint64_t seed, int train_steps = 40);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

// The invariant and oracle suite behind `pkit check`. Calls `report` after
// each check.
std::vector<CheckResult> run_checks(uint64_t seed, const std::function<void(const CheckResult&)>& report = {});

}  // namespace pkit
