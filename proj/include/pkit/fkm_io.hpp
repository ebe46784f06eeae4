#pragma once

#include "pkit/flame.hpp"

#include <filesystem>

namespace pkit {

inline constexpr const char* kFkmVersion = "fkm-v1";

// FKM model asset: a JSON manifest plus a little-endian float32 blob holding
// template, shape_basis, pose_basis, expr_basis, joint_regressor and
// skin_weights (each row-major) at the byte offsets listed in the manifest.
// The blob path is stored relative to the manifest.
FlameModel load_fkm(const std::filesystem::path& manifest);
void save_fkm(const FlameModel& model, const std::filesystem::path& manifest);

// "mini" selects the synthetic model, anything else is an FKM manifest path.
FlameModel load_model(const std::string& source);

}  // namespace pkit
