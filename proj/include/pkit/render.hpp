#pragma once

#include "pkit/flame.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace pkit {

enum class Projection { Perspective, WeakPerspective };

// Viewpoint orbiting the mesh centroid. At yaw = pitch = roll = 0 the camera
// sits on +z looking down -z with +y up. For weak perspective, fov_y is the
// scale mapping one meter to half the image height.
struct CameraPose {
    double yaw = 0.0;
    double pitch = 0.0;
    double roll = 0.0;
    double distance = 0.6;
    double fov_y = 0.5;
    Projection mode = Projection::Perspective;

    void validate() const;
    Mat3 rotation() const;
};

// Parses "yaw,pitch,roll;yaw,pitch,roll;..." with angles in degrees.
std::vector<CameraPose> parse_views(const std::string& text, const CameraPose& base = {});

struct RenderFrame {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // row-major H x W x 3
    std::vector<float> depth;  // +inf where no geometry

    RenderFrame() = default;
    RenderFrame(int w, int h);
};

// (u, v, depth) in pixel units, v pointing down, pixel (x, y) centered at
// (x + 0.5, y + 0.5). Depth is the distance along the viewing axis.
Vec3 project_point(const Vec3& point, const Vec3& center, const CameraPose& cam, int width, int height);

Vec3 mesh_centroid(const Mesh& mesh);

// Z-buffered flat-shaded rasterization with a headlight and black
// background. Zero-area triangles are skipped; shared edges follow the
// top-left rule.
RenderFrame render_mesh(const Mesh& mesh, const CameraPose& cam, int width, int height);

using FrameGrid = std::vector<std::vector<RenderFrame>>;  // [view][time]

// frame (i, j) = render_mesh(flame_forward(model, frames[j]), cams[i]).
// threads == 0 uses the hardware concurrency; the result does not depend on it.
FrameGrid render_sequence(const FlameModel& model, std::span<const FlameParams> frames,
                          std::span<const CameraPose> cams, int width, int height, unsigned threads = 0);

struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;
};

// Views as rows, time as columns.
Image compose_sprite_sheet(const FrameGrid& grid);
void write_sprite_sheet(const FrameGrid& grid, const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

}  // namespace pkit
