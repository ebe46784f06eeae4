#include "pkit/render.hpp"

#include <png.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace pkit {

namespace {

constexpr double kNearPlane = 1e-6;
constexpr double kAmbient = 0.15;
constexpr double kAlbedo[3] = {0.88, 0.76, 0.68};

struct ScreenVertex {
    double x, y, depth;
};

double edge(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
    return (px - a.x) * (b.y - a.y) - (py - a.y) * (b.x - a.x);
}

// Pixels exactly on an edge belong to the triangle only for "top-left" edges.
// Both triangles sharing an edge traverse it in opposite directions after
// orientation, so exactly one of them claims such a pixel.
bool owns_edge(const ScreenVertex& a, const ScreenVertex& b) {
    const double dy = b.y - a.y;
    const double dx = b.x - a.x;
    return dy > 0.0 || (dy == 0.0 && dx < 0.0);
}

uint8_t to_byte(double v) {
    return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void CameraPose::validate() const {
    if (!(distance > 0.0)) throw std::invalid_argument("camera: distance must be > 0");
    if (mode == Projection::Perspective && !(fov_y > 0.0 && fov_y < std::numbers::pi)) {
        throw std::invalid_argument("camera: fov_y must lie in (0, pi)");
    }
    if (mode == Projection::WeakPerspective && !(fov_y > 0.0)) {
        throw std::invalid_argument("camera: weak-perspective scale must be > 0");
    }
}

Mat3 CameraPose::rotation() const {
    return euler_yxz_to_matrix({yaw, pitch, roll});
}

std::vector<CameraPose> parse_views(const std::string& text, const CameraPose& base) {
    std::vector<CameraPose> views;
    std::stringstream all(text);
    std::string item;
    while (std::getline(all, item, ';')) {
        if (item.find_first_not_of(" \t") == std::string::npos) continue;
        std::stringstream fields(item);
        std::string field;
        std::vector<double> angles;
        while (std::getline(fields, field, ',')) {
            try {
                angles.push_back(std::stod(field));
            } catch (const std::exception&) {
                throw std::invalid_argument("views: cannot parse '" + field + "'");
            }
        }
        if (angles.empty() || angles.size() > 3) {
            throw std::invalid_argument("views: expected yaw[,pitch[,roll]] in '" + item + "'");
        }
        angles.resize(3, 0.0);
        CameraPose cam = base;
        constexpr double deg = std::numbers::pi / 180.0;
        cam.yaw = angles[0] * deg;
        cam.pitch = angles[1] * deg;
        cam.roll = angles[2] * deg;
        views.push_back(cam);
    }
    if (views.empty()) throw std::invalid_argument("views: no viewpoint given");
    return views;
}

RenderFrame::RenderFrame(int w, int h)
    : width(w),
      height(h),
      rgb(static_cast<size_t>(w) * static_cast<size_t>(h) * 3, 0),
      depth(static_cast<size_t>(w) * static_cast<size_t>(h), std::numeric_limits<float>::infinity()) {}

Vec3 project_point(const Vec3& point, const Vec3& center, const CameraPose& cam, int width, int height) {
    const Vec3 local = cam.rotation().transpose() * (point - center);
    const double depth = cam.distance - local.z();
    const double half_h = 0.5 * height;
    double scale = 0.0;
    if (cam.mode == Projection::Perspective) {
        scale = half_h / std::tan(0.5 * cam.fov_y) / depth;
    } else {
        scale = cam.fov_y * half_h;
    }
    return {0.5 * width + scale * local.x(), half_h - scale * local.y(), depth};
}

Vec3 mesh_centroid(const Mesh& mesh) {
    if (mesh.vertices.rows() == 0) return Vec3::Zero();
    return mesh.vertices.colwise().mean().transpose();
}

RenderFrame render_mesh(const Mesh& mesh, const CameraPose& cam, int width, int height) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("render_mesh: image size must be positive");
    cam.validate();
    RenderFrame frame(width, height);
    if (mesh.vertices.rows() == 0) return frame;

    const Vec3 center = mesh_centroid(mesh);
    const Mat3 to_cam = cam.rotation().transpose();
    const Eigen::Index nv = mesh.vertices.rows();
    std::vector<Vec3> local(static_cast<size_t>(nv));
    std::vector<ScreenVertex> screen(static_cast<size_t>(nv));
    for (Eigen::Index v = 0; v < nv; ++v) {
        const Vec3 p = mesh.vertices.row(v).transpose();
        local[static_cast<size_t>(v)] = to_cam * (p - center);
        const Vec3 s = project_point(p, center, cam, width, height);
        screen[static_cast<size_t>(v)] = {s.x(), s.y(), s.z()};
    }

    for (const Face& f : mesh.faces) {
        ScreenVertex a = screen[static_cast<size_t>(f[0])];
        ScreenVertex b = screen[static_cast<size_t>(f[1])];
        ScreenVertex c = screen[static_cast<size_t>(f[2])];
        if (a.depth < kNearPlane || b.depth < kNearPlane || c.depth < kNearPlane) continue;
        double area = edge(a, b, c.x, c.y);
        if (area == 0.0 || !std::isfinite(area)) continue;
        if (area < 0.0) {
            std::swap(b, c);
            area = -area;
        }

        // Flat Lambertian shading with the light at the eye (two-sided).
        const Vec3 n = (local[static_cast<size_t>(f[1])] - local[static_cast<size_t>(f[0])])
                           .cross(local[static_cast<size_t>(f[2])] - local[static_cast<size_t>(f[0])]);
        const double nn = n.norm();
        const double lambert = nn > 0.0 ? std::abs(n.z()) / nn : 0.0;
        const double shade = kAmbient + (1.0 - kAmbient) * lambert;
        const uint8_t color[3] = {to_byte(kAlbedo[0] * shade), to_byte(kAlbedo[1] * shade),
                                  to_byte(kAlbedo[2] * shade)};

        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}))));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}))));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}))));
        const bool own_bc = owns_edge(b, c);
        const bool own_ca = owns_edge(c, a);
        const bool own_ab = owns_edge(a, b);

        for (int y = y0; y <= y1; ++y) {
            const double py = y + 0.5;
            for (int x = x0; x <= x1; ++x) {
                const double px = x + 0.5;
                const double wa = edge(b, c, px, py);
                const double wb = edge(c, a, px, py);
                const double wc = edge(a, b, px, py);
                if (wa < 0.0 || wb < 0.0 || wc < 0.0) continue;
                if ((wa == 0.0 && !own_bc) || (wb == 0.0 && !own_ca) || (wc == 0.0 && !own_ab)) continue;
                const double inv_depth = (wa / a.depth + wb / b.depth + wc / c.depth) / area;
                const auto depth = static_cast<float>(1.0 / inv_depth);
                const size_t idx = static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x);
                if (!(depth < frame.depth[idx])) continue;
                frame.depth[idx] = depth;
                std::copy(color, color + 3, frame.rgb.begin() + static_cast<std::ptrdiff_t>(3 * idx));
            }
        }
    }
    return frame;
}

FrameGrid render_sequence(const FlameModel& model, std::span<const FlameParams> frames,
                          std::span<const CameraPose> cams, int width, int height, unsigned threads) {
    if (frames.empty()) throw std::invalid_argument("render_sequence: empty sequence");
    if (cams.empty()) throw std::invalid_argument("render_sequence: no cameras");
    for (const CameraPose& c : cams) c.validate();

    std::vector<Mesh> meshes(frames.size());
    for (size_t j = 0; j < frames.size(); ++j) meshes[j] = flame_forward(model, frames[j]);

    FrameGrid grid(cams.size(), std::vector<RenderFrame>(frames.size()));
    const size_t jobs = cams.size() * frames.size();
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<size_t>(threads, jobs));

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t k = next++; k < jobs; k = next++) {
            const size_t view = k / frames.size();
            const size_t time = k % frames.size();
            grid[view][time] = render_mesh(meshes[time], cams[view], width, height);
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    return grid;
}

Image compose_sprite_sheet(const FrameGrid& grid) {
    if (grid.empty() || grid.front().empty()) throw std::invalid_argument("sprite sheet: empty grid");
    const int fw = grid.front().front().width;
    const int fh = grid.front().front().height;
    const size_t cols = grid.front().size();
    for (const auto& row : grid) {
        if (row.size() != cols) throw std::invalid_argument("sprite sheet: ragged grid");
        for (const RenderFrame& f : row) {
            if (f.width != fw || f.height != fh) throw std::invalid_argument("sprite sheet: frame sizes differ");
        }
    }
    Image sheet;
    sheet.width = fw * static_cast<int>(cols);
    sheet.height = fh * static_cast<int>(grid.size());
    sheet.rgb.assign(static_cast<size_t>(sheet.width) * static_cast<size_t>(sheet.height) * 3, 0);
    const size_t row_bytes = static_cast<size_t>(fw) * 3;
    for (size_t r = 0; r < grid.size(); ++r) {
        for (size_t c = 0; c < cols; ++c) {
            const RenderFrame& f = grid[r][c];
            for (int y = 0; y < fh; ++y) {
                const size_t dst_y = r * static_cast<size_t>(fh) + static_cast<size_t>(y);
                const size_t dst = (dst_y * static_cast<size_t>(sheet.width) + c * static_cast<size_t>(fw)) * 3;
                std::copy_n(f.rgb.begin() + static_cast<std::ptrdiff_t>(static_cast<size_t>(y) * row_bytes),
                            row_bytes, sheet.rgb.begin() + static_cast<std::ptrdiff_t>(dst));
            }
        }
    }
    return sheet;
}

void write_sprite_sheet(const FrameGrid& grid, const std::filesystem::path& path) {
    write_png(path, compose_sprite_sheet(grid));
}

void write_png(const std::filesystem::path& path, const Image& image) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, image.rgb.data(), 0, nullptr)) {
        throw std::runtime_error(path.string() + ": PNG write failed: " + png.message);
    }
}

Image read_png(const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
        throw std::runtime_error(path.string() + ": PNG read failed: " + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    Image image;
    image.width = static_cast<int>(png.width);
    image.height = static_cast<int>(png.height);
    image.rgb.resize(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, image.rgb.data(), 0, nullptr)) {
        throw std::runtime_error(path.string() + ": PNG decode failed: " + png.message);
    }
    return image;
}

}  // namespace pkit
