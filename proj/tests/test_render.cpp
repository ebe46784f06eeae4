#include <doctest.h>

#include "helpers.hpp"
#include "pkit/blob_io.hpp"
#include "pkit/oracles.hpp"
#include "pkit/render.hpp"

#include <cmath>
#include <numbers>

using namespace pkit;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Mesh triangle(const Vec3& a, const Vec3& b, const Vec3& c) {
    Mesh m;
    m.vertices.resize(3, 3);
    m.vertices.row(0) = a.transpose();
    m.vertices.row(1) = b.transpose();
    m.vertices.row(2) = c.transpose();
    m.faces = {{0, 1, 2}};
    return m;
}

Mesh rotated_about_centroid(const Mesh& mesh, const Mat3& r) {
    const Vec3 c = mesh_centroid(mesh);
    Mesh out = mesh;
    for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v) {
        out.vertices.row(v) = (r * (Vec3(mesh.vertices.row(v).transpose()) - c) + c).transpose();
    }
    return out;
}

size_t covered(const RenderFrame& f) {
    size_t n = 0;
    for (float d : f.depth) n += std::isfinite(d) ? 1 : 0;
    return n;
}

uint32_t be32(const std::vector<uint8_t>& b, size_t at) {
    return (uint32_t{b[at]} << 24) | (uint32_t{b[at + 1]} << 16) | (uint32_t{b[at + 2]} << 8) | uint32_t{b[at + 3]};
}

}  // namespace

TEST_SUITE("render") {
    TEST_CASE("camera validation and view parsing") {
        CameraPose c;
        CHECK_NOTHROW(c.validate());
        c.distance = 0.0;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        c = CameraPose{};
        c.fov_y = std::numbers::pi;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);

        const auto views = parse_views("-30,0,0;0;30,10;60,0,5");
        REQUIRE(views.size() == 4);
        CHECK(views[0].yaw == doctest::Approx(-30 * kDeg));
        CHECK(views[2].pitch == doctest::Approx(10 * kDeg));
        CHECK(views[3].roll == doctest::Approx(5 * kDeg));
        CHECK_THROWS_AS(parse_views(""), std::invalid_argument);
        CHECK_THROWS_AS(parse_views("a,b"), std::invalid_argument);
        CHECK_THROWS_AS(parse_views("1,2,3,4"), std::invalid_argument);
    }

    TEST_CASE("empty mesh renders black with infinite depth") {
        const RenderFrame f = render_mesh(Mesh{}, CameraPose{}, 16, 8);
        CHECK(f.rgb.size() == 16 * 8 * 3);
        CHECK(std::all_of(f.rgb.begin(), f.rgb.end(), [](uint8_t v) { return v == 0; }));
        CHECK(std::all_of(f.depth.begin(), f.depth.end(), [](float d) { return std::isinf(d); }));
        CHECK_THROWS_AS(render_mesh(Mesh{}, CameraPose{}, 0, 8), std::invalid_argument);
    }

    TEST_CASE("pinhole projection matches the closed form") {
        // Camera at +z on the centroid axis, focal length (H/2) / tan(fov/2).
        CameraPose cam;
        cam.distance = 2.0;
        cam.fov_y = 60 * kDeg;
        const int w = 512, h = 512;
        const double focal = 256.0 / std::tan(30 * kDeg);
        const Mesh tri = triangle(Vec3(0, 0.5, 0), Vec3(-0.5, -0.25, 0), Vec3(0.5, -0.25, 0));
        const Vec3 center = mesh_centroid(tri);
        CHECK(center.isZero(1e-15));
        for (int i = 0; i < 3; ++i) {
            const Vec3 p = tri.vertices.row(i).transpose();
            const Vec3 uvd = project_point(p, center, cam, w, h);
            CHECK(std::abs(uvd.x() - (256.0 + focal * p.x() / 2.0)) < 0.5);
            CHECK(std::abs(uvd.y() - (256.0 - focal * p.y() / 2.0)) < 0.5);
            CHECK(uvd.z() == doctest::Approx(2.0));
        }
        // The rendered triangle covers its projected centroid and nothing near the corners.
        const RenderFrame f = render_mesh(tri, cam, w, h);
        CHECK(std::isfinite(f.depth[256 * 512 + 256]));
        CHECK(std::isinf(f.depth[5 * 512 + 5]));
    }

    TEST_CASE("weak perspective scales without depth division") {
        CameraPose cam;
        cam.mode = Projection::WeakPerspective;
        cam.fov_y = 2.0;
        const Vec3 uvd = project_point(Vec3(0.1, 0.2, 0.3), Vec3::Zero(), cam, 100, 50);
        CHECK(uvd.x() == doctest::Approx(50 + 2.0 * 25 * 0.1));
        CHECK(uvd.y() == doctest::Approx(25 - 2.0 * 25 * 0.2));
    }

    TEST_CASE("nearer triangle wins the depth test in either draw order") {
        // Far triangle faces the camera; the near one is tilted, so it shades darker.
        const Vec3 far[3] = {Vec3(-0.3, -0.3, -0.1), Vec3(0.3, -0.3, -0.1), Vec3(0.0, 0.3, -0.1)};
        const Vec3 near[3] = {Vec3(-0.2, -0.2, 0.05), Vec3(0.2, -0.2, 0.15), Vec3(0.0, 0.2, 0.1)};
        Mesh both;
        both.vertices.resize(6, 3);
        for (int i = 0; i < 3; ++i) {
            both.vertices.row(i) = far[i].transpose();
            both.vertices.row(3 + i) = near[i].transpose();
        }
        CameraPose cam;
        cam.distance = 1.5;
        for (int order = 0; order < 2; ++order) {
            both.faces = order == 0 ? std::vector<Face>{{0, 1, 2}, {3, 4, 5}} : std::vector<Face>{{3, 4, 5}, {0, 1, 2}};
            const RenderFrame f = render_mesh(both, cam, 96, 96);
            Mesh only_near = both;
            only_near.faces = {{3, 4, 5}};
            // Same centroid, so pixel coordinates agree between the two renders.
            const RenderFrame n = render_mesh(only_near, cam, 96, 96);
            size_t checked = 0;
            for (size_t i = 0; i < n.depth.size(); ++i) {
                if (!std::isfinite(n.depth[i])) continue;
                ++checked;
                CHECK(f.depth[i] == n.depth[i]);
                CHECK(f.rgb[3 * i] == n.rgb[3 * i]);
            }
            CHECK(checked > 100);
        }
    }

    TEST_CASE("coverage agrees with the half-plane oracle") {
        std::mt19937_64 rng(31);
        std::uniform_real_distribution<double> u(-0.4, 0.4);
        CameraPose cam;
        cam.mode = Projection::WeakPerspective;
        cam.fov_y = 1.0;
        const int size = 24;
        for (int trial = 0; trial < 60; ++trial) {
            const Mesh tri = triangle(Vec3(u(rng), u(rng), 0), Vec3(u(rng), u(rng), 0), Vec3(u(rng), u(rng), 0));
            const Vec3 center = mesh_centroid(tri);
            Eigen::Vector2d s[3];
            for (int i = 0; i < 3; ++i) {
                const Vec3 p = project_point(tri.vertices.row(i).transpose(), center, cam, size, size);
                s[i] = p.head<2>();
            }
            const RenderFrame f = render_mesh(tri, cam, size, size);
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    const auto cov = oracle::point_in_triangle(s[0], s[1], s[2], Eigen::Vector2d(x + 0.5, y + 0.5));
                    if (cov == oracle::Coverage::Edge) continue;
                    CHECK((cov == oracle::Coverage::Inside) == std::isfinite(f.depth[static_cast<size_t>(y * size + x)]));
                }
            }
        }
    }

    TEST_CASE("shared edges are filled exactly once") {
        // A square split along its diagonal; pixel centers fall on the diagonal.
        Mesh quad;
        quad.vertices.resize(4, 3);
        quad.vertices << -0.5, -0.5, 0, 0.5, -0.5, 0, 0.5, 0.5, 0, -0.5, 0.5, 0;
        quad.faces = {{0, 1, 2}, {0, 2, 3}};
        CameraPose cam;
        cam.mode = Projection::WeakPerspective;
        cam.fov_y = 1.0;
        const RenderFrame both = render_mesh(quad, cam, 32, 32);
        Mesh a = quad, b = quad;
        a.faces = {{0, 1, 2}};
        b.faces = {{0, 2, 3}};
        const size_t ca = covered(render_mesh(a, cam, 32, 32));
        const size_t cb = covered(render_mesh(b, cam, 32, 32));
        CHECK(ca + cb == covered(both));
        CHECK(covered(both) == 16 * 16);
    }

    TEST_CASE("camera yaw equals counter-rotating the mesh") {
        const FlameModel model = make_mini_flame();
        std::mt19937_64 rng(32);
        for (double yaw_deg : {-60.0, -30.0, 15.0, 30.0, 60.0, 135.0}) {
            const Mesh mesh = flame_forward(model, testing::random_params(model, rng, 0.2));
            CameraPose cam;
            cam.yaw = yaw_deg * kDeg;
            const RenderFrame moved_camera = render_mesh(mesh, cam, 128, 128);
            const Mesh turned = rotated_about_centroid(mesh, cam.rotation().transpose());
            const RenderFrame moved_mesh = render_mesh(turned, CameraPose{}, 128, 128);
            CHECK(moved_camera.rgb == moved_mesh.rgb);
            CHECK(covered(moved_camera) > 500);
        }
    }

    TEST_CASE("render_sequence layout, determinism and thread independence") {
        const FlameModel model = make_mini_flame();
        std::mt19937_64 rng(33);
        std::vector<FlameParams> frames(5, testing::random_params(model, rng, 0.2));
        frames[3] = testing::random_params(model, rng, 0.2);
        const auto cams = parse_views("-30;0;30;60");
        const FrameGrid one = render_sequence(model, frames, cams, 40, 30, 1);
        const FrameGrid many = render_sequence(model, frames, cams, 40, 30, 3);
        REQUIRE(one.size() == 4);
        REQUIRE(one[0].size() == 5);
        for (size_t v = 0; v < 4; ++v) {
            for (size_t t = 0; t < 5; ++t) {
                CHECK(one[v][t].rgb == many[v][t].rgb);
                CHECK(one[v][t].rgb == render_mesh(flame_forward(model, frames[t]), cams[v], 40, 30).rgb);
            }
            CHECK(one[v][0].rgb == one[v][1].rgb);
            CHECK(one[v][0].rgb != one[v][3].rgb);
        }
        CHECK_THROWS_AS(render_sequence(model, {}, cams, 8, 8), std::invalid_argument);
    }

    TEST_CASE("sprite sheet geometry and PNG round trip") {
        const FlameModel model = make_mini_flame();
        std::vector<FlameParams> frames(8, FlameParams::zeros(model));
        for (size_t t = 0; t < frames.size(); ++t) frames[t].pose[0] = 0.05 * static_cast<double>(t);
        const FrameGrid grid = render_sequence(model, frames, parse_views("-30;0;30;60"), 64, 64, 1);
        const Image sheet = compose_sprite_sheet(grid);
        CHECK(sheet.width == 512);
        CHECK(sheet.height == 256);
        // Pixel (x, y) of frame (view 2, time 5).
        const size_t x = 5 * 64 + 17, y = 2 * 64 + 40;
        CHECK(sheet.rgb[(y * 512 + x) * 3 + 1] == grid[2][5].rgb[(40 * 64 + 17) * 3 + 1]);

        testing::TempDir dir("png");
        write_sprite_sheet(grid, dir / "sheet.png");
        const std::vector<uint8_t> bytes = read_file_bytes(dir / "sheet.png");
        const uint8_t signature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
        REQUIRE(bytes.size() > 33);
        CHECK(std::equal(signature, signature + 8, bytes.begin()));
        CHECK(be32(bytes, 16) == 512);
        CHECK(be32(bytes, 20) == 256);
        CHECK(bytes[24] == 8);  // bit depth
        CHECK(bytes[25] == 2);  // truecolor RGB
        const Image back = read_png(dir / "sheet.png");
        CHECK(back.width == 512);
        CHECK(back.height == 256);
        CHECK(back.rgb == sheet.rgb);

        const FrameGrid single = {{grid[0][0]}};
        write_sprite_sheet(single, dir / "one.png");
        CHECK(read_png(dir / "one.png").rgb == grid[0][0].rgb);

        CHECK_THROWS_WITH(write_sprite_sheet(grid, dir / "missing" / "x.png"), doctest::Contains("missing"));
        FrameGrid ragged = grid;
        ragged[1].pop_back();
        CHECK_THROWS_AS(compose_sprite_sheet(ragged), std::invalid_argument);
    }
}
