// Volume container, interpolation, densify/warp, and file round-trip tests.

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ivim/resample.hpp"
#include "ivim/rng.hpp"
#include "ivim/volume_io.hpp"

using namespace ivim;

namespace {

VolumeGeometry simple_geom(int nx, int ny, int nz, double sx = 1, double sy = 1, double sz = 1,
                           double gap = 0) {
    VolumeGeometry g;
    g.dims = {nx, ny, nz};
    g.spacing = {sx, sy, sz};
    g.slice_gap = gap;
    return g;
}

ScalarVolume random_volume(const VolumeGeometry& g, std::uint64_t seed) {
    ScalarVolume v(g);
    Rng rng(seed);
    for (auto& x : v.data) x = rng.uniform(-1.0, 2.0);
    return v;
}

} // namespace

TEST_CASE("geometry validation and slice-gap step") {
    VolumeGeometry g = simple_geom(4, 4, 4, 1.5625, 1.5625, 5.0, 1.0);
    g.validate();
    CHECK(g.step(0) == doctest::Approx(1.5625));
    CHECK(g.step(2) == doctest::Approx(6.0)); // 5 mm thickness + 1 mm gap
    g.spacing[1] = 0.0;
    CHECK_THROWS_AS(g.validate(), ValidationError);
    g = simple_geom(0, 1, 1);
    CHECK_THROWS_AS(g.validate(), ValidationError);
}

TEST_CASE("resample_linear identity geometry returns identical volume") {
    const VolumeGeometry g = simple_geom(6, 5, 4);
    const ScalarVolume v = random_volume(g, 7);
    const ScalarVolume r = resample_linear(v, g);
    for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == v.data[i]);
}

TEST_CASE("resample_linear reproduces a ramp at half-voxel offset") {
    VolumeGeometry g = simple_geom(16, 4, 4);
    ScalarVolume v(g);
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 16; ++x) v.at(x, y, z) = static_cast<double>(x);
    VolumeGeometry t = g;
    t.origin[0] += 0.5;
    const ScalarVolume r = resample_linear(v, t);
    for (int x = 0; x < 15; ++x) CHECK(r.at(x, 1, 1) == doctest::Approx(x + 0.5).epsilon(1e-12));
}

TEST_CASE("resample_linear round-trips grid nodes after 2x upsampling") {
    const VolumeGeometry g = simple_geom(8, 8, 8, 2, 2, 2);
    const ScalarVolume v = random_volume(g, 13);
    VolumeGeometry up = g;
    up.dims = {15, 15, 15};
    up.spacing = {1, 1, 1};
    const ScalarVolume u = resample_linear(v, up);
    const ScalarVolume back = resample_linear(u, g);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(v.data[i]).epsilon(1e-12));
}

TEST_CASE("resample_cubic identity and linear reproduction") {
    const VolumeGeometry g = simple_geom(7, 6, 5);
    const ScalarVolume v = random_volume(g, 17);
    const ScalarVolume r = resample_cubic(v, g);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        CHECK(r.data[i] == doctest::Approx(v.data[i]).epsilon(1e-12));

    ScalarVolume ramp(simple_geom(12, 12, 12));
    for (int z = 0; z < 12; ++z)
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x) ramp.at(x, y, z) = 3.0 * x - 2.0 * y + 0.5 * z;
    VolumeGeometry t = ramp.geom;
    t.origin = {0.37, 0.21, 0.58};
    t.dims = {10, 10, 10};
    const ScalarVolume rc = resample_cubic(ramp, t);
    for (int z = 1; z < 9; ++z)
        for (int y = 1; y < 9; ++y)
            for (int x = 1; x < 9; ++x) {
                const double expect = 3.0 * (x + 0.37) - 2.0 * (y + 0.21) + 0.5 * (z + 0.58);
                CHECK(rc.at(x, y, z) == doctest::Approx(expect).epsilon(1e-10));
            }
}

TEST_CASE("cubic beats linear on a smooth blob downsample/upsample cycle") {
    const VolumeGeometry fine = simple_geom(33, 33, 33, 1, 1, 1);
    ScalarVolume blob(fine);
    for (int z = 0; z < 33; ++z)
        for (int y = 0; y < 33; ++y)
            for (int x = 0; x < 33; ++x) {
                const double r2 = (x - 16.0) * (x - 16.0) + (y - 16.0) * (y - 16.0) +
                                  (z - 16.0) * (z - 16.0);
                blob.at(x, y, z) = std::exp(-r2 / 60.0);
            }
    VolumeGeometry coarse = fine;
    coarse.dims = {17, 17, 17};
    coarse.spacing = {2, 2, 2};
    const ScalarVolume down = resample_linear(blob, coarse);
    const ScalarVolume up_lin = resample_linear(down, fine);
    const ScalarVolume up_cub = resample_cubic(down, fine);
    double rms_lin = 0, rms_cub = 0;
    for (std::size_t i = 0; i < blob.data.size(); ++i) {
        rms_lin += (up_lin.data[i] - blob.data[i]) * (up_lin.data[i] - blob.data[i]);
        rms_cub += (up_cub.data[i] - blob.data[i]) * (up_cub.data[i] - blob.data[i]);
    }
    CHECK(rms_cub < rms_lin);
}

TEST_CASE("densify zero and constant grids") {
    ControlGrid2D k(4, 3);
    DisplacementField2D f = densify(k, 9, 7);
    for (double v : f.u) CHECK(v == 0.0);
    for (double v : f.v) CHECK(v == 0.0);

    for (auto& v : k.u) v = 1.25;
    for (auto& v : k.v) v = -0.5;
    f = densify(k, 9, 7);
    for (double v : f.u) CHECK(v == doctest::Approx(1.25).epsilon(1e-15));
    for (double v : f.v) CHECK(v == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("densify single unit node gives bilinear tent weights") {
    ControlGrid2D k(2, 2);
    k.u[k.index(0, 0)] = 1.0;
    const DisplacementField2D f = densify(k, 3, 3);
    // node (0,0) covers pixel (0,0); node spacing maps node 1 to pixel 2
    const double w[3] = {1.0, 0.5, 0.0};
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x)
            CHECK(f.u[f.index(x, y)] == doctest::Approx(w[x] * w[y]).epsilon(1e-15));
}

TEST_CASE("densify is linear in the coefficients") {
    Rng rng(23);
    ControlGrid2D k1(5, 4), k2(5, 4);
    for (std::size_t i = 0; i < k1.nodes(); ++i) {
        k1.u[i] = rng.normal();
        k1.v[i] = rng.normal();
        k2.u[i] = rng.normal();
        k2.v[i] = rng.normal();
    }
    const double a = 0.7, b = -1.3;
    ControlGrid2D kc(5, 4);
    for (std::size_t i = 0; i < k1.nodes(); ++i) {
        kc.u[i] = a * k1.u[i] + b * k2.u[i];
        kc.v[i] = a * k1.v[i] + b * k2.v[i];
    }
    const DisplacementField2D f1 = densify(k1, 11, 9);
    const DisplacementField2D f2 = densify(k2, 11, 9);
    const DisplacementField2D fc = densify(kc, 11, 9);
    for (std::size_t i = 0; i < fc.u.size(); ++i) {
        CHECK(fc.u[i] == doctest::Approx(a * f1.u[i] + b * f2.u[i]).epsilon(1e-12));
        CHECK(fc.v[i] == doctest::Approx(a * f1.v[i] + b * f2.v[i]).epsilon(1e-12));
    }
}

TEST_CASE("warp with zero field is the identity") {
    Slice2D img(8, 6);
    Rng rng(5);
    for (auto& v : img.data) v = rng.normal();
    const DisplacementField2D zero(8, 6);
    const Slice2D out = warp(img, zero);
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(out.data[i] == img.data[i]);
}

TEST_CASE("warp dim mismatch throws") {
    Slice2D img(8, 6);
    DisplacementField2D f(7, 6);
    CHECK_THROWS_AS(warp(img, f), ValidationError);
}

TEST_CASE("warp by constant (1,0) shifts a ramp") {
    Slice2D img(10, 5);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 10; ++x) img.at(x, y) = static_cast<double>(x);
    DisplacementField2D f(10, 5);
    for (auto& u : f.u) u = 1.0;
    const Slice2D out = warp(img, f);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 9; ++x) CHECK(out.at(x, y) == doctest::Approx(x + 1.0));
}

TEST_CASE("warp matches a dense independent interpolation oracle") {
    const int nx = 24, ny = 20;
    Slice2D img(nx, ny);
    Rng rng(31);
    for (auto& v : img.data) v = rng.normal();
    ControlGrid2D k(4, 4);
    for (std::size_t i = 0; i < k.nodes(); ++i) {
        k.u[i] = rng.uniform(-2.0, 2.0);
        k.v[i] = rng.uniform(-2.0, 2.0);
    }
    const DisplacementField2D f = densify(k, nx, ny);
    const Slice2D out = warp(img, f);

    // independent bilinear oracle with explicit clamping
    auto oracle = [&](double x, double y) {
        x = std::min(std::max(x, 0.0), nx - 1.0);
        y = std::min(std::max(y, 0.0), ny - 1.0);
        const int x0 = std::min(static_cast<int>(x), nx - 2);
        const int y0 = std::min(static_cast<int>(y), ny - 2);
        const double tx = x - x0, ty = y - y0;
        return img.at(x0, y0) * (1 - tx) * (1 - ty) + img.at(x0 + 1, y0) * tx * (1 - ty) +
               img.at(x0, y0 + 1) * (1 - tx) * ty + img.at(x0 + 1, y0 + 1) * tx * ty;
    };
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            const std::size_t p = f.index(x, y);
            CHECK(std::abs(out.at(x, y) - oracle(x + f.u[p], y + f.v[p])) < 1e-10);
        }
}

TEST_CASE("volume file round-trip is bit-exact") {
    const VolumeGeometry g = simple_geom(9, 7, 5, 1.5625, 1.5625, 5.0, 1.0);
    ScalarVolume v(g);
    Rng rng(41);
    for (auto& x : v.data) x = static_cast<float>(rng.normal(100.0, 25.0));

    const std::string dir = std::filesystem::temp_directory_path() / "ivim_io_test";
    std::filesystem::create_directories(dir);
    const std::string base = dir + "/vol";
    write_volume(base, v);
    const ScalarVolume r = read_volume(base);
    CHECK(r.geom == v.geom);
    for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == v.data[i]);

    // file -> memory -> file reproduces both files byte for byte
    write_volume(base + "_2", r);
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    CHECK(slurp(base + ".raw") == slurp(base + "_2.raw"));

    std::filesystem::remove_all(dir);
}

TEST_CASE("invert_field undoes a smooth displacement") {
    const int nx = 32, ny = 32;
    ControlGrid2D k(4, 4);
    Rng rng(53);
    for (std::size_t i = 0; i < k.nodes(); ++i) {
        k.u[i] = rng.uniform(-1.5, 1.5);
        k.v[i] = rng.uniform(-1.5, 1.5);
    }
    const DisplacementField2D f = densify(k, nx, ny);
    const DisplacementField2D inv = invert_field(f);
    const DisplacementField2D comp = compose_fields(inv, f);
    double worst = 0.0;
    for (int y = 4; y < ny - 4; ++y)
        for (int x = 4; x < nx - 4; ++x) {
            const std::size_t p = comp.index(x, y);
            worst = std::max({worst, std::abs(comp.u[p]), std::abs(comp.v[p])});
        }
    CHECK(worst < 0.02);
}
