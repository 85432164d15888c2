// volume_io.cpp - canonical volume file I/O.

#include "ivim/volume_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace ivim {

namespace {

static_assert(std::endian::native == std::endian::little,
              "raw f32le I/O assumes a little-endian host");

std::string raw_name(const std::string& base_path) {
    return std::filesystem::path(base_path).filename().string() + ".raw";
}

void write_header(const std::string& base_path, const VolumeGeometry& g) {
    nlohmann::json j;
    j["dims"] = g.dims;
    j["spacing_mm"] = g.spacing;
    j["origin_mm"] = g.origin;
    j["slice_gap_mm"] = g.slice_gap;
    j["dtype"] = "f32le";
    j["raw_file"] = raw_name(base_path);
    std::ofstream out(base_path + ".json");
    if (!out) throw ValidationError("cannot open for write: " + base_path + ".json");
    out << j.dump(2) << "\n";
}

VolumeGeometry read_header(const std::string& base_path, std::string& raw_path) {
    std::ifstream in(base_path + ".json");
    if (!in) throw ValidationError("cannot open: " + base_path + ".json");
    nlohmann::json j;
    in >> j;
    if (j.value("dtype", "") != "f32le") throw ValidationError("unsupported dtype in " + base_path);
    VolumeGeometry g;
    g.dims = j.at("dims").get<std::array<int, 3>>();
    g.spacing = j.at("spacing_mm").get<std::array<double, 3>>();
    g.origin = j.at("origin_mm").get<std::array<double, 3>>();
    g.slice_gap = j.at("slice_gap_mm").get<double>();
    g.validate();
    const std::string raw = j.value("raw_file", raw_name(base_path));
    raw_path = (std::filesystem::path(base_path).parent_path() / raw).string();
    return g;
}

void write_raw(const std::string& path, const std::vector<float>& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for write: " + path);
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!out) throw ValidationError("short write: " + path);
}

std::vector<float> read_raw(const std::string& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open: " + path);
    std::vector<float> values(count);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
        throw ValidationError("short read: " + path);
    return values;
}

} // namespace

void write_volume(const std::string& base_path, const ScalarVolume& vol) {
    vol.validate();
    write_header(base_path, vol.geom);
    std::vector<float> values(vol.data.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(vol.data[i]);
    write_raw(base_path + ".raw", values);
}

ScalarVolume read_volume(const std::string& base_path) {
    std::string raw_path;
    const VolumeGeometry g = read_header(base_path, raw_path);
    const std::vector<float> values = read_raw(raw_path, g.voxel_count());
    ScalarVolume vol(g);
    for (std::size_t i = 0; i < values.size(); ++i) vol.data[i] = values[i];
    return vol;
}

void write_mask(const std::string& base_path, const MaskVolume& mask) {
    ScalarVolume vol(mask.geom);
    for (std::size_t i = 0; i < mask.data.size(); ++i) vol.data[i] = mask.data[i] ? 1.0 : 0.0;
    write_volume(base_path, vol);
}

MaskVolume read_mask(const std::string& base_path) {
    const ScalarVolume vol = read_volume(base_path);
    MaskVolume mask(vol.geom);
    for (std::size_t i = 0; i < vol.data.size(); ++i) mask.data[i] = vol.data[i] > 0.5 ? 1 : 0;
    return mask;
}

void write_pgm_slices(const std::string& base_path, const ScalarVolume& vol,
                      double window_lo, double window_hi) {
    const double span = window_hi > window_lo ? window_hi - window_lo : 1.0;
    for (int z = 0; z < vol.geom.nz(); ++z) {
        const std::string path = base_path + "_z" + std::to_string(z) + ".pgm";
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ValidationError("cannot open for write: " + path);
        out << "P5\n" << vol.geom.nx() << " " << vol.geom.ny() << "\n255\n";
        for (int y = 0; y < vol.geom.ny(); ++y)
            for (int x = 0; x < vol.geom.nx(); ++x) {
                double t = (vol.at(x, y, z) - window_lo) / span;
                t = std::clamp(t, 0.0, 1.0);
                out.put(static_cast<char>(static_cast<std::uint8_t>(t * 255.0 + 0.5)));
            }
    }
    std::ofstream side(base_path + "_windowlevel.txt");
    side << "window_lo " << window_lo << "\nwindow_hi " << window_hi << "\n";
}

} // namespace ivim
