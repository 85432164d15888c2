// volume_io.hpp - canonical on-disk volume format and helpers.
//
// A volume <base> is a pair of files: <base>.json holding
// {dims, spacing_mm, origin_mm, slice_gap_mm, dtype:"f32le", raw_file} and
// <base>.raw holding little-endian 32-bit floats, row-major, x fastest.
// Reading back a written pair reproduces the files bit-exactly.
#pragma once

#include <string>

#include "ivim/geometry.hpp"

namespace ivim {

void write_volume(const std::string& base_path, const ScalarVolume& vol);
ScalarVolume read_volume(const std::string& base_path);

void write_mask(const std::string& base_path, const MaskVolume& mask);
MaskVolume read_mask(const std::string& base_path);

// 8-bit grayscale slice dump for eyeballing maps; window/level recorded in a
// sidecar text file.
void write_pgm_slices(const std::string& base_path, const ScalarVolume& vol,
                      double window_lo, double window_hi);

} // namespace ivim
