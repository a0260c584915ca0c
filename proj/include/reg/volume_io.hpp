#pragma once

#include <array>
#include <string>

#include "reg/volume.hpp"

namespace reg {

// On-disk format: `<stem>.vjson` (UTF-8 JSON header) plus `<stem>.raw`
// (little-endian 32-bit floats, channel-major then z, y, x with x fastest).
struct VolumeFileHeader {
    int format_version = 1;
    Dims dims{0, 0, 0};
    int channels = 1;  // 1 = volume, 3 = displacement field
    std::string dtype = "f32le";
    std::string order = "c,z,y,x";
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // reserved
};

// Paths may name the stem, the .vjson, or the .raw file.
std::string volume_stem(const std::string& path);

VolumeFileHeader read_volume_header(const std::string& path);

void write_volume(const std::string& path, const Volume& vol);
void write_field(const std::string& path, const DisplacementField& field);

Volume read_volume(const std::string& path);
DisplacementField read_field(const std::string& path);

}  // namespace reg
