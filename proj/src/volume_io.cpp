#include "reg/volume_io.hpp"

#include <unistd.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "reg/io_util.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw volume files are little-endian; big-endian hosts need byte swapping");

namespace reg {

namespace fs = std::filesystem;

void atomic_write_file(const std::string& path, std::string_view bytes) {
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp" + std::to_string(::getpid());
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw IoError("failed writing '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("failed renaming temp file onto '" + path + "'");
    }
}

std::string read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (is.bad()) throw IoError("failed reading '" + path + "'");
    return bytes;
}

std::string volume_stem(const std::string& path) {
    if (path.ends_with(".vjson")) return path.substr(0, path.size() - 6);
    if (path.ends_with(".raw")) return path.substr(0, path.size() - 4);
    return path;
}

namespace {

void write_pair(const std::string& path, const VolumeFileHeader& header,
                std::span<const float> data) {
    const std::string stem = volume_stem(path);
    nlohmann::json j;
    j["format_version"] = header.format_version;
    j["dims"] = header.dims;
    j["channels"] = header.channels;
    j["dtype"] = header.dtype;
    j["order"] = header.order;
    j["spacing"] = header.spacing;
    atomic_write_file(stem + ".vjson", j.dump(2) + "\n");
    atomic_write_file(stem + ".raw",
                      std::string_view(reinterpret_cast<const char*>(data.data()),
                                       data.size() * sizeof(float)));
}

std::vector<float> read_raw(const std::string& stem, const VolumeFileHeader& header) {
    const std::string bytes = read_file_bytes(stem + ".raw");
    const size_t expected = static_cast<size_t>(header.channels) * dims_numel(header.dims);
    if (bytes.size() != expected * sizeof(float)) {
        throw IoError("'" + stem + ".raw' holds " + std::to_string(bytes.size()) +
                      " bytes, header implies " + std::to_string(expected * sizeof(float)));
    }
    std::vector<float> data(expected);
    std::memcpy(data.data(), bytes.data(), bytes.size());
    return data;
}

}  // namespace

VolumeFileHeader read_volume_header(const std::string& path) {
    const std::string stem = volume_stem(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file_bytes(stem + ".vjson"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed header '" + stem + ".vjson': " + e.what());
    }
    VolumeFileHeader header;
    try {
        header.format_version = j.at("format_version").get<int>();
        const auto dims = j.at("dims").get<std::vector<int64_t>>();
        if (dims.size() != 3) throw IoError("header dims must have 3 entries");
        header.dims = {dims[0], dims[1], dims[2]};
        header.channels = j.at("channels").get<int>();
        header.dtype = j.at("dtype").get<std::string>();
        header.order = j.at("order").get<std::string>();
        if (j.contains("spacing")) {
            const auto spacing = j.at("spacing").get<std::vector<double>>();
            if (spacing.size() == 3) header.spacing = {spacing[0], spacing[1], spacing[2]};
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("header '" + stem + ".vjson' missing fields: " + e.what());
    }
    if (header.format_version != 1) {
        throw IoError("'" + stem + ".vjson': unknown format_version " +
                      std::to_string(header.format_version));
    }
    if (header.dtype != "f32le") throw IoError("'" + stem + ".vjson': unsupported dtype " + header.dtype);
    if (header.order != "c,z,y,x") throw IoError("'" + stem + ".vjson': unsupported order " + header.order);
    if (header.channels != 1 && header.channels != 3) {
        throw IoError("'" + stem + ".vjson': channels must be 1 or 3");
    }
    for (int64_t e : header.dims) {
        if (e < 1) throw IoError("'" + stem + ".vjson': dims must be positive");
    }
    return header;
}

void write_volume(const std::string& path, const Volume& vol) {
    VolumeFileHeader header;
    header.dims = vol.dims;
    header.channels = 1;
    write_pair(path, header, vol.data);
}

void write_field(const std::string& path, const DisplacementField& field) {
    VolumeFileHeader header;
    header.dims = field.dims;
    header.channels = 3;
    write_pair(path, header, field.data);
}

Volume read_volume(const std::string& path) {
    const std::string stem = volume_stem(path);
    const VolumeFileHeader header = read_volume_header(stem);
    if (header.channels != 1) {
        throw IoError("'" + stem + "' has " + std::to_string(header.channels) +
                      " channels; expected a 1-channel volume");
    }
    return Volume(header.dims, read_raw(stem, header));
}

DisplacementField read_field(const std::string& path) {
    const std::string stem = volume_stem(path);
    const VolumeFileHeader header = read_volume_header(stem);
    if (header.channels != 3) {
        throw IoError("'" + stem + "' has " + std::to_string(header.channels) +
                      " channels; expected a 3-channel displacement field");
    }
    return DisplacementField(header.dims, read_raw(stem, header));
}

}  // namespace reg
