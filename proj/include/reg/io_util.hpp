#pragma once

#include <string>
#include <string_view>

namespace reg {

// Write-to-temp then rename, so failures never leave partial files behind.
void atomic_write_file(const std::string& path, std::string_view bytes);

std::string read_file_bytes(const std::string& path);

}  // namespace reg
