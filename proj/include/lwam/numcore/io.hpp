#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "lwam/numcore/tensor.hpp"

namespace lwam::nc {

// Binary layout: "LWT1", u32 rank, u32 dims[rank], f64 data[]; all little-endian.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

// Writes to a sibling temporary file and renames it into place.
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Atomic text write used by every on-disk artifact.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace lwam::nc
