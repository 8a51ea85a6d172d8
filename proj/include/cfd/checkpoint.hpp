#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfd/tensor.hpp"

namespace cfd {

// One entry of a CFDCKPT1 container.
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// Binary container "CFDCKPT1": 8-byte magic, version byte, u64 array count;
// per array: u64 name length + UTF-8 bytes, u64 rank, extents as u64, values
// as IEEE-754 binary64. All integers and doubles little-endian.
void write_container(const std::filesystem::path& path,
                     const std::vector<NamedArray>& arrays);

// Throws std::runtime_error with the byte offset of the first malformed field.
std::vector<NamedArray> read_container(const std::filesystem::path& path);

const NamedArray* find_array(const std::vector<NamedArray>& arrays,
                             const std::string& name);

// Writes bytes to a temp file in the target directory, then renames into
// place, so a failed write never leaves a partial file behind.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& bytes);

}  // namespace cfd
