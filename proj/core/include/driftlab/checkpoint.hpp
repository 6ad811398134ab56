#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "driftlab/model.hpp"

namespace driftlab {

/// Archive layout:
///   8 bytes   magic "DLCKPT01"
///   8 bytes   little-endian u64 header length H
///   H bytes   JSON header: model config, expansion metadata, and the tensor
///             table [{name, shape, trainable, is_bias}] in storage order
///   then each tensor's row-major IEEE-754 doubles, little-endian.
std::string serialize_checkpoint(const ModelState& model);
ModelState deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace driftlab
