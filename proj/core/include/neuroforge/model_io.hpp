#pragma once

#include <filesystem>
#include <string>

#include "neuroforge/model.hpp"

namespace nf {

// Writes <dir>/model.json and <dir>/tensors.bin. model.json carries the
// architecture, shape info, mask/trainable maps and a tensor index with
// {name, shape, offset, bytes}; tensors.bin is the concatenation of raw
// little-endian float32 blobs in index order.
void save_model(const Model& model, const std::filesystem::path& dir);

// Throws FormatError on malformed files, including any index entry whose
// byte length disagrees with its shape or with the blob on disk.
Model load_model(const std::filesystem::path& dir);

// SHA-256 of tensors.bin, for determinism audits.
std::string model_blob_digest(const std::filesystem::path& dir);

}  // namespace nf
