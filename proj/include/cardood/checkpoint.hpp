#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "cardood/model.hpp"

namespace cardood {

/// Free-form string metadata stored next to the tensors (algorithm, encoder
/// chunk size, ...).
using CheckpointMeta = std::map<std::string, std::string>;

struct Checkpoint {
  Model<float> model;
  CheckpointMeta meta;
};

/// Single-file binary archive: magic, format version, a JSON header with
/// arch/dims/seed/meta, then every parameter tensor in visit order.
void save_checkpoint(std::ostream& out, const Model<float>& model, const CheckpointMeta& meta = {});
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const CheckpointMeta& meta = {});

/// Throws DataError on a bad magic, unknown version, or truncated file.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cardood
