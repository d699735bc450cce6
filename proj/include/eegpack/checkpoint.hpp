#pragma once
// Self-describing checkpoint archive: config JSON + named float32 parameter
// blocks + trailing content hash. Loaders reject any hash mismatch.

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "eegpack/nn.hpp"

namespace eegpack::nn {

struct Checkpoint {
  nlohmann::json config;
  std::vector<std::pair<std::string, Tensor>> params;  // archive order

  const Tensor& param(const std::string& name) const;
  bool has_param(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                     const std::vector<Param>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Fills existing params (matched by name; shapes must agree).
void load_into(const Checkpoint& ckpt, std::vector<Param>& params);

// Provenance hash of the archive file itself.
std::string checkpoint_file_hash(const std::filesystem::path& path);

}  // namespace eegpack::nn
