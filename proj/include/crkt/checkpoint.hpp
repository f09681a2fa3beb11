#pragma once

#include "crkt/model.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace crkt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layout: "CRKTCKPT", u32 format version, u64 manifest length, the JSON
// manifest, then every parameter as little-endian float32 in the order of the
// manifest's tensor index.
struct CheckpointExtras {
  std::vector<int> question_ids;  // external id of each dense question index
  std::string metadata_json = "{}";
};

void save_checkpoint(const Model& model, const std::filesystem::path& path, const CheckpointExtras& extras = {});

struct LoadedCheckpoint {
  Model model;
  CheckpointExtras extras;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace crkt
