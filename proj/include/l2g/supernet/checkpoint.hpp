#pragma once

#include <filesystem>
#include <stdexcept>

#include "json.hpp"
#include "l2g/supernet/supernet.hpp"

namespace l2g {

inline constexpr int kCheckpointVersion = 1;

enum class CheckpointErrc {
  io,
  malformed_manifest,
  version_mismatch,
  truncated_blob,   ///< weights.bin shorter than the manifest declares
  length_mismatch,  ///< entry lengths, offsets or total size disagree
  checksum_mismatch,
};

const char* to_string(CheckpointErrc code);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what);
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

/// Writes `manifest.json` and `weights.bin` (little-endian f32, manifest order) into `dir`.
void save_checkpoint(const SuperNet& net, const std::filesystem::path& dir);
SuperNet load_checkpoint(const std::filesystem::path& dir);

nlohmann::json topology_to_json(const Topology& topology);
/// Throws ContractError with the offending field on bad input.
Topology topology_from_json(const nlohmann::json& j);

nlohmann::json structure_to_json(const TaskStructure& s);

}  // namespace l2g
