#pragma once

// Dataset, checkpoint and metrics files.
//
// Datasets come in two layouts that round-trip exactly:
//   text:   a directory with manifest.json plus observations.csv,
//           controls.csv and truth.csv (shortest round-trip decimals)
//   binary: one file, magic "PHYDSET1", a length-prefixed JSON header and
//           little-endian float64 blocks
// Both headers carry the system spec, generator version and proposal
// settings, and mark the truth block as analysis-only.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "phydisc/model.hpp"
#include "phydisc/simulate.hpp"
#include "phydisc/train.hpp"

namespace phydisc {

namespace fs = std::filesystem;

/// Free-form provenance stamped into file headers.
struct Provenance {
  std::string config_hash;
  std::string note;
};

void save_dataset_text(const Dataset& data, const fs::path& dir,
                       const Provenance& prov = {});
Dataset load_dataset_text(const fs::path& dir);

void save_dataset_binary(const Dataset& data, const fs::path& file,
                         const Provenance& prov = {});
Dataset load_dataset_binary(const fs::path& file);

/// Binary when the path ends in ".bin", text directory otherwise.
void save_dataset(const Dataset& data, const fs::path& path, const Provenance& prov = {});
/// Binary when `path` is a regular file, text when it is a directory.
Dataset load_dataset(const fs::path& path);

/// FNV-1a over the binary payload (spec, controls, observations, truth).
std::uint64_t dataset_hash(const Dataset& data);

struct Checkpoint {
  ModelParams params;
  TrainConfig train;
  std::size_t epochs_done = 0;  ///< next epoch to run on resume
  std::uint64_t dataset_hash = 0;
  Provenance provenance;

  explicit Checkpoint(ModelParams p) : params(std::move(p)) {}
};

/// JSON with every parameter stored as a shortest round-trip decimal, so a
/// load reproduces the values bit for bit.
void save_checkpoint(const Checkpoint& ckpt, const fs::path& file);
Checkpoint load_checkpoint(const fs::path& file);

/// One JSON object per line.
std::string metrics_line(const EpochRecord& record);
EpochRecord parse_metrics_line(const std::string& line);

/// Writes `text` to `file` via a temporary sibling and rename.
void write_file_atomic(const fs::path& file, const std::string& text);
std::string read_file(const fs::path& file);

}  // namespace phydisc
