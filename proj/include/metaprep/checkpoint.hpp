#pragma once

#include "metaprep/param_set.hpp"

#include <optional>
#include <string>

namespace metaprep {

// Training state carried alongside the model parameters so interrupted runs
// resume exactly: step counts, the data stream position, Adam moments, and
// the budget/depth the run was configured with.
struct TrainState {
  std::int64_t step{0};
  std::int64_t budget_steps{0};
  std::int64_t k{0};
  std::uint64_t data_rng_key{0};
  std::uint64_t data_rng_pos{0};
  std::int64_t opt_step{0};
  ad::ParamSet adam_m;
  ad::ParamSet adam_v;
};

struct LoadedCheckpoint {
  ad::ParamSet params;
  std::optional<TrainState> state;
};

// Checkpoint file layout: the header line "METAPREP-CKPT v1", one record per
// parameter (u32 name length, name bytes, u32 rank, i64 dims, f64 values, all
// little-endian), then a trailing u64 holding the byte length of the record
// region. Round-trips are bit-exact. Training state rides along as records
// under reserved "__" prefixes, which model loading strips.
void save_checkpoint(const std::string& path, const ad::ParamSet& params, const TrainState* state = nullptr);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace metaprep
