#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "hints/deeponet.hpp"

namespace hints {

/// On-disk model. `params` is the model to use; `resume` carries the
/// optimizer state of the last epoch so training can continue exactly.
///
/// JSON layout:
///   format      "hints-checkpoint", version 1
///   arch        conv_channels, branch_widths, trunk_widths, n_out, ...
///   seed, epoch
///   params      [{name, shape, values}] in layer order
///   resume      optional {epoch, params, adam_state: {step, m, v}}
///   provenance  optional, set by fine-tuning
///   meta        free-form (problem, geometry, training summary)
struct Checkpoint {
  DeepONetParams params;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::optional<TrainState> resume;
  nlohmann::json provenance;
  nlohmann::json meta;
};

nlohmann::json params_to_json(const DeepONetParams& params);
DeepONetParams params_from_json(const Arch& arch, const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Writes JSON with a trailing newline; throws IoError on failure.
void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace hints
