#pragma once

// Versioned checkpoints of a run: M and G parameters, configs, K, the seed and
// period counter (which determine every later random stream), the action
// buffer and the evaluation rows so far.

#include "cpl/replay.hpp"

#include <filesystem>
#include <string>

namespace cpl {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointMeta {
    int format_version = kCheckpointFormatVersion;
    std::string mode = "cpl_full";
    uint64_t seed = 0;
    int num_tasks = 0; // tasks in the run; the model may hold fewer labels
    int completed_periods = 0;
    bool replay = true;
    WorldModelConfig model_config;
    GeneratorConfig generator_config;
};

void save_checkpoint(const std::filesystem::path& path, const RunState& state, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    RunState state;
    CheckpointMeta meta;
};

/// Throws ConfigError on a missing file, unknown format version or a tensor
/// whose shape disagrees with the stored configs.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// "<mode>_task<k>.pt"
std::string checkpoint_name(const std::string& mode, int period);

} // namespace cpl
