#pragma once

// Config-driven entry points: generate, train, eval, ablate.

#include "cpl/checkpoint.hpp"
#include "cpl/data.hpp"
#include "cpl/evaluation.hpp"
#include "cpl/replay.hpp"
#include "cpl/serialization.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cpl {

/// Ablation switches. random_k and infer_k are mutually exclusive; with
/// neither set the most recently learned label is used.
struct AblationFlags {
    bool replay = true;
    bool infer_k = true;
    bool random_k = false;
    bool adapt = false;
};

struct ExperimentConfig {
    std::vector<SyntheticTaskConfig> tasks; // declared tasks
    std::vector<int> order;                 // task_ids in training order
    uint64_t data_seed = 0;
    std::filesystem::path data_dir = "data";
    std::filesystem::path output_dir = "runs";

    WorldModelConfig model;
    GeneratorConfig generator;
    TrainSchedule schedule;
    RunMode mode = RunMode::CplFull;
    AblationFlags flags;
    AdaptOptions adapt;
    bool cumulative_adaptation = false;
    int eval_batch_size = 32;
    int max_eval_sequences = 0;
    int strips_per_task = 2;
    uint64_t seed = 0;

    int num_tasks() const { return static_cast<int>(order.size()); }
    /// Declared tasks permuted into training order.
    std::vector<SyntheticTaskConfig> ordered_tasks() const;
    /// Copies frame shape, action dimension and K from the tasks into the
    /// model configs and T into the schedule.
    void sync_shapes();
    void validate() const;
    /// Applies the desk-scale schedule (2,000 iterations, batch 16, lr 5e-4).
    void apply_desk_scale();

    RunOptions run_options() const;
    EvalOptions eval_options() const;
};

/// Parses a JSON config. Absent sections keep full-scale defaults; an absent
/// benchmark selects the default three-task ShapeWorld-CL.
ExperimentConfig parse_config(const json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
json config_to_json(const ExperimentConfig& config);

/// Writes <data_dir>/task_<id>/{train,test}. Throws ConfigError if data_dir
/// exists and is non-empty unless force is set.
std::vector<std::filesystem::path> cmd_generate(const ExperimentConfig& config, bool force);

struct Benchmark {
    std::vector<DatasetSplit> train; // training order, task_id = position
    std::vector<DatasetSplit> test;
};

/// Reads the frame directories written by cmd_generate.
Benchmark load_benchmark(const ExperimentConfig& config);
/// Generates the same splits in memory.
Benchmark build_benchmark(const ExperimentConfig& config);

struct TrainOutputs {
    RunState state;
    std::filesystem::path eval_csv;
    std::filesystem::path log_csv;
    std::filesystem::path final_checkpoint;
};

/// Runs the configured mode over the benchmark, writing per-period
/// checkpoints, the EvalMatrix CSV, loss CSVs and plots under output_dir.
/// With resume set, continues from the latest checkpoint of the mode.
TrainOutputs cmd_train(const ExperimentConfig& config, bool resume, const Benchmark* benchmark = nullptr);

struct EvalOutputs {
    std::vector<TaskScore> scores;
    std::filesystem::path summary_csv;
    std::filesystem::path sequences_csv;
};

/// Evaluates a checkpoint under the configured flags. Throws ConfigError when
/// the checkpoint's task count disagrees with the config.
EvalOutputs cmd_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                     const Benchmark* benchmark = nullptr);

struct AblationRow {
    AblationFlags flags;
    double psnr = 0.0;
    double ssim = 0.0;
    double inference_accuracy = 0.0;
};

/// The five ablation configurations under one seed; writes ablation.csv.
std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const Benchmark* benchmark = nullptr);

std::filesystem::path latest_checkpoint(const ExperimentConfig& config);

} // namespace cpl
