#pragma once

// Predictive experience replay: the action buffer, rehearsal synthesis from
// frozen snapshots, and the task-by-task training loop for M and G.

#include "cpl/data.hpp"
#include "cpl/evaluation.hpp"
#include "cpl/frame_generator.hpp"
#include "cpl/metrics.hpp"
#include "cpl/world_model.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cpl {

struct TrainSchedule {
    int iterations = 30000;    // world-model steps per task
    int iterations_g = -1;     // generator steps per task; < 0 selects iterations / 10
    int batch_size = 32;
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double alpha = 1e-4;       // KL weight of the world-model ELBO
    double beta = 1e-4;        // KL weight of the generator objective
    double replay_ratio = 1.0 / 3.0;
    double action_fraction = 0.07;
    bool regenerate_replay = false; // resynthesize replay slots per iteration from the frozen snapshots
    bool full_teacher_forcing = false;
    int context_len = 5;

    int generator_iterations() const { return iterations_g >= 0 ? iterations_g : iterations / 10; }
    void validate() const;
    /// 2,000 iterations per task, batch 16, lr 5e-4.
    static TrainSchedule desk_scale();
};

/// ceil(fraction * n), robust to the binary representation of fraction.
int fraction_count(double fraction, size_t n);

/// Splits `total` replay sequences evenly over `tasks` previous tasks; the
/// earliest tasks absorb the remainder.
std::vector<int> split_replay_volume(int total, int tasks);

struct RetainedActions {
    std::vector<torch::Tensor> actions; // [L-1, d_a] each; empty for action-free data
    std::vector<int> lengths;           // sequence lengths of the retained entries
};

/// Per-task retained subset of action sequences. Holds no frames.
struct ActionBuffer {
    double fraction = 0.07;
    std::map<int, RetainedActions> tasks;

    size_t count(int task) const;
    bool has(int task) const { return count(task) > 0; }
    size_t total_sequences() const;
    size_t payload_bytes() const;
};

/// Uniformly retains ceil(fraction * n) sequences of the split without
/// replacement.
ActionBuffer store_actions(const ActionBuffer& buffer, int task, const DatasetSplit& split, double fraction,
                           std::mt19937_64& rng);

struct ReplayDataset {
    std::vector<VideoSequence> sequences; // task_id = replayed task
    int task_id = 0;
    int snapshot_version = 0;
};

/// For each draw: sample a retained action sequence, generate X̂_1 with G and
/// roll M out under the prior for the remaining steps. Output carries no
/// autograd history. `label` is the conditioning label (defaults to task).
ReplayDataset synthesize_replay(WorldModel& model_snapshot, FrameGenerator& generator_snapshot,
                                const ActionBuffer& buffer, int task, int count, uint64_t seed,
                                std::optional<int> label = std::nullopt, int snapshot_version = 0);

struct TrainLogEntry {
    int iteration = 0;
    int task = 0;
    double loss = 0.0;
    double recon = 0.0;
    double kl = 0.0;
};

struct TrainLogs {
    std::vector<TrainLogEntry> world_model;
    std::vector<TrainLogEntry> generator;
};

/// How task identity reaches the models. Unconditioned runs map every task
/// onto a single shared label.
struct TrainerOptions {
    bool conditioned = true;
    bool replay = true;
    bool train_generator = true;

    int label_for(int task) const { return conditioned ? task : 1; }
};

TrainLogs train_first_task(WorldModel& model, FrameGenerator& generator, const DatasetSplit& split,
                           const TrainSchedule& schedule, const TrainerOptions& options, uint64_t seed);

struct TaskTrainReport {
    TrainLogs logs;
    std::map<int, int> replay_counts; // replayed task -> sequences synthesized
    std::vector<ReplayDataset> replays;
};

/// Trains on task k = split.task_id with replay of every buffered task < k.
/// Replay datasets are returned for inspection only; callers that persist
/// state between tasks keep the buffer alone.
TaskTrainReport train_task(WorldModel& model, FrameGenerator& generator, const DatasetSplit& split,
                           const ActionBuffer& buffer, const TrainSchedule& schedule, const TrainerOptions& options,
                           uint64_t seed);

/// Runs `iterations` world-model steps on batches drawn uniformly from the
/// pool, each sequence conditioned on options.label_for(sequence.task_id).
std::vector<TrainLogEntry> train_world_model(WorldModel& model, std::span<const VideoSequence> pool,
                                             const TrainSchedule& schedule, const TrainerOptions& options,
                                             int iterations, int log_task, uint64_t seed,
                                             const std::function<VideoSequence(int task, uint64_t seed)>& regenerate = {});

enum class RunMode { CplFull, SequentialBase, Joint };
std::string to_string(RunMode m);
RunMode run_mode_from_string(const std::string& s);

struct RunOptions {
    RunMode mode = RunMode::CplFull;
    std::optional<bool> replay; // default: on for cpl_full, off otherwise
    EvalOptions eval;
    uint64_t seed = 0;
    int stop_after_periods = 0; // > 0 stops early (simulated interruption)

    bool replay_enabled() const { return mode != RunMode::Joint && replay.value_or(mode == RunMode::CplFull); }
    TrainerOptions trainer() const;
    int model_tasks(int num_tasks) const { return mode == RunMode::CplFull ? num_tasks : 1; }
};

/// Everything carried from one training period to the next.
struct RunState {
    WorldModel model{nullptr};
    FrameGenerator generator{nullptr};
    ActionBuffer buffer;
    EvalMatrix matrix;
    TrainLogs logs;
    int completed_periods = 0;
};

struct RehearsalAudit {
    size_t action_sequences = 0;
    size_t action_bytes = 0;
    size_t frame_tensors = 0;
    size_t frame_bytes = 0;
};

/// Storage held for rehearsal between periods: only the action buffer.
RehearsalAudit audit_rehearsal(const RunState& state);

/// Fresh models for a run (initialisation seeded from the run seed).
RunState initial_run_state(const WorldModelConfig& model_config, const GeneratorConfig& generator_config,
                           int num_tasks, const RunOptions& options);

using PeriodCallback = std::function<void(const RunState&, int period)>;

/// Trains over the ordered tasks and evaluates every task after each period.
/// Task i (1-based position) carries label i. Resumes from `state` when its
/// completed_periods > 0; each period draws from a stream derived from
/// (seed, period) so resumption is exact. A non-finite loss calls
/// on_divergence with the last finite state before rethrowing.
RunState run_sequence(const std::vector<DatasetSplit>& train, const std::vector<DatasetSplit>& test,
                      const WorldModelConfig& model_config, const GeneratorConfig& generator_config,
                      const TrainSchedule& schedule, const RunOptions& options, std::optional<RunState> resume = {},
                      const PeriodCallback& on_period_end = {}, const PeriodCallback& on_divergence = {});

/// Evaluates all tasks; one EvalMatrix row.
std::vector<EvalEntry> evaluate_all(WorldModel& model, const std::vector<DatasetSplit>& test, const RunOptions& options,
                                    uint64_t seed);

} // namespace cpl
