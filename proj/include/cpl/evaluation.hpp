#pragma once

// Per-task evaluation under a task-label policy, with optional test-time
// adaptation.

#include "cpl/data.hpp"
#include "cpl/metrics.hpp"
#include "cpl/task_inference.hpp"
#include "cpl/world_model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cpl {

/// Latest uses the most recently learned label (K), i.e. no task inference.
enum class TaskPolicy { Infer, Oracle, Random, Latest };

std::string to_string(TaskPolicy p);
TaskPolicy task_policy_from_string(const std::string& s);

struct EvalOptions {
    TaskPolicy policy = TaskPolicy::Infer;
    bool adapt = false;
    bool cumulative_adaptation = false; // carry the adapted model along the test stream
    AdaptOptions adapt_options;
    int context_len = 5;
    int horizon = 10;
    int batch_size = 32;
    int max_sequences = 0; // 0 = whole split
    int candidate_labels = 0; // labels 1..n are eligible; 0 = every label of the model
};

struct SequenceScore {
    int index = 0;
    int true_task = 0;
    int used_task = 0;
    std::vector<double> probe_errors; // empty unless policy == Infer
    double psnr = 0.0;
    double ssim = 0.0;
    torch::Tensor prediction; // [H, C, H, W], kept for qualitative strips
};

struct TaskScore {
    double psnr = 0.0;
    double ssim = 0.0;
    double inference_accuracy = 0.0; // fraction of sequences whose used label equals true_label
    std::vector<SequenceScore> sequences;

    EvalEntry entry() const { return {psnr, ssim, inference_accuracy}; }
};

/// Scores the model on a test split. `true_label` is the label the model was
/// trained with for this task. Labels are drawn from {1..model K}.
TaskScore evaluate_task(WorldModel& model, const DatasetSplit& split, int true_label, const EvalOptions& options,
                        uint64_t seed);

} // namespace cpl
