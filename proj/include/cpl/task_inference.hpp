#pragma once

// Trial-and-error task inference, test-time adaptation and deployment.

#include "cpl/data.hpp"
#include "cpl/world_model.hpp"

#include <torch/torch.h>

#include <optional>
#include <vector>

namespace cpl {

struct InferenceReport {
    int inferred_task = 1;            // argmin of probe_errors, lowest index on ties
    std::vector<double> probe_errors; // one per candidate label
    bool adapted = false;
    int adaptation_steps = 0;
};

/// Index (1-based) of the smallest error; ties go to the lowest index.
int argmin_task(const std::vector<double>& errors);

/// Probes every label k in {1..num_tasks}: rolls out the prior from
/// X_1:s, s = floor(T/2), predicts X_{s+1:T} and scores the mean per-frame
/// MSE. frames are [T, C, H, W] or [B, T, C, H, W]; actions cover a_1:T-1.
/// Every label is probed with a copy of the same generator state.
std::vector<InferenceReport> infer_tasks(WorldModel& model, const torch::Tensor& frames,
                                         const std::optional<torch::Tensor>& actions, int num_tasks,
                                         const torch::Generator& rng);
InferenceReport infer_task(WorldModel& model, const torch::Tensor& frames, const std::optional<torch::Tensor>& actions,
                           int num_tasks, const torch::Generator& rng);

struct AdaptOptions {
    int steps = 5;
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double alpha = 1e-4;
};

/// Clones the model and runs `steps` Adam steps of the ELBO on the observed
/// window X_1:T only (targets X_2:T, free-running after floor(T/2)). The
/// input model is left untouched.
WorldModel adapt(const WorldModel& model, const torch::Tensor& frames, const std::optional<torch::Tensor>& actions,
                 int task, const AdaptOptions& options, uint64_t seed);

/// Prior rollout from X_1:T returning exactly the H future frames
/// [B, H, C, H, W]. Frames past T are never read.
torch::Tensor deploy_predict(WorldModel& model, const torch::Tensor& frames, const std::optional<torch::Tensor>& actions,
                             const torch::Tensor& task_ids, int context_len, int horizon, torch::Generator& rng);

} // namespace cpl
