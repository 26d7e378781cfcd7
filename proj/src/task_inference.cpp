#include "cpl/task_inference.hpp"

#include "cpl/errors.hpp"

namespace cpl {

namespace {

torch::Tensor batched(const torch::Tensor& frames) {
    if (frames.dim() == 4) return frames.unsqueeze(0);
    if (frames.dim() == 5) return frames;
    throw ShapeError("frames must be [T, C, H, W] or [B, T, C, H, W]");
}

std::optional<torch::Tensor> batched_actions(const std::optional<torch::Tensor>& actions) {
    if (!actions) return std::nullopt;
    if (actions->dim() == 2) return actions->unsqueeze(0);
    if (actions->dim() == 3) return *actions;
    throw ShapeError("actions must be [L, d_a] or [B, L, d_a]");
}

} // namespace

int argmin_task(const std::vector<double>& errors) {
    if (errors.empty()) throw std::invalid_argument("argmin_task: no candidates");
    size_t best = 0;
    for (size_t k = 1; k < errors.size(); ++k)
        if (errors[k] < errors[best]) best = k;
    return static_cast<int>(best) + 1;
}

std::vector<InferenceReport> infer_tasks(WorldModel& model, const torch::Tensor& frames,
                                         const std::optional<torch::Tensor>& actions, int num_tasks,
                                         const torch::Generator& rng) {
    auto x = batched(frames);
    auto a = batched_actions(actions);
    const int T = static_cast<int>(x.size(1));
    if (T < 2) throw ConfigError("infer_task: need T >= 2 observed frames to hold out probe frames");
    if (num_tasks < 1 || num_tasks > model->config().num_tasks)
        throw TaskLabelError("infer_task: candidate label count outside the model's task table");
    const int s = T / 2;
    const int64_t B = x.size(0);
    if (a) *a = a->narrow(1, 0, T - 1);

    torch::NoGradGuard no_grad;
    auto context = x.narrow(1, 0, s);
    auto held_out = x.narrow(1, s, T - s);
    std::vector<InferenceReport> reports(static_cast<size_t>(B));
    for (auto& r : reports) r.probe_errors.resize(static_cast<size_t>(num_tasks));
    for (int k = 1; k <= num_tasks; ++k) {
        auto gen = rng.clone();
        auto pred = deploy_predict(model, context, a, torch::full({B}, k, torch::kInt64), s, T - s, gen);
        auto err = (pred - held_out).pow(2).mean({2, 3, 4}).mean(1).to(torch::kDouble).contiguous();
        auto acc = err.accessor<double, 1>();
        for (int64_t b = 0; b < B; ++b) reports[static_cast<size_t>(b)].probe_errors[static_cast<size_t>(k - 1)] = acc[b];
    }
    for (auto& r : reports) r.inferred_task = argmin_task(r.probe_errors);
    return reports;
}

InferenceReport infer_task(WorldModel& model, const torch::Tensor& frames, const std::optional<torch::Tensor>& actions,
                           int num_tasks, const torch::Generator& rng) {
    auto reports = infer_tasks(model, frames, actions, num_tasks, rng);
    if (reports.size() != 1) throw ShapeError("infer_task expects a single sequence");
    return reports.front();
}

WorldModel adapt(const WorldModel& model, const torch::Tensor& frames, const std::optional<torch::Tensor>& actions,
                 int task, const AdaptOptions& options, uint64_t seed) {
    if (options.steps < 0) throw ConfigError("adapt: steps must be >= 0");
    auto clone = clone_model(model);
    if (options.steps == 0) return clone;

    auto x = batched(frames);
    auto a = batched_actions(actions);
    const int T = static_cast<int>(x.size(1));
    if (T < 2) throw ConfigError("adapt: need T >= 2 observed frames");
    if (a) *a = a->narrow(1, 0, T - 1);
    auto labels = torch::full({x.size(0)}, task, torch::kInt64);

    clone->train();
    torch::optim::Adam opt(clone->parameters(), torch::optim::AdamOptions(options.learning_rate)
                                                    .betas({options.beta1, options.beta2}));
    ElboOptions eo{T / 2, options.alpha, false};
    for (int step = 0; step < options.steps; ++step) {
        LatentNoise noise(make_generator(derive_seed(seed, static_cast<uint64_t>(step))));
        opt.zero_grad();
        auto r = elbo_loss(clone, x, a, labels, eo, noise);
        r.loss.backward();
        opt.step();
    }
    return clone;
}

torch::Tensor deploy_predict(WorldModel& model, const torch::Tensor& frames, const std::optional<torch::Tensor>& actions,
                             const torch::Tensor& task_ids, int context_len, int horizon, torch::Generator& rng) {
    auto x = batched(frames);
    auto a = batched_actions(actions);
    if (x.size(1) < context_len) throw ShapeError("deploy_predict: fewer than T observed frames");
    if (task_ids.dim() != 1 || task_ids.size(0) != x.size(0))
        throw ShapeError("deploy_predict: one task label per sequence required");
    if (a && a->size(0) != x.size(0)) throw ShapeError("deploy_predict: actions and frames disagree in batch size");
    LatentNoise noise(rng);
    RolloutOptions ro{context_len, horizon, RolloutMode::TestPrior, false};
    auto out = rollout(model, x.narrow(1, 0, context_len), a, task_ids, ro, noise);
    return out.predictions.narrow(1, context_len - 1, horizon);
}

} // namespace cpl
