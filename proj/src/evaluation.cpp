#include "cpl/evaluation.hpp"

#include "cpl/errors.hpp"

#include <algorithm>
#include <random>

namespace cpl {

std::string to_string(TaskPolicy p) {
    switch (p) {
    case TaskPolicy::Infer: return "infer";
    case TaskPolicy::Oracle: return "oracle";
    case TaskPolicy::Random: return "random";
    case TaskPolicy::Latest: return "latest";
    }
    return "?";
}

TaskPolicy task_policy_from_string(const std::string& s) {
    if (s == "infer") return TaskPolicy::Infer;
    if (s == "oracle") return TaskPolicy::Oracle;
    if (s == "random") return TaskPolicy::Random;
    if (s == "latest") return TaskPolicy::Latest;
    throw ConfigError("unknown task policy '" + s + "'");
}

TaskScore evaluate_task(WorldModel& model, const DatasetSplit& split, int true_label, const EvalOptions& options,
                        uint64_t seed) {
    const int model_k = model->config().num_tasks;
    const int K = options.candidate_labels > 0 ? std::min(options.candidate_labels, model_k) : model_k;
    const int T = options.context_len;
    const int H = options.horizon;
    TaskScore score;
    if (split.empty()) return score;

    size_t n = split.size();
    if (options.max_sequences > 0) n = std::min(n, static_cast<size_t>(options.max_sequences));
    const size_t bs = static_cast<size_t>(std::max(1, options.adapt ? 1 : options.batch_size));
    std::mt19937_64 label_rng(derive_seed(seed, 0x7a5c));
    std::uniform_int_distribution<int> random_label(1, K);

    model->eval();
    WorldModel stream_model = options.adapt && options.cumulative_adaptation ? clone_model(model) : model;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    int correct = 0;
    for (size_t start = 0; start < n; start += bs) {
        const size_t count = std::min(bs, n - start);
        auto batch = stack_sequences(std::span<const VideoSequence>(split.sequences).subspan(start, count));
        auto frames = batch.frames.narrow(1, 0, T + H);
        auto observed = frames.narrow(1, 0, T);
        std::optional<torch::Tensor> actions;
        if (batch.actions) actions = batch.actions->narrow(1, 0, T + H - 1);
        std::optional<torch::Tensor> observed_actions;
        if (actions) observed_actions = actions->narrow(1, 0, T - 1);

        std::vector<SequenceScore> seqs(count);
        const uint64_t batch_seed = derive_seed(seed, static_cast<uint64_t>(start));
        if (options.policy == TaskPolicy::Infer) {
            auto reports = infer_tasks(model, observed, observed_actions, K, make_generator(batch_seed));
            for (size_t i = 0; i < count; ++i) {
                seqs[i].used_task = reports[i].inferred_task;
                seqs[i].probe_errors = reports[i].probe_errors;
            }
        } else {
            for (auto& s : seqs) {
                if (options.policy == TaskPolicy::Oracle) s.used_task = true_label;
                else if (options.policy == TaskPolicy::Latest) s.used_task = K;
                else s.used_task = random_label(label_rng);
            }
        }
        std::vector<int64_t> labels;
        for (auto& s : seqs) labels.push_back(s.used_task);
        auto label_tensor = torch::tensor(labels, torch::kInt64);

        torch::Tensor pred;
        auto gen = make_generator(derive_seed(batch_seed, 1));
        if (options.adapt) {
            WorldModel base = options.cumulative_adaptation ? stream_model : model;
            auto adapted = adapt(base, observed, observed_actions, static_cast<int>(labels[0]), options.adapt_options,
                                 derive_seed(batch_seed, 2));
            adapted->eval();
            torch::NoGradGuard no_grad;
            pred = deploy_predict(adapted, observed, actions, label_tensor, T, H, gen);
            if (options.cumulative_adaptation) stream_model = adapted;
        } else {
            torch::NoGradGuard no_grad;
            pred = deploy_predict(model, observed, actions, label_tensor, T, H, gen);
        }
        pred = pred.detach();
        auto target = frames.narrow(1, T, H);
        for (size_t i = 0; i < count; ++i) {
            auto& s = seqs[i];
            s.index = static_cast<int>(start + i);
            s.true_task = true_label;
            s.psnr = psnr(pred[static_cast<int64_t>(i)], target[static_cast<int64_t>(i)]);
            s.ssim = ssim(pred[static_cast<int64_t>(i)], target[static_cast<int64_t>(i)]);
            s.prediction = pred[static_cast<int64_t>(i)];
            psnr_sum += s.psnr;
            ssim_sum += s.ssim;
            correct += s.used_task == true_label ? 1 : 0;
            score.sequences.push_back(std::move(s));
        }
    }
    score.psnr = psnr_sum / static_cast<double>(n);
    score.ssim = ssim_sum / static_cast<double>(n);
    score.inference_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return score;
}

} // namespace cpl
