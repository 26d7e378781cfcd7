#pragma once

// Initial-frame generator G: a conditional VAE whose latent prior is a
// learnable Gaussian per task. Used to seed predictive replay of earlier
// tasks.

#include "cpl/world_model.hpp"

#include <torch/torch.h>

#include <optional>
#include <span>

namespace cpl {

struct GeneratorConfig {
    int channels = 1;
    int resolution = 64;
    int num_tasks = 3;
    int action_dim = 0;
    int latent = 16;     // d_e
    int task_embed = 8;  // d_k
    int action_embed = 8;
    int width = 32;      // channels at resolution / 4

    void validate() const;
    bool operator==(const GeneratorConfig&) const = default;
};

class FrameGeneratorImpl : public torch::nn::Cloneable<FrameGeneratorImpl> {
public:
    explicit FrameGeneratorImpl(GeneratorConfig config);
    void reset() override;

    const GeneratorConfig& config() const { return config_; }

    void check_labels(const torch::Tensor& task_ids) const;
    /// q(e | X_1, k); frames are [B, C, H, W].
    GaussianParams posterior(const torch::Tensor& frames, const torch::Tensor& task_ids);
    /// p(e | k), one row of the prior table per label.
    GaussianParams prior(const torch::Tensor& task_ids);
    /// Decodes (e, k, a_1) into frames in [0,1].
    torch::Tensor decode(const torch::Tensor& e, const torch::Tensor& task_ids,
                         const std::optional<torch::Tensor>& first_action);

    torch::nn::Sequential encoder{nullptr};
    torch::nn::Linear posterior_head{nullptr};
    torch::nn::Embedding task_embedding{nullptr};
    torch::nn::Linear action_encoder{nullptr};
    torch::nn::Linear decoder_input{nullptr};
    torch::nn::Sequential decoder{nullptr};
    torch::Tensor prior_mean;    // [K, d_e]
    torch::Tensor prior_log_var; // [K, d_e]

private:
    GeneratorConfig config_;
};
TORCH_MODULE(FrameGenerator);

/// Samples ê from the prior row of each label and decodes it. Reads only the
/// parameters of G.
torch::Tensor generate_initial_frame(FrameGenerator& generator, const std::optional<torch::Tensor>& first_action,
                                     const torch::Tensor& task_ids, torch::Generator& rng);

/// First frames of one task, all carrying the same label.
struct FirstFrameBlock {
    torch::Tensor frames;                       // [N, C, H, W]
    torch::Tensor task_ids;                     // [N]
    std::optional<torch::Tensor> first_actions; // [N, d_a]
};

struct GeneratorLossResult {
    torch::Tensor loss; // scalar
    int blocks = 0;
    double recon = 0.0;
    double kl = 0.0;
};

/// Sum over blocks of mean(l2 reconstruction + beta * KL(q(e|X_1,k) || p(e|k))).
/// `current` carries task k, each replay block one earlier task. Throws
/// ConfigError on mismatched labels or frames.
GeneratorLossResult generator_loss(FrameGenerator& generator, const FirstFrameBlock& current,
                                   std::span<const FirstFrameBlock> replayed, double beta, LatentNoise& noise);

FrameGenerator clone_generator(const FrameGenerator& generator);

} // namespace cpl
