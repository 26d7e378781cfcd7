#pragma once

// Mixture world model: a task-conditioned posterior q(z_t | X_1:t, k), a
// task-conditioned prior p(z_t | X_1:t-1, k) and a deterministic recurrent
// predictor built from stacked spatiotemporal LSTM cells.
//
// The mixture over tasks is realised as Gaussian heads sharing a trunk; the
// task label enters only through one learned embedding row per task.

#include "cpl/data.hpp"

#include <torch/torch.h>

#include <optional>
#include <vector>

namespace cpl {

struct WorldModelConfig {
    int channels = 1;
    int resolution = 64;
    int num_tasks = 3;
    int action_dim = 0;
    int layers = 2;
    int hidden = 32;           // d_h, ST-LSTM channels
    int latent = 16;           // d_z
    int task_embed = 8;        // d_k
    int encoder_channels = 16; // frame features at resolution / 4
    int summary_hidden = 64;   // recurrent summary behind q and p
    int action_embed = 8;
    int kernel = 3;
    bool share_encoder = true; // q and p/dynamics share the frame encoder

    int feature_size() const { return resolution / 4; }
    void validate() const;
    bool operator==(const WorldModelConfig&) const = default;
};

/// Diagonal Gaussian, batched along dim 0: mean/log_var are [B, d].
struct GaussianParams {
    torch::Tensor mean;
    torch::Tensor log_var;

    GaussianParams detach() const { return {mean.detach(), log_var.detach()}; }
};

inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 6.0;

/// KL(q || p) summed over the last dimension. Throws ConfigError when the
/// shapes differ.
torch::Tensor gaussian_kl(const GaussianParams& q, const GaussianParams& p);

/// mean + exp(log_var / 2) * eps.
torch::Tensor reparam_sample(const GaussianParams& params, const torch::Tensor& eps);
torch::Tensor reparam_sample(const GaussianParams& params, torch::Generator& gen);

/// Source of standard-normal draws for the latent path. Either pulls from a
/// generator or replays a pre-drawn [steps, B, d] tensor, which lets callers
/// split a batch and still see identical noise per sequence.
class LatentNoise {
public:
    explicit LatentNoise(torch::Generator gen) : gen_(std::move(gen)) {}
    explicit LatentNoise(torch::Tensor presampled) : presampled_(std::move(presampled)) {}

    torch::Tensor next(int64_t batch, int64_t dim, const torch::TensorOptions& options);

private:
    std::optional<torch::Generator> gen_;
    torch::Tensor presampled_;
    int64_t cursor_ = 0;
};

torch::Generator make_generator(uint64_t seed);

struct LstmState {
    torch::Tensor h;
    torch::Tensor c;
};

struct RecurrentState {
    std::vector<torch::Tensor> hidden; // per layer [B, d_h, H', W']
    std::vector<torch::Tensor> cell;   // per layer [B, d_h, H', W']
    torch::Tensor memory;              // spatiotemporal memory, [B, d_h, H', W']
    LstmState posterior;               // summary behind q
    LstmState prior;                   // summary behind p
};

/// PredRNN spatiotemporal LSTM cell: temporal cell c, spatiotemporal memory
/// m, fused output gate.
class SpatioTemporalCellImpl : public torch::nn::Cloneable<SpatioTemporalCellImpl> {
public:
    SpatioTemporalCellImpl(int in_channels, int hidden, int kernel);
    void reset() override;

    struct Output {
        torch::Tensor h, c, m;
    };
    Output forward(const torch::Tensor& x, const torch::Tensor& h, const torch::Tensor& c, const torch::Tensor& m);

    int in_channels, hidden, kernel;
    torch::nn::Conv2d conv_x{nullptr}, conv_h{nullptr}, conv_m{nullptr}, conv_o{nullptr}, conv_last{nullptr};
};
TORCH_MODULE(SpatioTemporalCell);

class WorldModelImpl : public torch::nn::Cloneable<WorldModelImpl> {
public:
    explicit WorldModelImpl(WorldModelConfig config);
    void reset() override;

    const WorldModelConfig& config() const { return config_; }

    RecurrentState initial_state(int64_t batch, const torch::TensorOptions& options) const;

    /// Task embedding rows for 1-based labels; throws TaskLabelError.
    torch::Tensor embed(const torch::Tensor& task_ids);
    void check_labels(const torch::Tensor& task_ids) const;

    /// Posterior update: consumes X_t into the q summary.
    std::pair<GaussianParams, LstmState> posterior_step(const LstmState& state, const torch::Tensor& frame,
                                                        const torch::Tensor& task_ids);
    /// Prior update: consumes X_{t-1} into the p summary. With no frame the
    /// summary is used as is (the zero state at t = 1).
    std::pair<GaussianParams, LstmState> prior_step(const LstmState& state,
                                                    const std::optional<torch::Tensor>& prev_frame,
                                                    const torch::Tensor& task_ids);

    /// One dynamics step producing X̂_t in [0,1].
    std::pair<torch::Tensor, RecurrentState> predict_frame(const RecurrentState& state, const torch::Tensor& prev_frame,
                                                           const std::optional<torch::Tensor>& prev_action,
                                                           const torch::Tensor& z, const torch::Tensor& task_ids);

    torch::nn::Sequential frame_encoder{nullptr};
    torch::nn::Sequential posterior_encoder{nullptr}; // only when !share_encoder
    torch::nn::Embedding task_embedding{nullptr};
    torch::nn::LSTMCell posterior_lstm{nullptr}, prior_lstm{nullptr};
    torch::nn::Linear posterior_head{nullptr}, prior_head{nullptr};
    torch::nn::Linear action_encoder{nullptr};
    torch::nn::ModuleList cells{nullptr};
    torch::nn::Sequential frame_decoder{nullptr};

private:
    torch::Tensor summarise(torch::nn::Sequential& encoder, const torch::Tensor& frame);
    GaussianParams head_params(torch::nn::Linear& head, const torch::Tensor& h, const torch::Tensor& emb);

    WorldModelConfig config_;
};
TORCH_MODULE(WorldModel);

/// Runs q over frames [B, t, C, H, W] from a fresh summary; returns the
/// posterior for the last frame and the updated summary.
std::pair<GaussianParams, LstmState> posterior_params(WorldModel& model, const torch::Tensor& frames,
                                                      const torch::Tensor& task_ids,
                                                      const std::optional<LstmState>& state = std::nullopt);
/// Runs p over frames [B, t-1, C, H, W] (t-1 may be 0); returns the prior for
/// step t and the updated summary.
std::pair<GaussianParams, LstmState> prior_params(WorldModel& model, const torch::Tensor& frames,
                                                  const torch::Tensor& task_ids,
                                                  const std::optional<LstmState>& state = std::nullopt);

enum class RolloutMode { TrainPosterior, TestPrior };

struct RolloutOptions {
    int context_len = 5; // T
    int horizon = 10;    // H
    RolloutMode mode = RolloutMode::TestPrior;
    bool full_teacher_forcing = false; // train mode: feed ground truth over the horizon too
};

struct RolloutResult {
    torch::Tensor predictions; // [B, T+H-1, C, H, W], steps 2..T+H
    torch::Tensor kl;          // [B, T+H-1]; defined in TrainPosterior mode only
};

/// For t <= T the model consumes ground-truth X_{t-1}; afterwards its own
/// prediction. TestPrior reads frames[:, :T] only.
RolloutResult rollout(WorldModel& model, const torch::Tensor& frames, const std::optional<torch::Tensor>& actions,
                      const torch::Tensor& task_ids, const RolloutOptions& options, LatentNoise& noise);

struct ElboResult {
    torch::Tensor loss;          // scalar, batch mean of per_sequence
    torch::Tensor per_sequence;  // [B], sum over t = 2..T+H of mse + alpha * kl
    torch::Tensor recon_steps;   // [B, T+H-1]
    torch::Tensor kl_steps;      // [B, T+H-1]
    double recon = 0.0;          // batch mean of summed reconstruction
    double kl = 0.0;             // batch mean of summed KL
};

struct ElboOptions {
    int context_len = 5;
    double alpha = 1e-4;
    bool full_teacher_forcing = false;
};

/// Negative ELBO with a unit-variance Gaussian likelihood (MSE). The horizon
/// is frames.size(1) - context_len. Throws NumericalError on a non-finite
/// term.
ElboResult elbo_loss(WorldModel& model, const torch::Tensor& frames, const std::optional<torch::Tensor>& actions,
                     const torch::Tensor& task_ids, const ElboOptions& options, LatentNoise& noise);

/// Deep copy with independent parameters.
WorldModel clone_model(const WorldModel& model);

} // namespace cpl
