#include "cpl/world_model.hpp"

#include "cpl/errors.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace cpl {

void WorldModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("world model: " + what); };
    if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
    if (resolution < 4 || resolution % 4 != 0) fail("resolution must be a positive multiple of 4");
    if (num_tasks < 1) fail("num_tasks must be >= 1");
    if (action_dim < 0) fail("action_dim must be >= 0");
    if (layers < 1) fail("layers must be >= 1");
    if (hidden < 1 || latent < 1 || task_embed < 1 || encoder_channels < 1 || summary_hidden < 1)
        fail("layer widths must be positive");
    if (kernel < 1 || kernel % 2 == 0) fail("kernel must be odd");
}

torch::Generator make_generator(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor LatentNoise::next(int64_t batch, int64_t dim, const torch::TensorOptions& options) {
    if (gen_) return torch::randn({batch, dim}, *gen_, options);
    if (cursor_ >= presampled_.size(0)) throw std::out_of_range("LatentNoise: pre-drawn noise exhausted");
    auto eps = presampled_[cursor_++];
    if (eps.size(0) != batch || eps.size(1) != dim) throw ShapeError("LatentNoise: pre-drawn noise has wrong shape");
    return eps.to(options);
}

torch::Tensor gaussian_kl(const GaussianParams& q, const GaussianParams& p) {
    if (q.mean.sizes() != p.mean.sizes() || q.log_var.sizes() != p.log_var.sizes() ||
        q.mean.sizes() != q.log_var.sizes())
        throw ConfigError("gaussian_kl: dimension mismatch");
    // 0.5 * [lv_p - lv_q + (var_q + (mu_q - mu_p)^2) / var_p - 1]
    auto diff = q.mean - p.mean;
    auto terms = 0.5 * (p.log_var - q.log_var + (torch::exp(q.log_var) + diff * diff) * torch::exp(-p.log_var) - 1.0);
    return terms.sum(-1);
}

torch::Tensor reparam_sample(const GaussianParams& params, const torch::Tensor& eps) {
    auto log_var = params.log_var.clamp(kLogVarMin, kLogVarMax);
    return params.mean + torch::exp(0.5 * log_var) * eps;
}

torch::Tensor reparam_sample(const GaussianParams& params, torch::Generator& gen) {
    auto eps = torch::randn(params.mean.sizes(), gen, params.mean.options());
    return reparam_sample(params, eps);
}

// -- ST-LSTM cell --------------------------------------------------------------

SpatioTemporalCellImpl::SpatioTemporalCellImpl(int in_channels_, int hidden_, int kernel_)
    : in_channels(in_channels_), hidden(hidden_), kernel(kernel_) {
    reset();
}

void SpatioTemporalCellImpl::reset() {
    const int pad = kernel / 2;
    auto conv = [&](int in, int out, int k, int p) { return nn::Conv2d(nn::Conv2dOptions(in, out, k).padding(p)); };
    conv_x = register_module("conv_x", conv(in_channels, 7 * hidden, kernel, pad));
    conv_h = register_module("conv_h", conv(hidden, 4 * hidden, kernel, pad));
    conv_m = register_module("conv_m", conv(hidden, 3 * hidden, kernel, pad));
    conv_o = register_module("conv_o", conv(2 * hidden, hidden, kernel, pad));
    conv_last = register_module("conv_last", conv(2 * hidden, hidden, 1, 0));
}

SpatioTemporalCellImpl::Output SpatioTemporalCellImpl::forward(const torch::Tensor& x, const torch::Tensor& h,
                                                               const torch::Tensor& c, const torch::Tensor& m) {
    constexpr double forget_bias = 1.0;
    auto xs = conv_x->forward(x).chunk(7, 1);
    auto hs = conv_h->forward(h).chunk(4, 1);
    auto ms = conv_m->forward(m).chunk(3, 1);

    auto i = torch::sigmoid(xs[0] + hs[0]);
    auto f = torch::sigmoid(xs[1] + hs[1] + forget_bias);
    auto g = torch::tanh(xs[2] + hs[2]);
    auto c_new = f * c + i * g;

    auto i_m = torch::sigmoid(xs[3] + ms[0]);
    auto f_m = torch::sigmoid(xs[4] + ms[1] + forget_bias);
    auto g_m = torch::tanh(xs[5] + ms[2]);
    auto m_new = f_m * m + i_m * g_m;

    auto mem = torch::cat({c_new, m_new}, 1);
    auto o = torch::sigmoid(xs[6] + hs[3] + conv_o->forward(mem));
    auto h_new = o * torch::tanh(conv_last->forward(mem));
    return {h_new, c_new, m_new};
}

// -- world model -----------------------------------------------------------------

WorldModelImpl::WorldModelImpl(WorldModelConfig config) : config_(std::move(config)) {
    config_.validate();
    reset();
}

namespace {

nn::Sequential make_frame_encoder(const WorldModelConfig& c) {
    const int mid = std::max(8, c.encoder_channels);
    return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(c.channels, mid, 3).stride(2).padding(1)), nn::ReLU(),
                          nn::Conv2d(nn::Conv2dOptions(mid, c.encoder_channels, 3).stride(2).padding(1)), nn::ReLU());
}

} // namespace

void WorldModelImpl::reset() {
    const auto& c = config_;
    frame_encoder = register_module("frame_encoder", make_frame_encoder(c));
    if (!c.share_encoder) posterior_encoder = register_module("posterior_encoder", make_frame_encoder(c));
    task_embedding = register_module("task_embedding", nn::Embedding(c.num_tasks, c.task_embed));
    posterior_lstm = register_module(
        "posterior_lstm", nn::LSTMCell(nn::LSTMCellOptions(c.encoder_channels + c.task_embed, c.summary_hidden)));
    posterior_head = register_module("posterior_head", nn::Linear(c.summary_hidden + c.task_embed, 2 * c.latent));
    prior_lstm = register_module(
        "prior_lstm", nn::LSTMCell(nn::LSTMCellOptions(c.encoder_channels + c.task_embed, c.summary_hidden)));
    prior_head = register_module("prior_head", nn::Linear(c.summary_hidden + c.task_embed, 2 * c.latent));
    if (c.action_dim > 0) action_encoder = register_module("action_encoder", nn::Linear(c.action_dim, c.action_embed));

    cells = register_module("cells", nn::ModuleList());
    const int in0 = c.encoder_channels + c.latent + c.task_embed + (c.action_dim > 0 ? c.action_embed : 0);
    for (int l = 0; l < c.layers; ++l) cells->push_back(SpatioTemporalCell(l == 0 ? in0 : c.hidden, c.hidden, c.kernel));

    const int mid = std::max(8, c.encoder_channels);
    frame_decoder = register_module(
        "frame_decoder",
        nn::Sequential(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c.hidden, mid, 4).stride(2).padding(1)),
                       nn::ReLU(),
                       nn::ConvTranspose2d(nn::ConvTranspose2dOptions(mid, c.channels, 4).stride(2).padding(1))));
}

RecurrentState WorldModelImpl::initial_state(int64_t batch, const torch::TensorOptions& options) const {
    const auto& c = config_;
    const int64_t s = c.feature_size();
    RecurrentState st;
    for (int l = 0; l < c.layers; ++l) {
        st.hidden.push_back(torch::zeros({batch, c.hidden, s, s}, options));
        st.cell.push_back(torch::zeros({batch, c.hidden, s, s}, options));
    }
    st.memory = torch::zeros({batch, c.hidden, s, s}, options);
    st.posterior = {torch::zeros({batch, c.summary_hidden}, options), torch::zeros({batch, c.summary_hidden}, options)};
    st.prior = st.posterior;
    return st;
}

void WorldModelImpl::check_labels(const torch::Tensor& task_ids) const {
    if (task_ids.dim() != 1) throw ShapeError("task ids must be a 1-D tensor");
    if (task_ids.numel() == 0) return;
    const auto lo = task_ids.min().item<int64_t>();
    const auto hi = task_ids.max().item<int64_t>();
    if (lo < 1 || hi > config_.num_tasks)
        throw TaskLabelError("task label out of range {1.." + std::to_string(config_.num_tasks) +
                             "}: got " + std::to_string(lo < 1 ? lo : hi));
}

torch::Tensor WorldModelImpl::embed(const torch::Tensor& task_ids) {
    check_labels(task_ids);
    return task_embedding->forward(task_ids.to(torch::kInt64) - 1);
}

torch::Tensor WorldModelImpl::summarise(nn::Sequential& encoder, const torch::Tensor& frame) {
    return encoder->forward(frame).mean({2, 3});
}

GaussianParams WorldModelImpl::head_params(nn::Linear& head, const torch::Tensor& h, const torch::Tensor& emb) {
    auto out = head->forward(torch::cat({h, emb}, 1)).chunk(2, 1);
    return {out[0], out[1].clamp(kLogVarMin, kLogVarMax)};
}

std::pair<GaussianParams, LstmState> WorldModelImpl::posterior_step(const LstmState& state, const torch::Tensor& frame,
                                                                    const torch::Tensor& task_ids) {
    auto emb = embed(task_ids);
    auto& enc = config_.share_encoder ? frame_encoder : posterior_encoder;
    auto feat = summarise(enc, frame);
    auto [h, c] = posterior_lstm->forward(torch::cat({feat, emb}, 1), std::make_tuple(state.h, state.c));
    return {head_params(posterior_head, h, emb), LstmState{h, c}};
}

std::pair<GaussianParams, LstmState> WorldModelImpl::prior_step(const LstmState& state,
                                                                const std::optional<torch::Tensor>& prev_frame,
                                                                const torch::Tensor& task_ids) {
    auto emb = embed(task_ids);
    LstmState next = state;
    if (prev_frame) {
        auto feat = summarise(frame_encoder, *prev_frame);
        auto [h, c] = prior_lstm->forward(torch::cat({feat, emb}, 1), std::make_tuple(state.h, state.c));
        next = {h, c};
    }
    return {head_params(prior_head, next.h, emb), next};
}

std::pair<torch::Tensor, RecurrentState> WorldModelImpl::predict_frame(const RecurrentState& state,
                                                                       const torch::Tensor& prev_frame,
                                                                       const std::optional<torch::Tensor>& prev_action,
                                                                       const torch::Tensor& z,
                                                                       const torch::Tensor& task_ids) {
    const auto& c = config_;
    if ((c.action_dim > 0) != prev_action.has_value())
        throw ConfigError(c.action_dim > 0 ? "action-conditioned model called without an action"
                                           : "action supplied to an action-free model");
    auto feat = frame_encoder->forward(prev_frame);
    const auto s = feat.size(2);
    auto spread = [&](const torch::Tensor& v) { return v.unsqueeze(-1).unsqueeze(-1).expand({-1, -1, s, s}); };

    std::vector<torch::Tensor> parts{feat, spread(z), spread(embed(task_ids))};
    if (prev_action) {
        if (prev_action->dim() != 2 || prev_action->size(1) != c.action_dim)
            throw ShapeError("action must be [B, " + std::to_string(c.action_dim) + "]");
        parts.push_back(spread(action_encoder->forward(*prev_action)));
    }
    auto input = torch::cat(parts, 1);

    RecurrentState next = state;
    auto memory = state.memory;
    for (int l = 0; l < c.layers; ++l) {
        auto out = cells->at<SpatioTemporalCellImpl>(static_cast<size_t>(l)).forward(
            input, state.hidden[static_cast<size_t>(l)], state.cell[static_cast<size_t>(l)], memory);
        next.hidden[static_cast<size_t>(l)] = out.h;
        next.cell[static_cast<size_t>(l)] = out.c;
        memory = out.m;
        input = out.h;
    }
    next.memory = memory;
    auto frame = torch::sigmoid(frame_decoder->forward(next.hidden.back()));
    return {frame, next};
}

// -- free functions ----------------------------------------------------------------

std::pair<GaussianParams, LstmState> posterior_params(WorldModel& model, const torch::Tensor& frames,
                                                      const torch::Tensor& task_ids,
                                                      const std::optional<LstmState>& state) {
    if (frames.dim() != 5 || frames.size(1) < 1) throw ShapeError("posterior_params needs frames [B, t>=1, C, H, W]");
    model->check_labels(task_ids);
    LstmState st = state ? *state : model->initial_state(frames.size(0), frames.options()).posterior;
    GaussianParams params;
    for (int64_t t = 0; t < frames.size(1); ++t) std::tie(params, st) = model->posterior_step(st, frames.select(1, t), task_ids);
    return {params, st};
}

std::pair<GaussianParams, LstmState> prior_params(WorldModel& model, const torch::Tensor& frames,
                                                  const torch::Tensor& task_ids, const std::optional<LstmState>& state) {
    if (frames.dim() != 5) throw ShapeError("prior_params needs frames [B, t-1, C, H, W]");
    model->check_labels(task_ids);
    LstmState st = state ? *state : model->initial_state(frames.size(0), frames.options()).prior;
    if (frames.size(1) == 0) return model->prior_step(st, std::nullopt, task_ids);
    GaussianParams params;
    for (int64_t t = 0; t < frames.size(1); ++t) std::tie(params, st) = model->prior_step(st, frames.select(1, t), task_ids);
    return {params, st};
}

RolloutResult rollout(WorldModel& model, const torch::Tensor& frames, const std::optional<torch::Tensor>& actions,
                      const torch::Tensor& task_ids, const RolloutOptions& options, LatentNoise& noise) {
    const int T = options.context_len;
    const int H = options.horizon;
    if (H < 1) throw ConfigError("rollout: horizon must be >= 1");
    if (T < 1) throw ConfigError("rollout: context must hold at least one frame");
    if (frames.dim() != 5) throw ShapeError("rollout: frames must be [B, L, C, H, W]");
    const bool train = options.mode == RolloutMode::TrainPosterior;
    if (frames.size(1) < (train ? T + H : T))
        throw ShapeError(train ? "rollout: train_posterior needs ground truth through T+H" : "rollout: need T context frames");
    model->check_labels(task_ids);
    const auto& cfg = model->config();
    if ((cfg.action_dim > 0) != actions.has_value())
        throw ConfigError(cfg.action_dim > 0 ? "rollout: action-conditioned model needs actions"
                                             : "rollout: action supplied to an action-free model");
    if (actions && actions->size(1) < T + H - 1) throw ShapeError("rollout: actions must cover a_1..a_{T+H-1}");

    // The prior path never sees frames past T.
    const torch::Tensor observed = train ? frames : frames.narrow(1, 0, T);
    const int64_t B = frames.size(0);
    auto state = model->initial_state(B, frames.options());

    std::vector<torch::Tensor> preds, kls;
    preds.reserve(static_cast<size_t>(T + H - 1));
    torch::Tensor last_pred;
    for (int t = 2; t <= T + H; ++t) {
        // 0-based index of X_{t-1} is t-2.
        const bool teacher = (t - 1 <= T) || (train && options.full_teacher_forcing);
        auto x_in = teacher ? observed.select(1, t - 2) : last_pred;
        auto prior_input = train ? observed.select(1, t - 2) : x_in;
        auto [prior, prior_state] = model->prior_step(state.prior, prior_input, task_ids);
        state.prior = prior_state;

        torch::Tensor z;
        if (train) {
            auto [post, post_state] = model->posterior_step(state.posterior, observed.select(1, t - 1), task_ids);
            state.posterior = post_state;
            z = reparam_sample(post, noise.next(B, cfg.latent, frames.options()));
            kls.push_back(gaussian_kl(post, prior));
        } else {
            z = reparam_sample(prior, noise.next(B, cfg.latent, frames.options()));
        }
        std::optional<torch::Tensor> a;
        if (actions) a = actions->select(1, t - 2);
        auto [pred, next] = model->predict_frame(state, x_in, a, z, task_ids);
        next.posterior = state.posterior;
        next.prior = state.prior;
        state = std::move(next);
        last_pred = pred;
        preds.push_back(pred);
    }
    RolloutResult out;
    out.predictions = torch::stack(preds, 1);
    if (train) out.kl = torch::stack(kls, 1);
    return out;
}

ElboResult elbo_loss(WorldModel& model, const torch::Tensor& frames, const std::optional<torch::Tensor>& actions,
                     const torch::Tensor& task_ids, const ElboOptions& options, LatentNoise& noise) {
    const int T = options.context_len;
    const int H = static_cast<int>(frames.size(1)) - T;
    RolloutOptions ro{T, H, RolloutMode::TrainPosterior, options.full_teacher_forcing};
    auto out = rollout(model, frames, actions, task_ids, ro, noise);

    auto targets = frames.narrow(1, 1, T + H - 1);
    auto recon_steps = (out.predictions - targets).pow(2).mean({2, 3, 4});
    auto recon = recon_steps.sum(1);
    auto kl = out.kl.sum(1);
    auto per_sequence = recon + options.alpha * kl;

    ElboResult r;
    r.recon = recon.mean().item<double>();
    r.kl = kl.mean().item<double>();
    if (!std::isfinite(r.recon)) throw NumericalError("elbo_loss: non-finite reconstruction term");
    if (!std::isfinite(r.kl)) throw NumericalError("elbo_loss: non-finite KL term");
    r.per_sequence = per_sequence;
    r.loss = per_sequence.mean();
    r.recon_steps = recon_steps;
    r.kl_steps = out.kl;
    return r;
}

WorldModel clone_model(const WorldModel& model) {
    return WorldModel(std::dynamic_pointer_cast<WorldModelImpl>(model->clone()));
}

} // namespace cpl
