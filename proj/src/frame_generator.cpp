#include "cpl/frame_generator.hpp"

#include "cpl/errors.hpp"

#include <cmath>
#include <set>

namespace nn = torch::nn;

namespace cpl {

void GeneratorConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("frame generator: " + what); };
    if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
    if (resolution < 4 || resolution % 4 != 0) fail("resolution must be a positive multiple of 4");
    if (num_tasks < 1) fail("num_tasks must be >= 1");
    if (action_dim < 0) fail("action_dim must be >= 0");
    if (latent < 1 || task_embed < 1 || width < 1) fail("layer widths must be positive");
}

FrameGeneratorImpl::FrameGeneratorImpl(GeneratorConfig config) : config_(std::move(config)) {
    config_.validate();
    reset();
}

void FrameGeneratorImpl::reset() {
    const auto& c = config_;
    const int s = c.resolution / 4;
    const int mid = std::max(8, c.width / 2);
    encoder = register_module(
        "encoder", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(c.channels, mid, 3).stride(2).padding(1)), nn::ReLU(),
                                  nn::Conv2d(nn::Conv2dOptions(mid, c.width, 3).stride(2).padding(1)), nn::ReLU(),
                                  nn::Flatten()));
    task_embedding = register_module("task_embedding", nn::Embedding(c.num_tasks, c.task_embed));
    posterior_head = register_module("posterior_head", nn::Linear(c.width * s * s + c.task_embed, 2 * c.latent));
    if (c.action_dim > 0) action_encoder = register_module("action_encoder", nn::Linear(c.action_dim, c.action_embed));
    const int dec_in = c.latent + c.task_embed + (c.action_dim > 0 ? c.action_embed : 0);
    decoder_input = register_module("decoder_input", nn::Linear(dec_in, c.width * s * s));
    decoder = register_module(
        "decoder",
        nn::Sequential(nn::ReLU(), nn::Unflatten(nn::UnflattenOptions(1, {c.width, s, s})),
                       nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c.width, mid, 4).stride(2).padding(1)),
                       nn::ReLU(),
                       nn::ConvTranspose2d(nn::ConvTranspose2dOptions(mid, c.channels, 4).stride(2).padding(1))));
    prior_mean = register_parameter("prior_mean", torch::zeros({c.num_tasks, c.latent}));
    prior_log_var = register_parameter("prior_log_var", torch::zeros({c.num_tasks, c.latent}));
}

void FrameGeneratorImpl::check_labels(const torch::Tensor& task_ids) const {
    if (task_ids.dim() != 1) throw ShapeError("task ids must be a 1-D tensor");
    if (task_ids.numel() == 0) return;
    const auto lo = task_ids.min().item<int64_t>();
    const auto hi = task_ids.max().item<int64_t>();
    if (lo < 1 || hi > config_.num_tasks)
        throw TaskLabelError("task label out of range {1.." + std::to_string(config_.num_tasks) +
                             "}: got " + std::to_string(lo < 1 ? lo : hi));
}

GaussianParams FrameGeneratorImpl::posterior(const torch::Tensor& frames, const torch::Tensor& task_ids) {
    check_labels(task_ids);
    if (frames.dim() != 4 || frames.size(0) != task_ids.size(0))
        throw ConfigError("generator posterior: frames and labels disagree in count");
    auto emb = task_embedding->forward(task_ids.to(torch::kInt64) - 1);
    auto out = posterior_head->forward(torch::cat({encoder->forward(frames), emb}, 1)).chunk(2, 1);
    return {out[0], out[1].clamp(kLogVarMin, kLogVarMax)};
}

GaussianParams FrameGeneratorImpl::prior(const torch::Tensor& task_ids) {
    check_labels(task_ids);
    auto idx = task_ids.to(torch::kInt64) - 1;
    return {prior_mean.index_select(0, idx), prior_log_var.index_select(0, idx).clamp(kLogVarMin, kLogVarMax)};
}

torch::Tensor FrameGeneratorImpl::decode(const torch::Tensor& e, const torch::Tensor& task_ids,
                                         const std::optional<torch::Tensor>& first_action) {
    check_labels(task_ids);
    if ((config_.action_dim > 0) != first_action.has_value())
        throw ConfigError(config_.action_dim > 0 ? "action-conditioned generator called without a_1"
                                                 : "a_1 supplied to an action-free generator");
    std::vector<torch::Tensor> parts{e, task_embedding->forward(task_ids.to(torch::kInt64) - 1)};
    if (first_action) parts.push_back(action_encoder->forward(*first_action));
    return torch::sigmoid(decoder->forward(decoder_input->forward(torch::cat(parts, 1))));
}

torch::Tensor generate_initial_frame(FrameGenerator& generator, const std::optional<torch::Tensor>& first_action,
                                     const torch::Tensor& task_ids, torch::Generator& rng) {
    auto prior = generator->prior(task_ids);
    auto e = reparam_sample(prior, rng);
    return generator->decode(e, task_ids, first_action);
}

namespace {

struct BlockTerms {
    torch::Tensor loss;
    double recon;
    double kl;
};

BlockTerms block_loss(FrameGenerator& g, const FirstFrameBlock& block, double beta, LatentNoise& noise) {
    auto q = g->posterior(block.frames, block.task_ids);
    auto p = g->prior(block.task_ids);
    auto e = reparam_sample(q, noise.next(block.frames.size(0), g->config().latent, block.frames.options()));
    auto recon = (g->decode(e, block.task_ids, block.first_actions) - block.frames).pow(2).mean({1, 2, 3});
    auto kl = gaussian_kl(q, p);
    return {(recon + beta * kl).mean(), recon.mean().item<double>(), kl.mean().item<double>()};
}

int64_t block_label(const FirstFrameBlock& block, const char* which) {
    if (block.frames.dim() != 4 || block.task_ids.dim() != 1 || block.frames.size(0) != block.task_ids.size(0))
        throw ConfigError(std::string("generator_loss: ") + which + " block has mismatched frames and labels");
    if (block.frames.size(0) == 0) throw ConfigError(std::string("generator_loss: empty ") + which + " block");
    const auto lo = block.task_ids.min().item<int64_t>();
    if (lo != block.task_ids.max().item<int64_t>())
        throw ConfigError(std::string("generator_loss: ") + which + " block mixes task labels");
    if (block.first_actions && block.first_actions->size(0) != block.frames.size(0))
        throw ConfigError(std::string("generator_loss: ") + which + " block has mismatched actions");
    return lo;
}

} // namespace

GeneratorLossResult generator_loss(FrameGenerator& generator, const FirstFrameBlock& current,
                                   std::span<const FirstFrameBlock> replayed, double beta, LatentNoise& noise) {
    const auto k = block_label(current, "current-task");
    if ((k == 1) != replayed.empty())
        throw ConfigError("generator_loss: replay blocks must be present exactly when k > 1");
    std::set<int64_t> seen;
    for (const auto& block : replayed) {
        const auto kt = block_label(block, "replay");
        if (kt >= k) throw ConfigError("generator_loss: replay block label must precede the current task");
        if (!seen.insert(kt).second) throw ConfigError("generator_loss: duplicate replay block label");
    }

    GeneratorLossResult r;
    auto terms = block_loss(generator, current, beta, noise);
    r.loss = terms.loss;
    r.recon = terms.recon;
    r.kl = terms.kl;
    r.blocks = 1;
    for (const auto& block : replayed) {
        auto t = block_loss(generator, block, beta, noise);
        r.loss = r.loss + t.loss;
        r.recon += t.recon;
        r.kl += t.kl;
        ++r.blocks;
    }
    if (!std::isfinite(r.recon)) throw NumericalError("generator_loss: non-finite reconstruction term");
    if (!std::isfinite(r.kl)) throw NumericalError("generator_loss: non-finite KL term");
    return r;
}

FrameGenerator clone_generator(const FrameGenerator& generator) {
    return FrameGenerator(std::dynamic_pointer_cast<FrameGeneratorImpl>(generator->clone()));
}

} // namespace cpl
