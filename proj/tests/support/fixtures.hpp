#pragma once

#include "cpl/data.hpp"
#include "cpl/frame_generator.hpp"
#include "cpl/world_model.hpp"

#include <torch/torch.h>

namespace fixtures {

inline cpl::WorldModelConfig tiny_model(int num_tasks = 3, int action_dim = 0, int resolution = 8) {
    cpl::WorldModelConfig c;
    c.resolution = resolution;
    c.num_tasks = num_tasks;
    c.action_dim = action_dim;
    c.layers = 1;
    c.hidden = 8;
    c.latent = 4;
    c.task_embed = 4;
    c.encoder_channels = 4;
    c.summary_hidden = 8;
    c.action_embed = 4;
    return c;
}

inline cpl::GeneratorConfig tiny_generator(int num_tasks = 3, int action_dim = 0, int resolution = 8) {
    cpl::GeneratorConfig g;
    g.resolution = resolution;
    g.num_tasks = num_tasks;
    g.action_dim = action_dim;
    g.latent = 4;
    g.task_embed = 4;
    g.action_embed = 4;
    g.width = 4;
    return g;
}

inline torch::Tensor random_frames(int64_t batch, int64_t length, int resolution, uint64_t seed, int channels = 1) {
    auto gen = cpl::make_generator(seed);
    return torch::rand({batch, length, channels, resolution, resolution}, gen, torch::kFloat);
}

inline torch::Tensor labels(std::initializer_list<int64_t> ids) { return torch::tensor(std::vector<int64_t>(ids)); }

inline cpl::DatasetSplit random_split(int n, int length, int resolution, int task, int action_dim, uint64_t seed) {
    cpl::DatasetSplit s;
    s.task_id = task;
    auto gen = cpl::make_generator(seed);
    for (int i = 0; i < n; ++i) {
        cpl::VideoSequence v;
        v.frames = torch::rand({length, 1, resolution, resolution}, gen, torch::kFloat);
        if (action_dim > 0) v.actions = torch::randn({length - 1, action_dim}, gen, torch::kFloat);
        v.task_id = task;
        s.sequences.push_back(std::move(v));
    }
    return s;
}

} // namespace fixtures
