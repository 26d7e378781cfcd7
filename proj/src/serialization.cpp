#include "cpl/serialization.hpp"

#include "cpl/errors.hpp"

namespace cpl {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

namespace {

template <typename T>
void get_opt(const json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

} // namespace

void to_json(json& j, const WorldModelConfig& c) {
    j = json{{"channels", c.channels},       {"resolution", c.resolution},
             {"num_tasks", c.num_tasks},     {"action_dim", c.action_dim},
             {"layers", c.layers},           {"hidden", c.hidden},
             {"latent", c.latent},           {"task_embed", c.task_embed},
             {"encoder_channels", c.encoder_channels}, {"summary_hidden", c.summary_hidden},
             {"action_embed", c.action_embed}, {"kernel", c.kernel},
             {"share_encoder", c.share_encoder}};
}

void from_json(const json& j, WorldModelConfig& c) {
    reject_unknown_keys(j,
                        {"channels", "resolution", "num_tasks", "action_dim", "layers", "hidden", "latent",
                         "task_embed", "encoder_channels", "summary_hidden", "action_embed", "kernel",
                         "share_encoder"},
                        "model");
    get_opt(j, "channels", c.channels);
    get_opt(j, "resolution", c.resolution);
    get_opt(j, "num_tasks", c.num_tasks);
    get_opt(j, "action_dim", c.action_dim);
    get_opt(j, "layers", c.layers);
    get_opt(j, "hidden", c.hidden);
    get_opt(j, "latent", c.latent);
    get_opt(j, "task_embed", c.task_embed);
    get_opt(j, "encoder_channels", c.encoder_channels);
    get_opt(j, "summary_hidden", c.summary_hidden);
    get_opt(j, "action_embed", c.action_embed);
    get_opt(j, "kernel", c.kernel);
    get_opt(j, "share_encoder", c.share_encoder);
}

void to_json(json& j, const GeneratorConfig& c) {
    j = json{{"channels", c.channels},   {"resolution", c.resolution}, {"num_tasks", c.num_tasks},
             {"action_dim", c.action_dim}, {"latent", c.latent},       {"task_embed", c.task_embed},
             {"action_embed", c.action_embed}, {"width", c.width}};
}

void from_json(const json& j, GeneratorConfig& c) {
    reject_unknown_keys(j, {"channels", "resolution", "num_tasks", "action_dim", "latent", "task_embed",
                            "action_embed", "width"},
                        "generator");
    get_opt(j, "channels", c.channels);
    get_opt(j, "resolution", c.resolution);
    get_opt(j, "num_tasks", c.num_tasks);
    get_opt(j, "action_dim", c.action_dim);
    get_opt(j, "latent", c.latent);
    get_opt(j, "task_embed", c.task_embed);
    get_opt(j, "action_embed", c.action_embed);
    get_opt(j, "width", c.width);
}

void to_json(json& j, const TrainSchedule& c) {
    j = json{{"iterations", c.iterations},
             {"iterations_g", c.iterations_g},
             {"batch_size", c.batch_size},
             {"learning_rate", c.learning_rate},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"alpha", c.alpha},
             {"beta", c.beta},
             {"replay_ratio", c.replay_ratio},
             {"action_fraction", c.action_fraction},
             {"regenerate_replay", c.regenerate_replay},
             {"full_teacher_forcing", c.full_teacher_forcing},
             {"context_len", c.context_len}};
}

void from_json(const json& j, TrainSchedule& c) {
    reject_unknown_keys(j,
                        {"iterations", "iterations_g", "batch_size", "learning_rate", "beta1", "beta2", "alpha",
                         "beta", "replay_ratio", "action_fraction", "regenerate_replay", "full_teacher_forcing",
                         "context_len"},
                        "schedule");
    get_opt(j, "iterations", c.iterations);
    get_opt(j, "iterations_g", c.iterations_g);
    get_opt(j, "batch_size", c.batch_size);
    get_opt(j, "learning_rate", c.learning_rate);
    get_opt(j, "beta1", c.beta1);
    get_opt(j, "beta2", c.beta2);
    get_opt(j, "alpha", c.alpha);
    get_opt(j, "beta", c.beta);
    get_opt(j, "replay_ratio", c.replay_ratio);
    get_opt(j, "action_fraction", c.action_fraction);
    get_opt(j, "regenerate_replay", c.regenerate_replay);
    get_opt(j, "full_teacher_forcing", c.full_teacher_forcing);
    get_opt(j, "context_len", c.context_len);
}

void to_json(json& j, const SyntheticTaskConfig& c) {
    j = json{{"task_id", c.task_id},
             {"appearance", to_string(c.appearance)},
             {"dynamics", to_string(c.dynamics)},
             {"speed", c.speed},
             {"radius", c.radius},
             {"gain", c.gain},
             {"action_dim", c.action_dim},
             {"resolution", c.resolution},
             {"channels", c.channels},
             {"object_size", c.object_size},
             {"intensity", c.intensity},
             {"context_len", c.context_len},
             {"horizon", c.horizon},
             {"n_train", c.n_train},
             {"n_test", c.n_test}};
}

void from_json(const json& j, SyntheticTaskConfig& c) {
    reject_unknown_keys(j,
                        {"task_id", "appearance", "dynamics", "speed", "radius", "gain", "action_dim", "resolution",
                         "channels", "object_size", "intensity", "context_len", "horizon", "n_train", "n_test"},
                        "task");
    get_opt(j, "task_id", c.task_id);
    if (j.contains("appearance")) c.appearance = appearance_from_string(j.at("appearance").get<std::string>());
    if (j.contains("dynamics")) c.dynamics = dynamics_from_string(j.at("dynamics").get<std::string>());
    get_opt(j, "speed", c.speed);
    get_opt(j, "radius", c.radius);
    get_opt(j, "gain", c.gain);
    get_opt(j, "action_dim", c.action_dim);
    get_opt(j, "resolution", c.resolution);
    get_opt(j, "channels", c.channels);
    get_opt(j, "object_size", c.object_size);
    get_opt(j, "intensity", c.intensity);
    get_opt(j, "context_len", c.context_len);
    get_opt(j, "horizon", c.horizon);
    get_opt(j, "n_train", c.n_train);
    get_opt(j, "n_test", c.n_test);
}

void to_json(json& j, const AdaptOptions& c) {
    j = json{{"steps", c.steps}, {"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2},
             {"alpha", c.alpha}};
}

void from_json(const json& j, AdaptOptions& c) {
    reject_unknown_keys(j, {"steps", "learning_rate", "beta1", "beta2", "alpha"}, "adapt");
    get_opt(j, "steps", c.steps);
    get_opt(j, "learning_rate", c.learning_rate);
    get_opt(j, "beta1", c.beta1);
    get_opt(j, "beta2", c.beta2);
    get_opt(j, "alpha", c.alpha);
}

} // namespace cpl
