#include "cpl/replay.hpp"

#include "cpl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cpl {

void TrainSchedule::validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("Adam betas must lie in [0, 1)");
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("KL weights must be >= 0");
    if (!(replay_ratio > 0.0 && replay_ratio <= 1.0)) throw ConfigError("replay_ratio must lie in (0, 1]");
    if (action_fraction <= 0.0 || action_fraction > 1.0) throw ConfigError("action_fraction must lie in (0, 1]");
    if (context_len < 2) throw ConfigError("context_len must be >= 2");
}

TrainSchedule TrainSchedule::desk_scale() {
    TrainSchedule s;
    s.iterations = 2000;
    s.batch_size = 16;
    s.learning_rate = 5e-4;
    return s;
}

int fraction_count(double fraction, size_t n) {
    if (n == 0 || fraction <= 0.0) return 0;
    const double exact = fraction * static_cast<double>(n);
    const int c = static_cast<int>(std::ceil(exact - 1e-9));
    return std::clamp(c, 1, static_cast<int>(n));
}

std::vector<int> split_replay_volume(int total, int tasks) {
    if (tasks <= 0) return {};
    std::vector<int> out(static_cast<size_t>(tasks), total / tasks);
    for (int i = 0; i < total % tasks; ++i) ++out[static_cast<size_t>(i)];
    return out;
}

size_t ActionBuffer::count(int task) const {
    auto it = tasks.find(task);
    return it == tasks.end() ? 0 : it->second.lengths.size();
}

size_t ActionBuffer::total_sequences() const {
    size_t n = 0;
    for (const auto& [_, r] : tasks) n += r.lengths.size();
    return n;
}

size_t ActionBuffer::payload_bytes() const {
    size_t n = 0;
    for (const auto& [_, r] : tasks)
        for (const auto& a : r.actions) n += static_cast<size_t>(a.numel()) * a.element_size();
    return n;
}

ActionBuffer store_actions(const ActionBuffer& buffer, int task, const DatasetSplit& split, double fraction,
                           std::mt19937_64& rng) {
    if (split.empty()) throw std::invalid_argument("store_actions: empty split");
    ActionBuffer out = buffer;
    out.fraction = fraction;
    const int keep = fraction_count(fraction, split.size());
    std::vector<size_t> idx(split.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<size_t>(keep));
    std::sort(idx.begin(), idx.end());

    RetainedActions r;
    for (size_t i : idx) {
        const auto& s = split.sequences[i];
        r.lengths.push_back(static_cast<int>(s.length()));
        if (s.actions) r.actions.push_back(s.actions->clone());
    }
    out.tasks[task] = std::move(r);
    return out;
}

ReplayDataset synthesize_replay(WorldModel& model_snapshot, FrameGenerator& generator_snapshot,
                                const ActionBuffer& buffer, int task, int count, uint64_t seed,
                                std::optional<int> label, int snapshot_version) {
    ReplayDataset out;
    out.task_id = task;
    out.snapshot_version = snapshot_version;
    if (count <= 0) return out;
    auto it = buffer.tasks.find(task);
    if (it == buffer.tasks.end() || it->second.lengths.empty())
        throw ConfigError("synthesize_replay: no retained actions for task " + std::to_string(task));
    const auto& retained = it->second;
    const bool with_actions = !retained.actions.empty();
    if (with_actions != (model_snapshot->config().action_dim > 0))
        throw ConfigError("synthesize_replay: action buffer and model disagree on action conditioning");
    const int use_label = label.value_or(task);

    torch::NoGradGuard no_grad;
    const bool m_training = model_snapshot->is_training();
    const bool g_training = generator_snapshot->is_training();
    model_snapshot->eval();
    generator_snapshot->eval();

    std::mt19937_64 pick_rng(derive_seed(seed, 0x5e1));
    std::uniform_int_distribution<size_t> pick(0, retained.lengths.size() - 1);
    auto gen = make_generator(derive_seed(seed, 0x5e2));

    // Draws sharing a length are rolled out together.
    std::map<int, std::vector<size_t>> by_length;
    std::vector<size_t> chosen(static_cast<size_t>(count));
    for (auto& c : chosen) {
        c = pick(pick_rng);
        by_length[retained.lengths[c]].push_back(c);
    }
    constexpr size_t chunk = 64;
    for (const auto& [len, picks] : by_length) {
        for (size_t start = 0; start < picks.size(); start += chunk) {
            const size_t n = std::min(chunk, picks.size() - start);
            std::optional<torch::Tensor> actions;
            if (with_actions) {
                std::vector<torch::Tensor> a;
                for (size_t i = 0; i < n; ++i) a.push_back(retained.actions[picks[start + i]]);
                actions = torch::stack(a);
            }
            auto labels = torch::full({static_cast<int64_t>(n)}, use_label, torch::kInt64);
            std::optional<torch::Tensor> first_action;
            if (actions) first_action = actions->select(1, 0);
            auto x1 = generate_initial_frame(generator_snapshot, first_action, labels, gen).unsqueeze(1);
            torch::Tensor frames = x1;
            if (len > 1) {
                LatentNoise noise(gen);
                RolloutOptions ro{1, len - 1, RolloutMode::TestPrior, false};
                auto r = rollout(model_snapshot, x1, actions, labels, ro, noise);
                frames = torch::cat({x1, r.predictions}, 1);
            }
            frames = frames.detach().clamp(0.0, 1.0);
            for (size_t i = 0; i < n; ++i) {
                VideoSequence s;
                s.frames = frames[static_cast<int64_t>(i)].clone();
                if (actions) s.actions = (*actions)[static_cast<int64_t>(i)].clone();
                s.task_id = task;
                out.sequences.push_back(std::move(s));
            }
        }
    }
    model_snapshot->train(m_training);
    generator_snapshot->train(g_training);
    return out;
}

namespace {

Batch labelled_batch(std::vector<VideoSequence> seqs, const TrainerOptions& options) {
    for (auto& s : seqs) s.task_id = options.label_for(s.task_id);
    return stack_sequences(seqs);
}

torch::optim::Adam make_adam(std::vector<torch::Tensor> params, const TrainSchedule& schedule) {
    return torch::optim::Adam(std::move(params), torch::optim::AdamOptions(schedule.learning_rate)
                                                      .betas({schedule.beta1, schedule.beta2}));
}

FirstFrameBlock first_frames(std::span<const VideoSequence> seqs, int label, int count, std::mt19937_64& rng) {
    std::uniform_int_distribution<size_t> pick(0, seqs.size() - 1);
    std::vector<torch::Tensor> frames, actions;
    for (int i = 0; i < count; ++i) {
        const auto& s = seqs[pick(rng)];
        frames.push_back(s.frames[0]);
        if (s.actions) actions.push_back((*s.actions)[0]);
    }
    FirstFrameBlock b;
    b.frames = torch::stack(frames);
    b.task_ids = torch::full({count}, label, torch::kInt64);
    if (!actions.empty()) b.first_actions = torch::stack(actions);
    return b;
}

std::vector<TrainLogEntry> train_generator(FrameGenerator& generator, const DatasetSplit& split,
                                           const std::vector<ReplayDataset>& replays, const TrainSchedule& schedule,
                                           const TrainerOptions& options, uint64_t seed) {
    std::vector<TrainLogEntry> log;
    const int iters = schedule.generator_iterations();
    if (iters <= 0) return log;
    generator->train();
    auto opt = make_adam(generator->parameters(), schedule);
    std::mt19937_64 rng(derive_seed(seed, 0x6e1));
    const int k = options.label_for(split.task_id);
    for (int it = 0; it < iters; ++it) {
        auto current = first_frames(split.sequences, k, schedule.batch_size, rng);
        std::vector<FirstFrameBlock> blocks;
        for (const auto& r : replays) {
            if (r.sequences.empty()) continue;
            const double share = static_cast<double>(schedule.batch_size) * static_cast<double>(r.sequences.size()) /
                                 static_cast<double>(split.size());
            const int n = std::max(1, static_cast<int>(std::lround(share)));
            blocks.push_back(first_frames(r.sequences, options.label_for(r.task_id), n, rng));
        }
        LatentNoise noise(make_generator(derive_seed(seed, 0x6e2, static_cast<uint64_t>(it))));
        opt.zero_grad();
        auto res = generator_loss(generator, current, blocks, schedule.beta, noise);
        if (!std::isfinite(res.loss.item<double>())) throw NumericalError("generator loss is not finite");
        res.loss.backward();
        opt.step();
        log.push_back({it + 1, split.task_id, res.loss.item<double>(), res.recon, res.kl});
    }
    return log;
}

} // namespace

std::vector<TrainLogEntry> train_world_model(WorldModel& model, std::span<const VideoSequence> pool,
                                             const TrainSchedule& schedule, const TrainerOptions& options,
                                             int iterations, int log_task, uint64_t seed,
                                             const std::function<VideoSequence(int, uint64_t)>& regenerate) {
    std::vector<TrainLogEntry> log;
    if (iterations <= 0) return log;
    if (pool.empty()) throw std::invalid_argument("train_world_model: empty pool");
    model->train();
    auto opt = make_adam(model->parameters(), schedule);
    std::mt19937_64 rng(derive_seed(seed, 0x3d1));
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    ElboOptions eo{schedule.context_len, schedule.alpha, schedule.full_teacher_forcing};
    for (int it = 0; it < iterations; ++it) {
        std::vector<VideoSequence> seqs;
        seqs.reserve(static_cast<size_t>(schedule.batch_size));
        for (int b = 0; b < schedule.batch_size; ++b) {
            const auto& s = pool[pick(rng)];
            // Replayed entries carry a task id other than the one being learned.
            if (regenerate && s.task_id != log_task)
                seqs.push_back(regenerate(s.task_id, derive_seed(seed, 0x3d3, static_cast<uint64_t>(it) * 4096 + b)));
            else
                seqs.push_back(s);
        }
        auto batch = labelled_batch(std::move(seqs), options);
        LatentNoise noise(make_generator(derive_seed(seed, 0x3d2, static_cast<uint64_t>(it))));
        opt.zero_grad();
        auto r = elbo_loss(model, batch.frames, batch.actions, batch.task_ids, eo, noise);
        r.loss.backward();
        opt.step();
        log.push_back({it + 1, log_task, r.loss.item<double>(), r.recon, r.kl});
    }
    return log;
}

TrainLogs train_first_task(WorldModel& model, FrameGenerator& generator, const DatasetSplit& split,
                           const TrainSchedule& schedule, const TrainerOptions& options, uint64_t seed) {
    schedule.validate();
    if (split.empty()) throw std::invalid_argument("train_first_task: empty split");
    TrainLogs logs;
    logs.world_model = train_world_model(model, split.sequences, schedule, options, schedule.iterations,
                                         split.task_id, derive_seed(seed, 1));
    if (options.train_generator)
        logs.generator = train_generator(generator, split, {}, schedule, options, derive_seed(seed, 2));
    return logs;
}

TaskTrainReport train_task(WorldModel& model, FrameGenerator& generator, const DatasetSplit& split,
                           const ActionBuffer& buffer, const TrainSchedule& schedule, const TrainerOptions& options,
                           uint64_t seed) {
    schedule.validate();
    if (split.empty()) throw std::invalid_argument("train_task: empty split");
    const int k = split.task_id;
    TaskTrainReport report;

    std::vector<int> previous;
    if (options.replay)
        for (const auto& [task, r] : buffer.tasks)
            if (task < k && !r.lengths.empty()) previous.push_back(task);

    // Frozen copies; replay never reads the models being trained.
    WorldModel m_snap{nullptr};
    FrameGenerator g_snap{nullptr};
    if (!previous.empty()) {
        m_snap = clone_model(model);
        g_snap = clone_generator(generator);
        const int total = fraction_count(schedule.replay_ratio, split.size());
        auto counts = split_replay_volume(total, static_cast<int>(previous.size()));
        for (size_t i = 0; i < previous.size(); ++i) {
            const int task = previous[i];
            report.replay_counts[task] = counts[i];
            report.replays.push_back(synthesize_replay(m_snap, g_snap, buffer, task, counts[i],
                                                       derive_seed(seed, 10, static_cast<uint64_t>(task)),
                                                       options.label_for(task), k - 1));
        }
    }

    std::vector<VideoSequence> pool = split.sequences;
    for (auto& s : pool) s.task_id = k;
    for (const auto& r : report.replays) pool.insert(pool.end(), r.sequences.begin(), r.sequences.end());

    std::function<VideoSequence(int, uint64_t)> regen;
    if (schedule.regenerate_replay && m_snap) {
        regen = [&](int task, uint64_t s) {
            auto d = synthesize_replay(m_snap, g_snap, buffer, task, 1, s, options.label_for(task), k - 1);
            return std::move(d.sequences.front());
        };
    }
    report.logs.world_model =
        train_world_model(model, pool, schedule, options, schedule.iterations, k, derive_seed(seed, 1), regen);
    if (options.train_generator)
        report.logs.generator = train_generator(generator, split, report.replays, schedule, options, derive_seed(seed, 2));
    return report;
}

std::string to_string(RunMode m) {
    switch (m) {
    case RunMode::CplFull: return "cpl_full";
    case RunMode::SequentialBase: return "sequential_base";
    case RunMode::Joint: return "joint";
    }
    return "?";
}

RunMode run_mode_from_string(const std::string& s) {
    if (s == "cpl_full") return RunMode::CplFull;
    if (s == "sequential_base") return RunMode::SequentialBase;
    if (s == "joint") return RunMode::Joint;
    throw ConfigError("unknown mode '" + s + "' (expected cpl_full, sequential_base or joint)");
}

TrainerOptions RunOptions::trainer() const {
    TrainerOptions t;
    t.conditioned = mode == RunMode::CplFull;
    t.replay = replay_enabled();
    t.train_generator = t.replay;
    return t;
}

RehearsalAudit audit_rehearsal(const RunState& state) {
    RehearsalAudit a;
    a.action_sequences = state.buffer.total_sequences();
    a.action_bytes = state.buffer.payload_bytes();
    // RunState has no frame storage; the fields exist so the audit is explicit.
    return a;
}

RunState initial_run_state(const WorldModelConfig& model_config, const GeneratorConfig& generator_config,
                           int num_tasks, const RunOptions& options) {
    auto mc = model_config;
    auto gc = generator_config;
    mc.num_tasks = options.model_tasks(num_tasks);
    gc.num_tasks = mc.num_tasks;
    torch::manual_seed(derive_seed(options.seed, 0x1a17));
    RunState st;
    st.model = WorldModel(mc);
    st.generator = FrameGenerator(gc);
    st.buffer.fraction = 0.0;
    st.matrix.num_tasks = num_tasks;
    return st;
}

std::vector<EvalEntry> evaluate_all(WorldModel& model, const std::vector<DatasetSplit>& test, const RunOptions& options,
                                    uint64_t seed) {
    const auto trainer = options.trainer();
    std::vector<EvalEntry> row;
    if (test.empty()) return row;
    for (size_t i = 0; i < test.size(); ++i) {
        const int task = static_cast<int>(i) + 1;
        auto score = evaluate_task(model, test[i], trainer.label_for(task), options.eval,
                                   derive_seed(seed, static_cast<uint64_t>(task)));
        row.push_back(score.entry());
    }
    return row;
}

RunState run_sequence(const std::vector<DatasetSplit>& train, const std::vector<DatasetSplit>& test,
                      const WorldModelConfig& model_config, const GeneratorConfig& generator_config,
                      const TrainSchedule& schedule, const RunOptions& options, std::optional<RunState> resume,
                      const PeriodCallback& on_period_end, const PeriodCallback& on_divergence) {
    schedule.validate();
    const int K = static_cast<int>(train.size());
    if (K < 1) throw ConfigError("run_sequence: no tasks");
    if (test.size() != train.size()) throw ConfigError("run_sequence: train and test task counts differ");

    RunState st = resume ? std::move(*resume) : initial_run_state(model_config, generator_config, K, options);
    if (st.model->config().num_tasks != options.model_tasks(K))
        throw ConfigError("run_sequence: resumed model has " + std::to_string(st.model->config().num_tasks) +
                          " task labels, run needs " + std::to_string(options.model_tasks(K)));
    const auto trainer = options.trainer();
    const int periods = options.mode == RunMode::Joint ? 1 : K;

    // Positions in the training order are the task labels.
    std::vector<DatasetSplit> ordered = train;
    for (int i = 0; i < K; ++i) {
        ordered[static_cast<size_t>(i)].task_id = i + 1;
        for (auto& s : ordered[static_cast<size_t>(i)].sequences) s.task_id = i + 1;
    }

    for (int period = st.completed_periods + 1; period <= periods; ++period) {
        const uint64_t pseed = derive_seed(options.seed, 0x9e71, static_cast<uint64_t>(period));
        try {
            if (options.mode == RunMode::Joint) {
                std::vector<VideoSequence> pool;
                for (const auto& s : ordered) pool.insert(pool.end(), s.sequences.begin(), s.sequences.end());
                auto log = train_world_model(st.model, pool, schedule, trainer, schedule.iterations * K, 0,
                                             derive_seed(pseed, 1));
                st.logs.world_model.insert(st.logs.world_model.end(), log.begin(), log.end());
            } else {
                const auto& split = ordered[static_cast<size_t>(period - 1)];
                TrainLogs logs;
                if (period == 1) {
                    logs = train_first_task(st.model, st.generator, split, schedule, trainer, pseed);
                } else {
                    logs = train_task(st.model, st.generator, split, st.buffer, schedule, trainer, pseed).logs;
                }
                st.logs.world_model.insert(st.logs.world_model.end(), logs.world_model.begin(), logs.world_model.end());
                st.logs.generator.insert(st.logs.generator.end(), logs.generator.begin(), logs.generator.end());
                if (trainer.replay) {
                    std::mt19937_64 rng(derive_seed(pseed, 3));
                    st.buffer = store_actions(st.buffer, split.task_id, split, schedule.action_fraction, rng);
                }
            }
        } catch (const NumericalError&) {
            // Parameters still hold the last finite step.
            if (on_divergence) on_divergence(st, period);
            throw;
        }
        // Only labels learned so far are candidates.
        RunOptions period_options = options;
        if (options.mode == RunMode::CplFull) period_options.eval.candidate_labels = period;
        st.matrix.num_tasks = K;
        st.matrix.append_row(evaluate_all(st.model, test, period_options, derive_seed(pseed, 4)));
        st.completed_periods = period;
        if (on_period_end) on_period_end(st, period);
        if (options.stop_after_periods > 0 && period >= options.stop_after_periods) break;
    }
    return st;
}

} // namespace cpl
