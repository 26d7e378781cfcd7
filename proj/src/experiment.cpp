#include "cpl/experiment.hpp"

#include "cpl/errors.hpp"
#include "cpl/plots.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace cpl {

std::vector<SyntheticTaskConfig> ExperimentConfig::ordered_tasks() const {
    std::vector<SyntheticTaskConfig> out;
    for (int id : order) {
        auto it = std::find_if(tasks.begin(), tasks.end(), [&](const auto& t) { return t.task_id == id; });
        if (it == tasks.end()) throw ConfigError("task order names undeclared task " + std::to_string(id));
        out.push_back(*it);
    }
    return out;
}

void ExperimentConfig::sync_shapes() {
    if (tasks.empty()) return;
    const auto& t = tasks.front();
    model.channels = generator.channels = t.channels;
    model.resolution = generator.resolution = t.resolution;
    model.action_dim = generator.action_dim = t.action_dim;
    model.num_tasks = generator.num_tasks = static_cast<int>(order.empty() ? tasks.size() : order.size());
    schedule.context_len = t.context_len;
}

void ExperimentConfig::validate() const {
    if (tasks.empty()) throw ConfigError("benchmark declares no tasks");
    for (const auto& t : tasks) t.validate();
    validate_benchmark(tasks);
    std::vector<int> declared, ordered = order;
    for (const auto& t : tasks) declared.push_back(t.task_id);
    std::sort(declared.begin(), declared.end());
    std::sort(ordered.begin(), ordered.end());
    if (declared != ordered) throw ConfigError("task order must be a permutation of the declared task ids");
    if (flags.infer_k && flags.random_k) throw ConfigError("random_k excludes infer_k");
    model.validate();
    generator.validate();
    schedule.validate();
    if (eval_batch_size < 1) throw ConfigError("eval.batch_size must be >= 1");
}

void ExperimentConfig::apply_desk_scale() {
    const auto d = TrainSchedule::desk_scale();
    schedule.iterations = d.iterations;
    schedule.batch_size = d.batch_size;
    schedule.learning_rate = d.learning_rate;
}

EvalOptions ExperimentConfig::eval_options() const {
    EvalOptions e;
    e.policy = flags.infer_k ? TaskPolicy::Infer : flags.random_k ? TaskPolicy::Random : TaskPolicy::Latest;
    e.adapt = flags.adapt;
    e.cumulative_adaptation = cumulative_adaptation;
    e.adapt_options = adapt;
    e.context_len = tasks.empty() ? 5 : tasks.front().context_len;
    e.horizon = tasks.empty() ? 10 : tasks.front().horizon;
    e.batch_size = eval_batch_size;
    e.max_sequences = max_eval_sequences;
    return e;
}

RunOptions ExperimentConfig::run_options() const {
    RunOptions r;
    r.mode = mode;
    if (mode == RunMode::CplFull) r.replay = flags.replay;
    r.eval = eval_options();
    r.seed = seed;
    return r;
}

ExperimentConfig parse_config(const json& j) {
    reject_unknown_keys(j,
                        {"seed", "data_seed", "data_dir", "output_dir", "mode", "desk_scale", "benchmark", "model",
                         "generator", "schedule", "ablation", "adapt", "eval"},
                        "config");
    ExperimentConfig c;
    try {
        c.seed = j.value("seed", uint64_t{0});
        c.data_seed = j.value("data_seed", uint64_t{0});
        c.data_dir = j.value("data_dir", std::string("data"));
        c.output_dir = j.value("output_dir", std::string("runs"));
        if (j.contains("mode")) c.mode = run_mode_from_string(j.at("mode").get<std::string>());
        if (j.contains("model")) c.model = j.at("model").get<WorldModelConfig>();
        if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorConfig>();
        if (j.contains("schedule")) c.schedule = j.at("schedule").get<TrainSchedule>();
        if (j.value("desk_scale", false)) c.apply_desk_scale();
        if (j.contains("adapt")) c.adapt = j.at("adapt").get<AdaptOptions>();

        if (j.contains("benchmark")) {
            const auto& b = j.at("benchmark");
            reject_unknown_keys(b, {"tasks", "order", "resolution", "n_train", "n_test"}, "benchmark");
            if (b.contains("tasks")) {
                c.tasks = b.at("tasks").get<std::vector<SyntheticTaskConfig>>();
            } else {
                c.tasks = default_benchmark(b.value("resolution", 64), b.value("n_train", 100), b.value("n_test", 20));
            }
            if (b.contains("order")) c.order = b.at("order").get<std::vector<int>>();
        } else {
            c.tasks = default_benchmark();
        }
        if (c.order.empty())
            for (const auto& t : c.tasks) c.order.push_back(t.task_id);

        if (j.contains("ablation")) {
            const auto& a = j.at("ablation");
            reject_unknown_keys(a, {"replay", "infer_k", "random_k", "adapt"}, "ablation");
            c.flags.replay = a.value("replay", c.flags.replay);
            c.flags.infer_k = a.value("infer_k", c.flags.infer_k);
            c.flags.random_k = a.value("random_k", c.flags.random_k);
            c.flags.adapt = a.value("adapt", c.flags.adapt);
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            reject_unknown_keys(e, {"batch_size", "max_sequences", "cumulative_adaptation", "strips_per_task"}, "eval");
            c.eval_batch_size = e.value("batch_size", c.eval_batch_size);
            c.max_eval_sequences = e.value("max_sequences", c.max_eval_sequences);
            c.cumulative_adaptation = e.value("cumulative_adaptation", c.cumulative_adaptation);
            c.strips_per_task = e.value("strips_per_task", c.strips_per_task);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.sync_shapes();
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_config(j);
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["data_seed"] = c.data_seed;
    j["data_dir"] = c.data_dir.string();
    j["output_dir"] = c.output_dir.string();
    j["mode"] = to_string(c.mode);
    j["benchmark"] = {{"tasks", c.tasks}, {"order", c.order}};
    j["model"] = c.model;
    j["generator"] = c.generator;
    j["schedule"] = c.schedule;
    j["ablation"] = {{"replay", c.flags.replay},
                     {"infer_k", c.flags.infer_k},
                     {"random_k", c.flags.random_k},
                     {"adapt", c.flags.adapt}};
    j["adapt"] = c.adapt;
    j["eval"] = {{"batch_size", c.eval_batch_size},
                 {"max_sequences", c.max_eval_sequences},
                 {"cumulative_adaptation", c.cumulative_adaptation},
                 {"strips_per_task", c.strips_per_task}};
    return j;
}

namespace {

fs::path task_dir(const ExperimentConfig& c, int task_id) { return c.data_dir / ("task_" + std::to_string(task_id)); }

FrameDirectoryOptions frame_options(const SyntheticTaskConfig& t, int position, SplitRole role) {
    FrameDirectoryOptions o;
    o.context_len = t.context_len;
    o.horizon = t.horizon;
    o.resolution = t.resolution;
    o.channels = t.channels;
    if (t.action_dim > 0) o.action_filename = "actions.txt";
    o.task_id = position;
    o.role = role;
    return o;
}

void relabel(DatasetSplit& split, int position) {
    split.task_id = position;
    for (auto& s : split.sequences) s.task_id = position;
}

std::string mode_tag(const ExperimentConfig& c) { return to_string(c.mode); }

CheckpointMeta make_meta(const ExperimentConfig& c, const RunState& st) {
    CheckpointMeta m;
    m.mode = mode_tag(c);
    m.seed = c.seed;
    m.num_tasks = c.num_tasks();
    m.completed_periods = st.completed_periods;
    m.replay = c.run_options().replay_enabled();
    m.model_config = st.model->config();
    m.generator_config = st.generator->config();
    return m;
}

void append_log(const fs::path& path, const std::vector<TrainLogEntry>& entries, size_t from, bool fresh) {
    std::ofstream out(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out) throw ConfigError("cannot write " + path.string());
    if (fresh) out << "iteration,task,loss,recon,kl\n";
    char buf[160];
    for (size_t i = from; i < entries.size(); ++i) {
        const auto& e = entries[i];
        std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g\n", e.iteration, e.task, e.loss, e.recon, e.kl);
        out << buf;
    }
}

const Benchmark& ensure_benchmark(const ExperimentConfig& c, const Benchmark* given, Benchmark& storage) {
    if (given) return *given;
    storage = load_benchmark(c);
    return storage;
}

} // namespace

std::vector<fs::path> cmd_generate(const ExperimentConfig& config, bool force) {
    config.validate();
    if (fs::exists(config.data_dir) && !fs::is_empty(config.data_dir)) {
        if (!force) throw ConfigError("output directory " + config.data_dir.string() + " is not empty (use --force)");
        fs::remove_all(config.data_dir);
    }
    std::vector<fs::path> written;
    for (const auto& t : config.tasks) {
        auto [train, test] = generate_shapeworld_task(t, config.data_seed);
        const auto dir = task_dir(config, t.task_id);
        save_frame_directory(train, dir / "train");
        save_frame_directory(test, dir / "test");
        written.push_back(dir / "train");
        written.push_back(dir / "test");
    }
    return written;
}

Benchmark load_benchmark(const ExperimentConfig& config) {
    Benchmark b;
    int position = 1;
    for (const auto& t : config.ordered_tasks()) {
        const auto dir = task_dir(config, t.task_id);
        if (!fs::exists(dir / "train") || !fs::exists(dir / "test"))
            throw IngestionError("dataset for task " + std::to_string(t.task_id) + " missing under " +
                                 config.data_dir.string() + " (run generate first)");
        b.train.push_back(load_frame_directory(dir / "train", frame_options(t, position, SplitRole::Train)));
        b.test.push_back(load_frame_directory(dir / "test", frame_options(t, position, SplitRole::Test)));
        ++position;
    }
    return b;
}

Benchmark build_benchmark(const ExperimentConfig& config) {
    Benchmark b;
    int position = 1;
    for (const auto& t : config.ordered_tasks()) {
        auto [train, test] = generate_shapeworld_task(t, config.data_seed);
        relabel(train, position);
        relabel(test, position);
        b.train.push_back(std::move(train));
        b.test.push_back(std::move(test));
        ++position;
    }
    return b;
}

fs::path latest_checkpoint(const ExperimentConfig& config) {
    return config.output_dir / "checkpoints" / (mode_tag(config) + "_latest.pt");
}

TrainOutputs cmd_train(const ExperimentConfig& config, bool resume, const Benchmark* benchmark) {
    config.validate();
    Benchmark storage;
    const auto& bench = ensure_benchmark(config, benchmark, storage);
    const auto tag = mode_tag(config);
    const auto ckpt_dir = config.output_dir / "checkpoints";
    fs::create_directories(ckpt_dir);

    TrainOutputs out;
    out.eval_csv = config.output_dir / (tag + "_eval_matrix.csv");
    out.log_csv = config.output_dir / (tag + "_train_log.csv");
    const auto gen_log_csv = config.output_dir / (tag + "_generator_log.csv");

    std::optional<RunState> start;
    if (resume && fs::exists(latest_checkpoint(config))) {
        auto loaded = load_checkpoint(latest_checkpoint(config));
        if (loaded.meta.mode != tag) throw ConfigError("resume: checkpoint mode " + loaded.meta.mode + " != " + tag);
        if (loaded.meta.seed != config.seed) throw ConfigError("resume: checkpoint seed differs from config seed");
        if (loaded.meta.num_tasks != config.num_tasks())
            throw ConfigError("resume: checkpoint has " + std::to_string(loaded.meta.num_tasks) + " tasks, config has " +
                              std::to_string(config.num_tasks()));
        start = std::move(loaded.state);
    }
    const bool fresh = !start;

    const auto opts = config.run_options();
    bool first_write = fresh;
    size_t wm_written = 0, g_written = 0;
    auto on_period = [&](const RunState& st, int period) {
        append_log(out.log_csv, st.logs.world_model, wm_written, first_write);
        append_log(gen_log_csv, st.logs.generator, g_written, first_write);
        wm_written = st.logs.world_model.size();
        g_written = st.logs.generator.size();
        first_write = false;
        st.matrix.write_csv(out.eval_csv);
        const auto meta = make_meta(config, st);
        const auto path = ckpt_dir / checkpoint_name(tag, period);
        save_checkpoint(path, st, meta);
        save_checkpoint(latest_checkpoint(config), st, meta);
        out.final_checkpoint = path;
    };
    auto on_diverge = [&](const RunState& st, int period) {
        save_checkpoint(ckpt_dir / (tag + "_diverged_task" + std::to_string(period) + ".pt"), st,
                        make_meta(config, st));
    };

    torch::set_num_threads(1);
    out.state = run_sequence(bench.train, bench.test, config.model, config.generator, config.schedule, opts,
                             std::move(start), on_period, on_diverge);
    if (out.final_checkpoint.empty()) out.final_checkpoint = latest_checkpoint(config);
    if (!fs::exists(out.eval_csv)) out.state.matrix.write_csv(out.eval_csv);
    plots::write_eval_plots(out.state.matrix, config.output_dir / "plots", tag);
    return out;
}

EvalOutputs cmd_eval(const ExperimentConfig& config, const fs::path& checkpoint, const Benchmark* benchmark) {
    config.validate();
    auto meta = read_checkpoint_meta(checkpoint);
    if (meta.num_tasks != config.num_tasks())
        throw ConfigError("checkpoint was trained on " + std::to_string(meta.num_tasks) + " tasks but the config declares " +
                          std::to_string(config.num_tasks()));
    auto loaded = load_checkpoint(checkpoint);
    Benchmark storage;
    const auto& bench = ensure_benchmark(config, benchmark, storage);

    torch::set_num_threads(1);
    RunOptions ro;
    ro.mode = run_mode_from_string(meta.mode);
    ro.replay = meta.replay;
    const auto trainer = ro.trainer();
    auto eo = config.eval_options();

    const auto dir = config.output_dir / "eval";
    fs::create_directories(dir / "strips");
    const std::string stem = meta.mode + "_" + to_string(eo.policy) + (eo.adapt ? "_adapt" : "");
    EvalOutputs out;
    out.summary_csv = dir / (stem + "_summary.csv");
    out.sequences_csv = dir / (stem + "_sequences.csv");
    std::ofstream summary(out.summary_csv), seqs(out.sequences_csv);
    summary << "task,psnr,ssim,inference_accuracy\n";
    seqs << "task,index,used_task,psnr,ssim,probe_errors\n";
    char buf[256];
    for (int i = 0; i < config.num_tasks(); ++i) {
        const int task = i + 1;
        auto score = evaluate_task(loaded.state.model, bench.test[static_cast<size_t>(i)], trainer.label_for(task), eo,
                                   derive_seed(config.seed, 0xe7a1, static_cast<uint64_t>(task)));
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f\n", task, score.psnr, score.ssim, score.inference_accuracy);
        summary << buf;
        for (const auto& s : score.sequences) {
            std::string probes;
            for (size_t k = 0; k < s.probe_errors.size(); ++k) {
                std::snprintf(buf, sizeof buf, "%s%.6g", k ? ";" : "", s.probe_errors[k]);
                probes += buf;
            }
            std::snprintf(buf, sizeof buf, "%d,%d,%d,%.6f,%.6f,", task, s.index, s.used_task, s.psnr, s.ssim);
            seqs << buf << probes << "\n";
        }
        const auto& split = bench.test[static_cast<size_t>(i)];
        for (int n = 0; n < std::min<int>(config.strips_per_task, static_cast<int>(score.sequences.size())); ++n) {
            const auto& s = score.sequences[static_cast<size_t>(n)];
            auto truth = split.sequences[static_cast<size_t>(s.index)].frames.narrow(0, eo.context_len, eo.horizon);
            image::write_png(dir / "strips" / (stem + "_task" + std::to_string(task) + "_seq" + std::to_string(s.index) + ".png"),
                             plots::frame_strip(truth, s.prediction));
        }
        out.scores.push_back(std::move(score));
    }
    return out;
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& config, const Benchmark* benchmark) {
    config.validate();
    Benchmark storage;
    const auto& bench = ensure_benchmark(config, benchmark, storage);
    torch::set_num_threads(1);

    const std::vector<AblationFlags> rows = {
        {false, false, false, false},
        {true, false, false, false},
        {true, true, false, false},
        {true, false, true, false},
        {true, true, false, true},
    };
    // Rows 2-5 share one trained model; only the evaluation differs.
    std::map<bool, RunState> trained;
    for (bool replay : {false, true}) {
        auto c = config;
        c.mode = RunMode::CplFull;
        c.flags.replay = replay;
        trained[replay] = run_sequence(bench.train, bench.test, c.model, c.generator, c.schedule, c.run_options());
    }

    std::vector<AblationRow> out;
    for (const auto& f : rows) {
        auto c = config;
        c.mode = RunMode::CplFull;
        c.flags = f;
        auto eo = c.eval_options();
        auto& st = trained.at(f.replay);
        AblationRow row{f};
        for (int i = 0; i < c.num_tasks(); ++i) {
            auto s = evaluate_task(st.model, bench.test[static_cast<size_t>(i)], i + 1, eo,
                                   derive_seed(config.seed, 0xab1, static_cast<uint64_t>(i + 1)));
            row.psnr += s.psnr / c.num_tasks();
            row.ssim += s.ssim / c.num_tasks();
            row.inference_accuracy += s.inference_accuracy / c.num_tasks();
        }
        out.push_back(row);
    }

    fs::create_directories(config.output_dir);
    std::ofstream csv(config.output_dir / "ablation.csv");
    csv << "row,replay,infer_k,random_k,adapt,psnr,ssim,inference_accuracy\n";
    char buf[200];
    for (size_t r = 0; r < out.size(); ++r) {
        const auto& a = out[r];
        std::snprintf(buf, sizeof buf, "%zu,%d,%d,%d,%d,%.6f,%.6f,%.6f\n", r + 1, a.flags.replay, a.flags.infer_k,
                      a.flags.random_k, a.flags.adapt, a.psnr, a.ssim, a.inference_accuracy);
        csv << buf;
    }
    return out;
}

} // namespace cpl
