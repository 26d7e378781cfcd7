#include "cpl/checkpoint.hpp"

#include "cpl/errors.hpp"
#include "cpl/serialization.hpp"

#include <torch/serialize.h>

namespace cpl {

namespace {

torch::Tensor string_tensor(const std::string& s) {
    auto t = torch::empty({static_cast<int64_t>(s.size())}, torch::kUInt8);
    std::memcpy(t.data_ptr<uint8_t>(), s.data(), s.size());
    return t;
}

std::string tensor_string(const torch::Tensor& t) {
    auto c = t.contiguous();
    return std::string(reinterpret_cast<const char*>(c.data_ptr<uint8_t>()), static_cast<size_t>(c.numel()));
}

void write_module(torch::serialize::OutputArchive& ar, const std::string& prefix, const torch::nn::Module& m) {
    for (const auto& p : m.named_parameters()) ar.write(prefix + p.key(), p.value().detach());
    for (const auto& b : m.named_buffers()) ar.write(prefix + b.key(), b.value().detach());
}

void read_module(torch::serialize::InputArchive& ar, const std::string& prefix, torch::nn::Module& m) {
    torch::NoGradGuard no_grad;
    auto assign = [&](const std::string& key, torch::Tensor& dst) {
        torch::Tensor src;
        if (!ar.try_read(prefix + key, src)) throw ConfigError("checkpoint: missing tensor '" + prefix + key + "'");
        if (src.sizes() != dst.sizes())
            throw ConfigError("checkpoint: tensor '" + prefix + key + "' has a shape that disagrees with the config");
        dst.copy_(src);
    };
    for (auto& p : m.named_parameters()) assign(p.key(), p.value());
    for (auto& b : m.named_buffers()) assign(b.key(), b.value());
}

json meta_json(const CheckpointMeta& meta, const RunState& state) {
    json j;
    j["format_version"] = meta.format_version;
    j["mode"] = meta.mode;
    j["seed"] = meta.seed;
    j["num_tasks"] = meta.num_tasks;
    j["completed_periods"] = meta.completed_periods;
    j["replay"] = meta.replay;
    j["model"] = meta.model_config;
    j["generator"] = meta.generator_config;
    j["buffer_fraction"] = state.buffer.fraction;
    json buffer = json::object();
    for (const auto& [task, r] : state.buffer.tasks) buffer[std::to_string(task)] = r.lengths;
    j["buffer"] = buffer;
    json rows = json::array();
    for (const auto& row : state.matrix.rows) {
        json jr = json::array();
        for (const auto& e : row) jr.push_back({e.psnr, e.ssim, e.inference_accuracy});
        rows.push_back(jr);
    }
    j["matrix"] = rows;
    return j;
}

CheckpointMeta parse_meta(const json& j) {
    CheckpointMeta m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kCheckpointFormatVersion)
        throw ConfigError("checkpoint: unsupported format version " + std::to_string(m.format_version));
    m.mode = j.at("mode").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.num_tasks = j.at("num_tasks").get<int>();
    m.completed_periods = j.at("completed_periods").get<int>();
    m.replay = j.at("replay").get<bool>();
    m.model_config = j.at("model").get<WorldModelConfig>();
    m.generator_config = j.at("generator").get<GeneratorConfig>();
    return m;
}

json read_meta_json(torch::serialize::InputArchive& ar) {
    torch::Tensor t;
    if (!ar.try_read("meta", t)) throw ConfigError("checkpoint: missing metadata");
    return json::parse(tensor_string(t));
}

torch::serialize::InputArchive open_archive(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
    torch::serialize::InputArchive ar;
    try {
        ar.load_from(path.string());
    } catch (const c10::Error& e) {
        throw ConfigError("checkpoint unreadable: " + path.string());
    }
    return ar;
}

} // namespace

std::string checkpoint_name(const std::string& mode, int period) {
    return mode + "_task" + std::to_string(period) + ".pt";
}

void save_checkpoint(const std::filesystem::path& path, const RunState& state, const CheckpointMeta& meta) {
    torch::serialize::OutputArchive ar;
    ar.write("meta", string_tensor(meta_json(meta, state).dump()));
    write_module(ar, "world_model.", *state.model);
    write_module(ar, "generator.", *state.generator);
    for (const auto& [task, r] : state.buffer.tasks)
        if (!r.actions.empty()) ar.write("buffer." + std::to_string(task), torch::stack(r.actions));
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    ar.save_to(tmp);
    std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
    auto ar = open_archive(path);
    return parse_meta(read_meta_json(ar));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    auto ar = open_archive(path);
    const json j = read_meta_json(ar);
    LoadedCheckpoint out;
    out.meta = parse_meta(j);
    auto& st = out.state;
    st.model = WorldModel(out.meta.model_config);
    st.generator = FrameGenerator(out.meta.generator_config);
    read_module(ar, "world_model.", *st.model);
    read_module(ar, "generator.", *st.generator);
    st.completed_periods = out.meta.completed_periods;
    st.buffer.fraction = j.at("buffer_fraction").get<double>();
    for (auto it = j.at("buffer").begin(); it != j.at("buffer").end(); ++it) {
        const int task = std::stoi(it.key());
        RetainedActions r;
        r.lengths = it.value().get<std::vector<int>>();
        torch::Tensor a;
        if (ar.try_read("buffer." + it.key(), a))
            for (int64_t i = 0; i < a.size(0); ++i) r.actions.push_back(a[i].clone());
        st.buffer.tasks[task] = std::move(r);
    }
    st.matrix.num_tasks = out.meta.num_tasks;
    for (const auto& jr : j.at("matrix")) {
        std::vector<EvalEntry> row;
        for (const auto& e : jr) row.push_back({e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()});
        st.matrix.rows.push_back(std::move(row));
    }
    return out;
}

} // namespace cpl
