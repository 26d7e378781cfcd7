#include "cpl/data.hpp"

#include "cpl/errors.hpp"
#include "cpl/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace cpl {

namespace {

constexpr const char* kAppearanceNames[] = {"square", "disc", "triangle", "cross", "ring", "bar"};
constexpr const char* kDynamicsNames[] = {"bounce_horizontal", "bounce_vertical", "diagonal",
                                          "circular",          "expand_contract", "action_gain"};

// RGB palette per appearance, used when channels == 3.
constexpr float kPalette[6][3] = {
    {1.0f, 0.2f, 0.2f}, {0.2f, 1.0f, 0.2f}, {0.3f, 0.4f, 1.0f},
    {1.0f, 1.0f, 0.2f}, {1.0f, 0.3f, 1.0f}, {0.2f, 1.0f, 1.0f},
};

double half_extent(double size) { return size / 2.0; }

// Valid range for the rounded centre so the whole shape stays in frame.
std::pair<double, double> centre_range(double size, int resolution) {
    const double h = std::ceil(half_extent(size));
    return {h, resolution - 1 - h};
}

double reflect(double& pos, double& vel, double lo, double hi) {
    pos += vel;
    // A step can overshoot both walls only if the range is degenerate.
    for (int guard = 0; guard < 4 && (pos < lo || pos > hi); ++guard) {
        if (pos < lo) {
            pos = 2 * lo - pos;
            vel = -vel;
        } else if (pos > hi) {
            pos = 2 * hi - pos;
            vel = -vel;
        }
    }
    pos = std::clamp(pos, lo, hi);
    return pos;
}

bool inside_shape(Appearance a, double dx, double dy, double r) {
    switch (a) {
    case Appearance::Square: return std::abs(dx) <= r && std::abs(dy) <= r;
    case Appearance::Disc: return dx * dx + dy * dy <= r * r + 0.25;
    case Appearance::Triangle: return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2.0 + 0.25;
    case Appearance::Cross:
        return (std::abs(dx) <= r / 3.0 && std::abs(dy) <= r) || (std::abs(dy) <= r / 3.0 && std::abs(dx) <= r);
    case Appearance::Ring: {
        const double d2 = dx * dx + dy * dy;
        return d2 <= r * r + 0.25 && d2 >= (r / 2.0) * (r / 2.0);
    }
    case Appearance::Bar: return std::abs(dx) <= r && std::abs(dy) <= r / 3.0;
    }
    return false;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

VideoSequence simulate_sequence(const SyntheticTaskConfig& config, uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int length = config.sequence_length();
    auto frames = torch::zeros({length, config.channels, config.resolution, config.resolution});
    std::optional<torch::Tensor> actions;
    if (config.action_dim > 0)
        actions = torch::zeros({length - 1, config.action_dim});

    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto state = shapeworld::initial_state(config, rng);
    frames[0] = shapeworld::render(state, config);
    std::vector<double> a(static_cast<size_t>(config.action_dim));
    for (int t = 1; t < length; ++t) {
        for (auto& v : a) v = unit(rng);
        if (actions) {
            auto acc = actions->accessor<float, 2>();
            for (int d = 0; d < config.action_dim; ++d) acc[t - 1][d] = static_cast<float>(a[d]);
        }
        state = shapeworld::advance(state, config, a);
        frames[t] = shapeworld::render(state, config);
    }
    return VideoSequence{frames, actions, config.task_id};
}

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

} // namespace

std::string to_string(Appearance a) { return kAppearanceNames[static_cast<int>(a)]; }
std::string to_string(Dynamics d) { return kDynamicsNames[static_cast<int>(d)]; }
std::string to_string(SplitRole r) { return r == SplitRole::Train ? "train" : "test"; }

Appearance appearance_from_string(const std::string& s) {
    for (int i = 0; i < 6; ++i)
        if (s == kAppearanceNames[i]) return static_cast<Appearance>(i);
    throw ConfigError("unknown appearance '" + s + "'");
}

Dynamics dynamics_from_string(const std::string& s) {
    for (int i = 0; i < 6; ++i)
        if (s == kDynamicsNames[i]) return static_cast<Dynamics>(i);
    throw ConfigError("unknown dynamics '" + s + "'");
}

uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b) {
    return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

int SyntheticTaskConfig::effective_object_size() const {
    return object_size > 0 ? object_size : std::max(3, resolution / 5);
}

void SyntheticTaskConfig::validate() const {
    auto fail = [&](const std::string& what) {
        throw ConfigError("task " + std::to_string(task_id) + ": " + what);
    };
    if (resolution < 8) fail("resolution must be >= 8");
    if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
    if (context_len < 2) fail("context_len (T) must be >= 2");
    if (horizon < 1) fail("horizon (H) must be >= 1");
    if (n_train < 0 || n_test < 0) fail("n_train and n_test must be non-negative");
    if (action_dim < 0) fail("action_dim must be >= 0");
    if (dynamics == Dynamics::ActionGain && action_dim < 2) fail("action_gain dynamics requires action_dim >= 2");
    if (!(intensity > 0.0 && intensity <= 1.0)) fail("intensity must lie in (0, 1]");
    if (speed < 0.0) fail("speed must be non-negative");
    const int size = effective_object_size();
    double extent = size;
    if (dynamics == Dynamics::ExpandContract) extent = size * 1.4;
    if (dynamics == Dynamics::Circular) extent = size + 2.0 * radius;
    if (extent + 2 >= resolution) fail("object (and its motion envelope) does not fit in the frame");
}

void validate_benchmark(std::span<const SyntheticTaskConfig> tasks) {
    std::set<int> ids;
    for (const auto& t : tasks) {
        t.validate();
        if (!ids.insert(t.task_id).second)
            throw ConfigError("duplicate task id " + std::to_string(t.task_id));
    }
    for (size_t i = 0; i < tasks.size(); ++i) {
        for (size_t j = i + 1; j < tasks.size(); ++j) {
            const auto& a = tasks[i];
            const auto& b = tasks[j];
            if (a.appearance == b.appearance || a.dynamics == b.dynamics)
                throw ConfigError("tasks " + std::to_string(a.task_id) + " and " + std::to_string(b.task_id) +
                                  " must differ in both appearance and dynamics");
            if (a.resolution != b.resolution || a.channels != b.channels || a.context_len != b.context_len ||
                a.horizon != b.horizon || a.action_dim != b.action_dim)
                throw ConfigError("tasks " + std::to_string(a.task_id) + " and " + std::to_string(b.task_id) +
                                  " disagree on frame shape, sequence length or action dimensionality");
        }
    }
}

std::vector<SyntheticTaskConfig> default_benchmark(int resolution, int n_train, int n_test) {
    const double speed = std::max(1.0, resolution / 16.0);
    std::vector<SyntheticTaskConfig> tasks(3);
    tasks[0].appearance = Appearance::Square;
    tasks[0].dynamics = Dynamics::BounceHorizontal;
    tasks[1].appearance = Appearance::Disc;
    tasks[1].dynamics = Dynamics::Circular;
    tasks[1].radius = resolution / 4.0;
    tasks[2].appearance = Appearance::Triangle;
    tasks[2].dynamics = Dynamics::BounceVertical;
    for (int i = 0; i < 3; ++i) {
        tasks[i].task_id = i + 1;
        tasks[i].resolution = resolution;
        tasks[i].speed = speed;
        tasks[i].n_train = n_train;
        tasks[i].n_test = n_test;
    }
    return tasks;
}

// -- sequences / splits ------------------------------------------------------

void VideoSequence::validate(int context_len, int horizon) const {
    if (!frames.defined() || frames.dim() != 4) throw ShapeError("sequence frames must be [L, C, H, W]");
    if (context_len < 2 || horizon < 1) throw ShapeError("sequence requires T >= 2 and H >= 1");
    if (frames.size(0) < context_len + horizon)
        throw ShapeError("sequence has " + std::to_string(frames.size(0)) + " frames, fewer than T+H");
    if (frames.min().item<float>() < 0.0f || frames.max().item<float>() > 1.0f)
        throw ShapeError("frame values outside [0,1]");
    if (actions) {
        if (actions->dim() != 2 || actions->size(0) != frames.size(0) - 1)
            throw ShapeError("actions must have exactly one entry fewer than frames");
    }
}

int DatasetSplit::action_dim() const {
    if (sequences.empty() || !sequences.front().actions) return 0;
    return static_cast<int>(sequences.front().actions->size(1));
}

void DatasetSplit::validate() const {
    if (sequences.empty()) return;
    const auto& ref = sequences.front();
    for (size_t i = 0; i < sequences.size(); ++i) {
        const auto& s = sequences[i];
        if (s.task_id != task_id)
            throw ShapeError("sequence " + std::to_string(i) + " has task id " + std::to_string(s.task_id) +
                             ", split has " + std::to_string(task_id));
        if (s.frames.sizes() != ref.frames.sizes())
            throw ShapeError("sequence " + std::to_string(i) + " frame shape differs from the split");
        if (s.actions.has_value() != ref.actions.has_value() ||
            (s.actions && s.actions->sizes() != ref.actions->sizes()))
            throw ShapeError("sequence " + std::to_string(i) + " action dimensionality differs from the split");
    }
}

Batch stack_sequences(std::span<const VideoSequence> sequences) {
    if (sequences.empty()) throw std::invalid_argument("cannot stack an empty set of sequences");
    std::vector<torch::Tensor> frames, actions;
    std::vector<int64_t> ids;
    frames.reserve(sequences.size());
    for (const auto& s : sequences) {
        frames.push_back(s.frames);
        if (s.actions) actions.push_back(*s.actions);
        ids.push_back(s.task_id);
    }
    Batch b;
    b.frames = torch::stack(frames);
    if (!actions.empty()) {
        if (actions.size() != sequences.size())
            throw ShapeError("cannot stack sequences with and without actions");
        b.actions = torch::stack(actions);
    }
    b.task_ids = torch::tensor(ids, torch::kInt64);
    return b;
}

Batch sample_batch(std::span<const VideoSequence> pool, int batch_size, std::mt19937_64& rng) {
    if (pool.empty()) throw std::invalid_argument("sample_batch: empty split");
    if (batch_size < 1) throw std::invalid_argument("sample_batch: batch_size must be >= 1");
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    std::vector<VideoSequence> chosen;
    chosen.reserve(static_cast<size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) chosen.push_back(pool[pick(rng)]);
    return stack_sequences(chosen);
}

Batch sample_batch(const DatasetSplit& split, int batch_size, std::mt19937_64& rng) {
    return sample_batch(std::span<const VideoSequence>(split.sequences), batch_size, rng);
}

// -- ShapeWorld ---------------------------------------------------------------

namespace shapeworld {

ObjectState initial_state(const SyntheticTaskConfig& config, std::mt19937_64& rng) {
    ObjectState s;
    s.size = config.effective_object_size();
    s.base_size = s.size;
    const int R = config.resolution;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto sign = [&] { return unit(rng) < 0.5 ? -1.0 : 1.0; };
    auto uniform_int = [&](double lo, double hi) {
        std::uniform_int_distribution<int> d(static_cast<int>(std::ceil(lo)), static_cast<int>(std::floor(hi)));
        return static_cast<double>(d(rng));
    };

    auto [lo, hi] = centre_range(s.size, R);
    switch (config.dynamics) {
    case Dynamics::BounceHorizontal:
        s.x = uniform_int(lo, hi);
        s.y = uniform_int(lo, hi);
        s.vx = sign() * config.speed;
        break;
    case Dynamics::BounceVertical:
        s.x = uniform_int(lo, hi);
        s.y = uniform_int(lo, hi);
        s.vy = sign() * config.speed;
        break;
    case Dynamics::Diagonal:
        s.x = uniform_int(lo, hi);
        s.y = uniform_int(lo, hi);
        s.vx = sign() * config.speed;
        s.vy = sign() * config.speed;
        break;
    case Dynamics::Circular: {
        s.cx = uniform_int(lo + config.radius, hi - config.radius);
        s.cy = uniform_int(lo + config.radius, hi - config.radius);
        s.angle = unit(rng) * 2.0 * std::numbers::pi;
        s.omega = sign() * (config.radius > 0 ? config.speed / config.radius : 0.0);
        s.x = s.cx + config.radius * std::cos(s.angle);
        s.y = s.cy + config.radius * std::sin(s.angle);
        break;
    }
    case Dynamics::ExpandContract: {
        auto [elo, ehi] = centre_range(s.base_size * 1.4, R);
        s.x = uniform_int(elo, ehi);
        s.y = uniform_int(elo, ehi);
        s.angle = unit(rng) * 2.0 * std::numbers::pi;
        s.omega = s.base_size > 0 ? config.speed / s.base_size : 0.0;
        s.size = s.base_size * (1.0 + 0.4 * std::sin(s.angle));
        break;
    }
    case Dynamics::ActionGain:
        s.x = uniform_int(lo, hi);
        s.y = uniform_int(lo, hi);
        break;
    }
    return s;
}

ObjectState advance(const ObjectState& state, const SyntheticTaskConfig& config, std::span<const double> action) {
    ObjectState s = state;
    s.t += 1;
    auto [lo, hi] = centre_range(s.size, config.resolution);
    switch (config.dynamics) {
    case Dynamics::BounceHorizontal:
    case Dynamics::BounceVertical:
    case Dynamics::Diagonal:
        reflect(s.x, s.vx, lo, hi);
        reflect(s.y, s.vy, lo, hi);
        break;
    case Dynamics::Circular:
        s.angle += s.omega;
        s.x = s.cx + config.radius * std::cos(s.angle);
        s.y = s.cy + config.radius * std::sin(s.angle);
        break;
    case Dynamics::ExpandContract:
        s.angle += s.omega;
        s.size = s.base_size * (1.0 + 0.4 * std::sin(s.angle));
        break;
    case Dynamics::ActionGain:
        if (action.size() < 2) throw ConfigError("action_gain dynamics requires a >= 2-dimensional action");
        s.x = std::clamp(s.x + std::round(config.gain * action[0]), lo, hi);
        s.y = std::clamp(s.y + std::round(config.gain * action[1]), lo, hi);
        break;
    }
    return s;
}

std::pair<int, int> rendered_centre(const ObjectState& state) {
    return {static_cast<int>(std::lround(state.x)), static_cast<int>(std::lround(state.y))};
}

torch::Tensor render(const ObjectState& state, const SyntheticTaskConfig& config) {
    const int R = config.resolution;
    const int C = config.channels;
    auto frame = torch::zeros({C, R, R});
    auto acc = frame.accessor<float, 3>();
    auto [cx, cy] = rendered_centre(state);
    const double r = half_extent(state.size);
    const int span = static_cast<int>(std::ceil(r)) + 1;
    const auto* colour = kPalette[static_cast<int>(config.appearance)];
    for (int y = std::max(0, cy - span); y <= std::min(R - 1, cy + span); ++y) {
        for (int x = std::max(0, cx - span); x <= std::min(R - 1, cx + span); ++x) {
            if (!inside_shape(config.appearance, x - cx, y - cy, r)) continue;
            for (int c = 0; c < C; ++c)
                acc[c][y][x] = static_cast<float>(C == 1 ? config.intensity : colour[c] * config.intensity);
        }
    }
    return frame;
}

} // namespace shapeworld

std::pair<DatasetSplit, DatasetSplit> generate_shapeworld_task(const SyntheticTaskConfig& config, uint64_t seed) {
    config.validate();
    auto make = [&](SplitRole role, int n) {
        DatasetSplit split;
        split.task_id = config.task_id;
        split.role = role;
        split.sequences.reserve(static_cast<size_t>(n));
        const uint64_t stream = static_cast<uint64_t>(config.task_id) * 2 + (role == SplitRole::Train ? 0 : 1);
        for (int i = 0; i < n; ++i)
            split.sequences.push_back(simulate_sequence(config, derive_seed(seed, stream, static_cast<uint64_t>(i))));
        return split;
    };
    return {make(SplitRole::Train, config.n_train), make(SplitRole::Test, config.n_test)};
}

// -- frame directories -----------------------------------------------------

DatasetSplit load_frame_directory(const fs::path& root, const FrameDirectoryOptions& options) {
    if (!fs::is_directory(root)) throw IngestionError("not a directory: " + root.string());
    if (options.context_len < 2 || options.horizon < 1)
        throw ConfigError("frame directory loading requires T >= 2 and H >= 1");
    const int needed = options.context_len + options.horizon;

    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    DatasetSplit split;
    split.task_id = options.task_id;
    split.role = options.role;
    for (const auto& dir : dirs) {
        const std::string name = dir.filename().string();
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            const auto fname = e.path().filename().string();
            if (e.is_regular_file() && fname.rfind("frame_", 0) == 0 && e.path().extension() == ".png")
                files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (size_t i = 0; i < files.size(); ++i) {
            const auto stem = files[i].stem().string().substr(6);
            int index = -1;
            try {
                index = std::stoi(stem);
            } catch (const std::exception&) {
            }
            if (index != static_cast<int>(i))
                throw IngestionError("sequence '" + name + "': missing frame index " + std::to_string(i));
        }
        const int available = static_cast<int>(files.size());
        if (available < needed)
            throw IngestionError("sequence '" + name + "' has " + std::to_string(available) +
                                 " frames, fewer than T+H=" + std::to_string(needed));

        std::vector<torch::Tensor> frames;
        frames.reserve(static_cast<size_t>(needed));
        for (int i = 0; i < needed; ++i) {
            auto t = image::to_tensor(image::read_png(files[static_cast<size_t>(i)], options.channels));
            if (t.size(1) != options.resolution || t.size(2) != options.resolution) {
                t = F::interpolate(t.unsqueeze(0), F::InterpolateFuncOptions()
                                                       .size(std::vector<int64_t>{options.resolution, options.resolution})
                                                       .mode(torch::kBilinear)
                                                       .align_corners(false)
                                                       .antialias(true))
                        .squeeze(0)
                        .clamp(0.0, 1.0);
            }
            frames.push_back(t);
        }

        VideoSequence seq{torch::stack(frames), std::nullopt, options.task_id};
        if (options.action_filename) {
            const auto apath = dir / *options.action_filename;
            std::ifstream in(apath);
            if (!in) throw IngestionError("sequence '" + name + "': missing action file " + apath.string());
            std::vector<std::vector<float>> rows;
            for (std::string line; std::getline(in, line);) {
                const auto toks = split_ws(line);
                if (toks.empty()) continue;
                std::vector<float> row;
                for (const auto& tok : toks) {
                    try {
                        row.push_back(std::stof(tok));
                    } catch (const std::exception&) {
                        throw IngestionError("sequence '" + name + "': non-numeric action value '" + tok + "'");
                    }
                }
                if (!rows.empty() && row.size() != rows.front().size())
                    throw IngestionError("sequence '" + name + "': ragged action file");
                rows.push_back(std::move(row));
            }
            if (static_cast<int>(rows.size()) != available - 1)
                throw IngestionError("sequence '" + name + "': action file has " + std::to_string(rows.size()) +
                                     " lines, expected " + std::to_string(available - 1));
            const auto dim = static_cast<int64_t>(rows.front().size());
            auto actions = torch::zeros({needed - 1, dim});
            auto acc = actions.accessor<float, 2>();
            for (int t = 0; t < needed - 1; ++t)
                for (int64_t d = 0; d < dim; ++d) acc[t][d] = rows[static_cast<size_t>(t)][static_cast<size_t>(d)];
            seq.actions = actions;
        }
        split.sequences.push_back(std::move(seq));
    }
    try {
        split.validate();
    } catch (const ShapeError& e) {
        throw IngestionError(std::string("inconsistent frame directory: ") + e.what());
    }
    return split;
}

void save_frame_directory(const DatasetSplit& split, const fs::path& root, const std::string& action_filename) {
    fs::create_directories(root);
    for (size_t i = 0; i < split.sequences.size(); ++i) {
        const auto& seq = split.sequences[i];
        std::ostringstream dname;
        dname << "seq_" << std::setw(4) << std::setfill('0') << i;
        const auto dir = root / dname.str();
        fs::create_directories(dir);
        for (int64_t t = 0; t < seq.length(); ++t) {
            std::ostringstream fname;
            fname << "frame_" << std::setw(3) << std::setfill('0') << t << ".png";
            image::write_png(dir / fname.str(), image::to_raster(seq.frames[t]));
        }
        if (seq.actions) {
            std::ofstream out(dir / action_filename);
            auto acc = seq.actions->to(torch::kFloat).contiguous();
            auto a = acc.accessor<float, 2>();
            out << std::setprecision(9);
            for (int64_t t = 0; t < acc.size(0); ++t) {
                for (int64_t d = 0; d < acc.size(1); ++d) out << (d ? " " : "") << a[t][d];
                out << '\n';
            }
        }
    }
}

} // namespace cpl
