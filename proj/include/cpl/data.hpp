#pragma once

// ShapeWorld-CL benchmark generation, frame-directory ingestion and batching.
//
// A benchmark task is a moving shape rendered on a black background. Tasks
// differ in appearance (the shape) and in dynamics (how the shape moves), so
// consecutive tasks exhibit covariate, dynamics and target shift at once.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cpl {

enum class Appearance { Square, Disc, Triangle, Cross, Ring, Bar };
enum class Dynamics { BounceHorizontal, BounceVertical, Diagonal, Circular, ExpandContract, ActionGain };
enum class SplitRole { Train, Test };

std::string to_string(Appearance a);
std::string to_string(Dynamics d);
std::string to_string(SplitRole r);
Appearance appearance_from_string(const std::string& s);
Dynamics dynamics_from_string(const std::string& s);

struct SyntheticTaskConfig {
    int task_id = 1;
    Appearance appearance = Appearance::Square;
    Dynamics dynamics = Dynamics::BounceHorizontal;
    double speed = 2.0;      // px/frame (angular speed is speed/radius for circular)
    double radius = 8.0;     // px, circular orbit radius
    double gain = 2.0;       // px per unit action, action_gain only
    int action_dim = 0;
    int resolution = 64;
    int channels = 1;
    int object_size = 0;     // px side length; 0 selects resolution / 5
    double intensity = 1.0;
    int context_len = 5;
    int horizon = 10;
    int n_train = 100;
    int n_test = 20;

    int sequence_length() const { return context_len + horizon; }
    int effective_object_size() const;
    /// Throws ConfigError naming the first violated invariant.
    void validate() const;
};

/// Checks the cross-task invariant: distinct tasks differ in both
/// appearance and dynamics.
void validate_benchmark(std::span<const SyntheticTaskConfig> tasks);

/// Default three-task benchmark at the given resolution (action-free,
/// T=5, H=10).
std::vector<SyntheticTaskConfig> default_benchmark(int resolution = 64, int n_train = 100, int n_test = 20);

struct VideoSequence {
    torch::Tensor frames;                 // [L, C, H, W] float32 in [0,1]
    std::optional<torch::Tensor> actions; // [L-1, d_a] float32
    int task_id = 1;

    int64_t length() const { return frames.size(0); }
    /// Throws ShapeError if the frame/action invariants do not hold.
    void validate(int context_len, int horizon) const;
};

struct DatasetSplit {
    std::vector<VideoSequence> sequences;
    int task_id = 1;
    SplitRole role = SplitRole::Train;

    bool empty() const { return sequences.empty(); }
    size_t size() const { return sequences.size(); }
    int action_dim() const;
    /// Throws ShapeError unless all sequences share task id, frame shape and
    /// action dimensionality.
    void validate() const;
};

struct Batch {
    torch::Tensor frames;                 // [B, L, C, H, W]
    std::optional<torch::Tensor> actions; // [B, L-1, d_a]
    torch::Tensor task_ids;               // [B] int64, 1-based

    int64_t size() const { return frames.size(0); }
};

/// Stacks sequences into a batch. All sequences must share shapes.
Batch stack_sequences(std::span<const VideoSequence> sequences);

// -- ShapeWorld simulation ---------------------------------------------------

namespace shapeworld {

struct ObjectState {
    double x = 0, y = 0;   // centre, pixel coordinates
    double vx = 0, vy = 0; // bounce velocities
    double size = 0;       // current side length
    double angle = 0;      // circular phase
    double omega = 0;      // circular angular velocity
    double cx = 0, cy = 0; // circular orbit centre
    double base_size = 0;  // expand_contract reference size
    int t = 0;
};

/// Initial object state for the task, drawn from rng.
ObjectState initial_state(const SyntheticTaskConfig& config, std::mt19937_64& rng);

/// One dynamics step. `action` is a_t (empty for action-free dynamics).
ObjectState advance(const ObjectState& state, const SyntheticTaskConfig& config,
                    std::span<const double> action);

/// Renders the object into a [C, R, R] frame.
torch::Tensor render(const ObjectState& state, const SyntheticTaskConfig& config);

/// Pixel-rounded centre actually rendered for the state.
std::pair<int, int> rendered_centre(const ObjectState& state);

} // namespace shapeworld

/// Generates (train, test) splits. Sequence i of a split depends only on
/// (config, seed, role, i).
std::pair<DatasetSplit, DatasetSplit> generate_shapeworld_task(const SyntheticTaskConfig& config,
                                                               uint64_t seed);

// -- Frame directories -------------------------------------------------------

struct FrameDirectoryOptions {
    int context_len = 5;
    int horizon = 10;
    int resolution = 64;
    int channels = 1; // 1 = grayscale, 3 = RGB
    std::optional<std::string> action_filename;
    int task_id = 1;
    SplitRole role = SplitRole::Train;
};

/// Loads one subdirectory per sequence (frame_000.png, ...). The first
/// context_len + horizon frames are kept. Throws IngestionError naming the
/// offending sequence.
DatasetSplit load_frame_directory(const std::filesystem::path& root, const FrameDirectoryOptions& options);

/// Writes a split in the format read by load_frame_directory; actions go to
/// `action_filename` (default actions.txt) when present.
void save_frame_directory(const DatasetSplit& split, const std::filesystem::path& root,
                          const std::string& action_filename = "actions.txt");

/// Uniform sampling with replacement. Throws std::invalid_argument on an
/// empty split.
Batch sample_batch(const DatasetSplit& split, int batch_size, std::mt19937_64& rng);
Batch sample_batch(std::span<const VideoSequence> pool, int batch_size, std::mt19937_64& rng);

/// splitmix64-based sub-seed derivation used for per-sequence and
/// per-period streams.
uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0);

} // namespace cpl
