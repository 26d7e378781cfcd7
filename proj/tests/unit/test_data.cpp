#include "cpl/data.hpp"
#include "cpl/errors.hpp"
#include "cpl/image_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace cpl;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("cpl_test_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_sequence(const fs::path& dir, int frames, int size = 16) {
    fs::create_directories(dir);
    for (int i = 0; i < frames; ++i) {
        image::Raster r(size, size, 1, static_cast<uint8_t>(i * 10));
        char name[32];
        std::snprintf(name, sizeof name, "frame_%03d.png", i);
        image::write_png(dir / name, r);
    }
}

void write_actions(const fs::path& file, int lines) {
    std::ofstream out(file);
    for (int i = 0; i < lines; ++i) out << "0.5 -1\n";
}

SyntheticTaskConfig small_task(Appearance a, Dynamics d) {
    SyntheticTaskConfig c;
    c.appearance = a;
    c.dynamics = d;
    c.resolution = 32;
    c.n_train = 10;
    c.n_test = 4;
    return c;
}

} // namespace

TEST_CASE("generated splits have the configured sizes and stay in [0,1]") {
    auto [train, test] = generate_shapeworld_task(small_task(Appearance::Square, Dynamics::BounceHorizontal), 0);
    CHECK(train.size() == 10);
    CHECK(test.size() == 4);
    CHECK(train.role == SplitRole::Train);
    CHECK(test.role == SplitRole::Test);
    for (const auto& s : train.sequences) {
        CHECK(s.frames.size(0) == 15);
        CHECK(s.frames.min().item<float>() >= 0.0f);
        CHECK(s.frames.max().item<float>() <= 1.0f);
    }
    train.validate();
    test.validate();
}

TEST_CASE("generation is a pure function of config and seed") {
    auto cfg = small_task(Appearance::Disc, Dynamics::Circular);
    auto [a, _a] = generate_shapeworld_task(cfg, 42);
    auto [b, _b] = generate_shapeworld_task(cfg, 42);
    auto [c, _c] = generate_shapeworld_task(cfg, 43);
    for (size_t i = 0; i < a.size(); ++i) CHECK(torch::equal(a.sequences[i].frames, b.sequences[i].frames));
    CHECK_FALSE(torch::equal(a.sequences[0].frames, c.sequences[0].frames));
}

TEST_CASE("sequence i depends only on its own index") {
    auto cfg = small_task(Appearance::Square, Dynamics::Diagonal);
    auto [few, _f] = generate_shapeworld_task(cfg, 5);
    cfg.n_train = 20;
    auto [many, _m] = generate_shapeworld_task(cfg, 5);
    CHECK(torch::equal(few.sequences[3].frames, many.sequences[3].frames));
}

TEST_CASE("action gain moves the object by gain times the action") {
    SyntheticTaskConfig cfg = small_task(Appearance::Square, Dynamics::ActionGain);
    cfg.action_dim = 2;
    cfg.gain = 2.0;
    shapeworld::ObjectState s;
    s.x = 10;
    s.y = 10;
    s.size = 4;
    std::vector<double> a{1.0, 0.0};
    auto next = shapeworld::advance(s, cfg, a);
    CHECK(next.x == 12);
    CHECK(next.y == 10);
}

TEST_CASE("action gain requires two action dimensions") {
    SyntheticTaskConfig cfg = small_task(Appearance::Square, Dynamics::ActionGain);
    cfg.action_dim = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("the object never leaves the frame") {
    for (auto d : {Dynamics::BounceHorizontal, Dynamics::BounceVertical, Dynamics::Diagonal, Dynamics::Circular,
                   Dynamics::ExpandContract}) {
        auto cfg = small_task(Appearance::Square, d);
        cfg.speed = 5;
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            auto s = shapeworld::initial_state(cfg, rng);
            for (int t = 0; t < 40; ++t) {
                const double half = s.size / 2.0;
                CHECK(s.x - half >= -1e-9);
                CHECK(s.x + half <= cfg.resolution + 1e-9);
                CHECK(s.y - half >= -1e-9);
                CHECK(s.y + half <= cfg.resolution + 1e-9);
                s = shapeworld::advance(s, cfg, {});
            }
        }
    }
}

TEST_CASE("default benchmark tasks differ in appearance and dynamics") {
    auto tasks = default_benchmark(32, 10, 4);
    CHECK(tasks.size() == 3);
    validate_benchmark(tasks);
    for (size_t i = 0; i < tasks.size(); ++i)
        for (size_t j = i + 1; j < tasks.size(); ++j) {
            auto [a, _a] = generate_shapeworld_task(tasks[i], 0);
            auto [b, _b] = generate_shapeworld_task(tasks[j], 0);
            auto ma = stack_sequences(a.sequences).frames.mean({0, 1});
            auto mb = stack_sequences(b.sequences).frames.mean({0, 1});
            CHECK((ma - mb).abs().max().item<float>() > 0.01f);

        }
}

TEST_CASE("default benchmark tasks move along different axes") {
    // Which coordinates change over a rollout: x, y, or both.
    auto signature = [](const SyntheticTaskConfig& t) {
        std::mt19937_64 rng(1);
        auto s = shapeworld::initial_state(t, rng);
        bool dx = false, dy = false;
        for (int i = 0; i < 8; ++i) {
            auto n = shapeworld::advance(s, t, {});
            dx = dx || n.x != s.x;
            dy = dy || n.y != s.y;
            s = n;
        }
        return std::pair{dx, dy};
    };
    auto tasks = default_benchmark(32, 10, 4);
    CHECK(signature(tasks[0]) == std::pair{true, false});
    CHECK(signature(tasks[1]) == std::pair{true, true});
    CHECK(signature(tasks[2]) == std::pair{false, true});
}

TEST_CASE("benchmark validation rejects tasks sharing a dynamics rule") {
    auto tasks = default_benchmark(32, 10, 4);
    tasks[1].dynamics = tasks[0].dynamics;
    CHECK_THROWS_AS(validate_benchmark(tasks), ConfigError);
}

TEST_CASE("written splits reload within 8-bit quantisation") {
    auto cfg = small_task(Appearance::Triangle, Dynamics::BounceVertical);
    cfg.action_dim = 0;
    auto [train, _t] = generate_shapeworld_task(cfg, 9);
    auto root = scratch("roundtrip");
    save_frame_directory(train, root);
    FrameDirectoryOptions o;
    o.resolution = 32;
    auto back = load_frame_directory(root, o);
    REQUIRE(back.size() == train.size());
    for (size_t i = 0; i < back.size(); ++i)
        CHECK((back.sequences[i].frames - train.sequences[i].frames).abs().max().item<float>() <= 1.0f / 255 + 1e-6f);
}

TEST_CASE("action files round-trip with the frames") {
    SyntheticTaskConfig cfg = small_task(Appearance::Square, Dynamics::ActionGain);
    cfg.action_dim = 2;
    cfg.context_len = 2;
    auto [train, _t] = generate_shapeworld_task(cfg, 1);
    auto root = scratch("actions");
    save_frame_directory(train, root);
    FrameDirectoryOptions o;
    o.context_len = 2;
    o.resolution = 32;
    o.action_filename = "actions.txt";
    auto back = load_frame_directory(root, o);
    REQUIRE(back.sequences[0].actions.has_value());
    CHECK(torch::allclose(*back.sequences[0].actions, *train.sequences[0].actions, 1e-6, 1e-6));
}

TEST_CASE("loader accepts three complete sequences") {
    auto root = scratch("three");
    for (int s = 0; s < 3; ++s) write_sequence(root / ("seq_" + std::to_string(s)), 15);
    FrameDirectoryOptions o;
    o.resolution = 16;
    auto split = load_frame_directory(root, o);
    CHECK(split.size() == 3);
    CHECK(split.sequences[0].frames.size(0) == 15);
    CHECK(split.sequences[2].frames[1].max().item<float>() == doctest::Approx(10.0 / 255));
}

TEST_CASE("loader resizes to the configured resolution") {
    auto root = scratch("resize");
    write_sequence(root / "a", 15, 40);
    FrameDirectoryOptions o;
    o.resolution = 16;
    auto split = load_frame_directory(root, o);
    CHECK(split.sequences[0].frames.size(2) == 16);
    CHECK(split.sequences[0].frames.size(3) == 16);
}

TEST_CASE("loader rejects a short sequence and names it") {
    auto root = scratch("short");
    write_sequence(root / "ok", 15);
    write_sequence(root / "stubby", 12);
    FrameDirectoryOptions o;
    o.resolution = 16;
    try {
        load_frame_directory(root, o);
        FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
        CHECK(std::string(e.what()).find("stubby") != std::string::npos);
    }
}

TEST_CASE("loader reports a gap in the frame numbering") {
    auto root = scratch("gap");
    write_sequence(root / "holey", 16);
    fs::remove(root / "holey" / "frame_004.png");
    FrameDirectoryOptions o;
    o.resolution = 16;
    CHECK_THROWS_AS(load_frame_directory(root, o), IngestionError);
}

TEST_CASE("action files need one line per transition") {
    FrameDirectoryOptions o;
    o.resolution = 16;
    o.action_filename = "actions.txt";
    auto good = scratch("act14");
    write_sequence(good / "s", 15);
    write_actions(good / "s" / "actions.txt", 14);
    CHECK(load_frame_directory(good, o).sequences[0].actions->size(0) == 14);

    auto bad = scratch("act13");
    write_sequence(bad / "s", 15);
    write_actions(bad / "s" / "actions.txt", 13);
    CHECK_THROWS_AS(load_frame_directory(bad, o), IngestionError);
}

TEST_CASE("sample_batch draws the requested number of sequences") {
    auto [train, _t] = generate_shapeworld_task(small_task(Appearance::Square, Dynamics::BounceHorizontal), 0);
    std::mt19937_64 rng(0);
    CHECK(sample_batch(train, 16, rng).size() == 16);
    CHECK(sample_batch(train, 32, rng).size() == 32);

    DatasetSplit one;
    one.sequences.push_back(train.sequences[3]);
    auto b = sample_batch(one, 1, rng);
    CHECK(torch::equal(b.frames[0], train.sequences[3].frames));
    CHECK(b.task_ids[0].item<int64_t>() == 1);

    DatasetSplit empty;
    CHECK_THROWS_AS(sample_batch(empty, 4, rng), std::invalid_argument);
}

TEST_CASE("split validation catches mixed task ids") {
    auto [train, _t] = generate_shapeworld_task(small_task(Appearance::Square, Dynamics::BounceHorizontal), 0);
    train.sequences[2].task_id = 5;
    CHECK_THROWS_AS(train.validate(), ShapeError);
}

TEST_CASE("derived seeds differ per component") {
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
}
