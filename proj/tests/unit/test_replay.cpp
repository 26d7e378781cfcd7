#include "cpl/errors.hpp"
#include "cpl/replay.hpp"

#include "../support/fixtures.hpp"

#include <doctest.h>

#include <limits>
#include <set>

using fixtures::random_split;
using fixtures::tiny_generator;
using fixtures::tiny_model;

namespace {

cpl::TrainSchedule quick_schedule(int iterations = 2) {
    cpl::TrainSchedule s;
    s.iterations = iterations;
    s.iterations_g = iterations;
    s.batch_size = 4;
    s.context_len = 2;
    return s;
}

cpl::RunOptions quick_run(cpl::RunMode mode, uint64_t seed = 1) {
    cpl::RunOptions o;
    o.mode = mode;
    o.seed = seed;
    o.eval.context_len = 2;
    o.eval.horizon = 2;
    o.eval.batch_size = 8;
    return o;
}

std::vector<cpl::DatasetSplit> splits(int K, int n, int action_dim, uint64_t seed, int length = 4) {
    std::vector<cpl::DatasetSplit> out;
    for (int k = 1; k <= K; ++k) out.push_back(random_split(n, length, 16, k, action_dim, seed + k));
    return out;
}

bool same_parameters(torch::nn::Module& a, torch::nn::Module& b) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    for (size_t i = 0; i < pa.size(); ++i)
        if (!torch::equal(pa[i], pb[i])) return false;
    return true;
}

} // namespace

TEST_CASE("retained counts round the fraction up") {
    CHECK(cpl::fraction_count(0.07, 100) == 7);
    CHECK(cpl::fraction_count(1.0, 37) == 37);
    CHECK(cpl::fraction_count(1.0 / 3.0, 300) == 100);
    CHECK(cpl::fraction_count(1.0 / 3.0, 100) == 34);
    CHECK(cpl::fraction_count(0.07, 10) == 1);
}

TEST_CASE("replay volume is split evenly with the remainder up front") {
    CHECK(cpl::split_replay_volume(100, 3) == std::vector<int>{34, 33, 33});
    CHECK(cpl::split_replay_volume(7, 1) == std::vector<int>{7});
    CHECK(cpl::split_replay_volume(2, 3) == std::vector<int>{1, 1, 0});
    for (int total = 0; total < 50; ++total)
        for (int tasks = 1; tasks < 6; ++tasks) {
            auto v = cpl::split_replay_volume(total, tasks);
            int sum = 0;
            for (int x : v) sum += x;
            CHECK(sum == total);
            CHECK(*std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end()) <= 1);
        }
}

TEST_CASE("store_actions keeps seven of a hundred action sequences") {
    auto split = random_split(100, 4, 8, 1, 2, 1);
    std::mt19937_64 rng(0);
    auto buf = cpl::store_actions({}, 1, split, 0.07, rng);
    REQUIRE(buf.count(1) == 7);
    std::set<const void*> distinct;
    for (const auto& a : buf.tasks.at(1).actions) {
        bool found = false;
        for (const auto& s : split.sequences) found = found || torch::equal(*s.actions, a);
        CHECK(found);
        distinct.insert(a.data_ptr());
    }
    CHECK(distinct.size() == 7);
    CHECK(buf.payload_bytes() == 7 * 3 * 2 * sizeof(float));

    auto all = cpl::store_actions(buf, 2, random_split(9, 4, 8, 2, 2, 2), 1.0, rng);
    CHECK(all.count(2) == 9);
    CHECK(all.count(1) == 7);
}

TEST_CASE("action-free buffers hold lengths and no payload") {
    auto split = random_split(30, 5, 8, 1, 0, 1);
    std::mt19937_64 rng(0);
    auto buf = cpl::store_actions({}, 1, split, 0.07, rng);
    CHECK(buf.count(1) == 3);
    CHECK(buf.tasks.at(1).lengths == std::vector<int>{5, 5, 5});
    CHECK(buf.payload_bytes() == 0);
}

TEST_CASE("replay synthesis produces detached sequences of the stored length") {
    torch::manual_seed(0);
    cpl::WorldModel m(tiny_model(2, 2));
    cpl::FrameGenerator g(tiny_generator(2, 2));
    std::mt19937_64 rng(0);
    auto buf = cpl::store_actions({}, 1, random_split(20, 15, 8, 1, 2, 3), 0.1, rng);
    auto r = cpl::synthesize_replay(m, g, buf, 1, 8, 5);
    REQUIRE(r.sequences.size() == 8);
    for (const auto& s : r.sequences) {
        CHECK(s.frames.size(0) == 15);
        CHECK(s.task_id == 1);
        CHECK_FALSE(s.frames.requires_grad());
        CHECK_FALSE(s.frames.grad_fn());
        CHECK(s.actions->size(0) == 14);
    }
    CHECK_THROWS_AS(cpl::synthesize_replay(m, g, buf, 2, 4, 5), cpl::ConfigError);
}

TEST_CASE("replay draws are reproducible from the seed") {
    torch::manual_seed(1);
    cpl::WorldModel m(tiny_model(2));
    cpl::FrameGenerator g(tiny_generator(2));
    std::mt19937_64 rng(0);
    auto buf = cpl::store_actions({}, 1, random_split(20, 6, 8, 1, 0, 3), 0.2, rng);
    auto a = cpl::synthesize_replay(m, g, buf, 1, 5, 9);
    auto b = cpl::synthesize_replay(m, g, buf, 1, 5, 9);
    for (size_t i = 0; i < a.sequences.size(); ++i) CHECK(torch::equal(a.sequences[i].frames, b.sequences[i].frames));
}

TEST_CASE("zero iterations leave both models unchanged") {
    torch::manual_seed(2);
    cpl::WorldModel m(tiny_model(1, 0, 16));
    cpl::FrameGenerator g(tiny_generator(1, 0, 16));
    auto m0 = cpl::clone_model(m);
    auto g0 = cpl::clone_generator(g);
    auto logs = cpl::train_first_task(m, g, random_split(6, 4, 16, 1, 0, 1), quick_schedule(0), {}, 0);
    CHECK(logs.world_model.empty());
    CHECK(logs.generator.empty());
    CHECK(same_parameters(*m, *m0));
    CHECK(same_parameters(*g, *g0));
}

TEST_CASE("first-task training logs one entry per step") {
    torch::manual_seed(3);
    cpl::WorldModel m(tiny_model(1, 0, 16));
    cpl::FrameGenerator g(tiny_generator(1, 0, 16));
    auto s = quick_schedule(3);
    s.iterations_g = 2;
    auto logs = cpl::train_first_task(m, g, random_split(6, 4, 16, 1, 0, 1), s, {}, 0);
    CHECK(logs.world_model.size() == 3);
    CHECK(logs.generator.size() == 2);
    CHECK(logs.world_model.back().iteration == 3);
    CHECK(logs.world_model.back().task == 1);
}

TEST_CASE("task two replays exactly one previous task") {
    torch::manual_seed(4);
    cpl::WorldModel m(tiny_model(2, 0, 16));
    cpl::FrameGenerator g(tiny_generator(2, 0, 16));
    auto data = splits(2, 30, 0, 1);
    std::mt19937_64 rng(0);
    auto buf = cpl::store_actions({}, 1, data[0], 0.07, rng);
    auto r = cpl::train_task(m, g, data[1], buf, quick_schedule(1), {}, 0);
    REQUIRE(r.replay_counts.size() == 1);
    CHECK(r.replay_counts.at(1) == 10);
}

TEST_CASE("task four with 300 sequences replays 100, split 34/33/33") {
    torch::manual_seed(5);
    cpl::WorldModel m(tiny_model(4, 0, 16));
    cpl::FrameGenerator g(tiny_generator(4, 0, 16));
    cpl::ActionBuffer buf;
    std::mt19937_64 rng(0);
    for (int k = 1; k <= 3; ++k) buf = cpl::store_actions(buf, k, random_split(20, 3, 16, k, 0, k), 0.07, rng);
    auto split = random_split(300, 3, 16, 4, 0, 9);
    auto r = cpl::train_task(m, g, split, buf, quick_schedule(0), {}, 0);
    CHECK(r.replay_counts.at(1) == 34);
    CHECK(r.replay_counts.at(2) == 33);
    CHECK(r.replay_counts.at(3) == 33);
    size_t total = 0;
    for (const auto& d : r.replays) total += d.sequences.size();
    CHECK(total == 100);
}

TEST_CASE("replay comes from frozen copies taken before training") {
    torch::manual_seed(6);
    cpl::WorldModel m(tiny_model(2, 0, 16));
    cpl::FrameGenerator g(tiny_generator(2, 0, 16));
    auto m0 = cpl::clone_model(m);
    auto g0 = cpl::clone_generator(g);
    auto data = splits(2, 12, 0, 2);
    std::mt19937_64 rng(0);
    auto buf = cpl::store_actions({}, 1, data[0], 0.25, rng);
    auto sched = quick_schedule(3);
    sched.regenerate_replay = true;
    auto r = cpl::train_task(m, g, data[1], buf, sched, {}, 77);
    CHECK_FALSE(same_parameters(*m, *m0));
    // Re-synthesising from the untouched copies reproduces the replay.
    auto again = cpl::synthesize_replay(m0, g0, buf, 1, r.replay_counts.at(1), cpl::derive_seed(77, 10, 1), 1, 1);
    REQUIRE(again.sequences.size() == r.replays.front().sequences.size());
    for (size_t i = 0; i < again.sequences.size(); ++i)
        CHECK(torch::equal(again.sequences[i].frames, r.replays.front().sequences[i].frames));
}

TEST_CASE("the loss on a mixed batch decomposes over task subsets") {
    torch::manual_seed(7);
    cpl::WorldModel m(tiny_model(2));
    auto x = fixtures::random_frames(4, 5, 8, 3);
    auto ids = fixtures::labels({1, 2, 1, 2});
    auto eps = torch::randn({4, 4, 4});
    cpl::LatentNoise all(eps);
    auto mixed = cpl::elbo_loss(m, x, std::nullopt, ids, {3, 1e-4, false}, all);
    double parts = 0.0;
    for (int k = 1; k <= 2; ++k) {
        auto idx = torch::nonzero(ids == k).view(-1);
        cpl::LatentNoise sub(eps.index_select(1, idx));
        auto r = cpl::elbo_loss(m, x.index_select(0, idx), std::nullopt, ids.index_select(0, idx), {3, 1e-4, false}, sub);
        parts += r.loss.item<double>() * static_cast<double>(idx.size(0));
    }
    CHECK(mixed.loss.item<double>() * 4 == doctest::Approx(parts).epsilon(1e-6));
}

TEST_CASE("a one-task run never replays") {
    auto data = splits(1, 8, 0, 3);
    auto st = cpl::run_sequence(data, data, tiny_model(1, 0, 16), tiny_generator(1, 0, 16), quick_schedule(1),
                                quick_run(cpl::RunMode::CplFull));
    CHECK(st.matrix.rows.size() == 1);
    CHECK(st.buffer.count(1) == 1);
}

TEST_CASE("between tasks only the action buffer is retained") {
    auto data = splits(3, 100, 2, 4);
    auto st = cpl::run_sequence(data, data, tiny_model(3, 2, 16), tiny_generator(3, 2, 16), quick_schedule(0),
                                quick_run(cpl::RunMode::CplFull));
    auto audit = cpl::audit_rehearsal(st);
    CHECK(audit.action_sequences == 21);
    CHECK(audit.frame_tensors == 0);
    CHECK(audit.frame_bytes == 0);
    CHECK(audit.action_bytes == 21 * 3 * 2 * sizeof(float));
    for (int k = 1; k <= 3; ++k) CHECK(st.buffer.count(k) == 7);
}

TEST_CASE("runs produce one evaluation row per training period") {
    auto data = splits(3, 6, 0, 5);
    auto sched = quick_schedule(1);
    auto full = cpl::run_sequence(data, data, tiny_model(3, 0, 16), tiny_generator(3, 0, 16), sched,
                                  quick_run(cpl::RunMode::CplFull));
    CHECK(full.matrix.rows.size() == 3);
    CHECK(full.matrix.rows[0].size() == 3);
    auto joint = cpl::run_sequence(data, data, tiny_model(3, 0, 16), tiny_generator(3, 0, 16), sched,
                                   quick_run(cpl::RunMode::Joint));
    CHECK(joint.matrix.rows.size() == 1);
    CHECK(joint.model->config().num_tasks == 1);
    auto base = cpl::run_sequence(data, data, tiny_model(3, 0, 16), tiny_generator(3, 0, 16), sched,
                                  quick_run(cpl::RunMode::SequentialBase));
    CHECK(base.matrix.rows.size() == 3);
    CHECK(base.buffer.total_sequences() == 0);
    CHECK(base.model->config().num_tasks == 1);
}

TEST_CASE("an interrupted run resumes to the same result") {
    auto data = splits(3, 6, 0, 6);
    auto sched = quick_schedule(2);
    auto full = cpl::run_sequence(data, data, tiny_model(3, 0, 16), tiny_generator(3, 0, 16), sched,
                                  quick_run(cpl::RunMode::CplFull, 5));
    auto opts = quick_run(cpl::RunMode::CplFull, 5);
    opts.stop_after_periods = 1;
    auto half = cpl::run_sequence(data, data, tiny_model(3, 0, 16), tiny_generator(3, 0, 16), sched, opts);
    REQUIRE(half.completed_periods == 1);
    auto rest = cpl::run_sequence(data, data, tiny_model(3, 0, 16), tiny_generator(3, 0, 16), sched,
                                  quick_run(cpl::RunMode::CplFull, 5), std::move(half));
    CHECK(rest.matrix.to_csv() == full.matrix.to_csv());
    CHECK(same_parameters(*rest.model, *full.model));
}

TEST_CASE("a non-finite loss stops training and hands over the last finite state") {
    auto data = splits(2, 6, 0, 7);
    data[1].sequences[0].frames[1].fill_(std::numeric_limits<float>::quiet_NaN());
    for (auto& s : data[1].sequences) s.frames = data[1].sequences[0].frames;
    bool called = false;
    auto on_div = [&](const cpl::RunState& st, int period) {
        called = true;
        CHECK(period == 2);
        for (const auto& p : st.model->parameters()) CHECK(torch::isfinite(p).all().item<bool>());
    };
    CHECK_THROWS_AS(cpl::run_sequence(data, data, tiny_model(2, 0, 16), tiny_generator(2, 0, 16), quick_schedule(2),
                                      quick_run(cpl::RunMode::CplFull), std::nullopt, {}, on_div),
                    cpl::NumericalError);
    CHECK(called);
}

TEST_CASE("schedule validation") {
    auto s = quick_schedule();
    s.replay_ratio = 0.0;
    CHECK_THROWS_AS(s.validate(), cpl::ConfigError);
    s = quick_schedule();
    s.batch_size = 0;
    CHECK_THROWS_AS(s.validate(), cpl::ConfigError);
    CHECK(cpl::TrainSchedule{}.iterations == 30000);
    CHECK(cpl::TrainSchedule{}.generator_iterations() == 3000);
    CHECK(cpl::TrainSchedule::desk_scale().iterations == 2000);
    CHECK(cpl::TrainSchedule::desk_scale().batch_size == 16);
}
