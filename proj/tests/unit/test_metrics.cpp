#include "cpl/errors.hpp"
#include "cpl/metrics.hpp"
#include "cpl/world_model.hpp"

#include "../support/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

namespace {

oracle::Frame to_frame(const torch::Tensor& t) {
    auto d = t.to(torch::kDouble).contiguous();
    oracle::Frame f;
    f.c = static_cast<int>(d.size(0));
    f.h = static_cast<int>(d.size(1));
    f.w = static_cast<int>(d.size(2));
    f.v.assign(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
    return f;
}

} // namespace

TEST_CASE("psnr of identical frames is capped at 100 dB") {
    auto x = torch::rand({1, 16, 16});
    CHECK(cpl::psnr_frame(x, x) == doctest::Approx(100.0));
    CHECK(cpl::psnr(x.unsqueeze(0), x.unsqueeze(0)) == doctest::Approx(100.0));
}

TEST_CASE("psnr of a uniform 0.1 error is 20 dB") {
    auto x = torch::full({1, 16, 16}, 0.5, torch::kDouble);
    CHECK(cpl::psnr_frame(x, x + 0.1) == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("ssim of identical frames is 1") {
    auto x = torch::rand({1, 16, 16});
    CHECK(cpl::ssim_frame(x, x) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim rejects frames smaller than the window") {
    auto x = torch::rand({1, 8, 8});
    CHECK_THROWS_AS(cpl::ssim_frame(x, x), cpl::ShapeError);
}

TEST_CASE("psnr averages per frame before averaging over the sequence") {
    auto t = torch::full({2, 1, 12, 12}, 0.5, torch::kDouble);
    auto p = t.clone();
    p[0] += 0.1;  // 20 dB
    p[1] += 0.01; // 40 dB
    CHECK(cpl::psnr(p, t) == doctest::Approx(30.0).epsilon(1e-9));
}

TEST_CASE("psnr and ssim agree with the loop reference on random pairs") {
    auto gen = cpl::make_generator(11);
    double worst_psnr = 0.0, worst_ssim = 0.0;
    for (int i = 0; i < 20; ++i) {
        auto a = torch::rand({1, 16, 16}, gen, torch::kDouble);
        auto b = (a + 0.2 * torch::randn({1, 16, 16}, gen, torch::kDouble)).clamp(0.0, 1.0);
        worst_psnr = std::max(worst_psnr, std::abs(cpl::psnr_frame(a, b) - oracle::psnr(to_frame(a), to_frame(b))));
        worst_ssim = std::max(worst_ssim, std::abs(cpl::ssim_frame(a, b) - oracle::ssim(to_frame(a), to_frame(b))));
    }
    CHECK(worst_psnr <= 1e-6);
    CHECK(worst_ssim <= 1e-4);
}

TEST_CASE("ssim is symmetric and bounded") {
    auto gen = cpl::make_generator(5);
    for (int i = 0; i < 10; ++i) {
        auto a = torch::rand({1, 14, 14}, gen, torch::kDouble);
        auto b = torch::rand({1, 14, 14}, gen, torch::kDouble);
        const double ab = cpl::ssim_frame(a, b);
        CHECK(ab == doctest::Approx(cpl::ssim_frame(b, a)).epsilon(1e-12));
        CHECK(ab <= 1.0 + 1e-12);
        CHECK(ab >= -1.0 - 1e-12);
    }
}

TEST_CASE("EvalMatrix indexes periods and tasks from one") {
    cpl::EvalMatrix m;
    m.num_tasks = 2;
    m.append_row({{20, 0.5, 1}, {10, 0.2, 0}});
    m.append_row({{18, 0.4, 1}, {25, 0.7, 1}});
    CHECK(m.at(1, 2).psnr == 10);
    CHECK(m.mean_psnr(2) == doctest::Approx(21.5));
    CHECK(m.final_mean_psnr() == doctest::Approx(21.5));
    CHECK(cpl::forgetting_gap(m, 1) == doctest::Approx(2.0));
    CHECK(cpl::forgetting_gap(m, 2) == doctest::Approx(0.0));
    CHECK_THROWS_AS(m.append_row({{1, 1, 1}}), cpl::ShapeError);
    CHECK_THROWS_AS(m.at(3, 1), std::out_of_range);
}

TEST_CASE("a single-row matrix has zero forgetting") {
    cpl::EvalMatrix m;
    m.num_tasks = 3;
    m.append_row({{20, 0.5, 1}, {10, 0.2, 0}, {12, 0.3, 0}});
    CHECK(cpl::forgetting_gap(m, 3) == 0.0);
}

TEST_CASE("EvalMatrix CSV round-trips at the printed precision") {
    cpl::EvalMatrix m;
    m.num_tasks = 2;
    m.append_row({{20.123456, 0.5, 1}, {10.5, 0.25, 0.5}});
    const auto csv = m.to_csv();
    CHECK(csv.rfind("period,task,psnr,ssim,inference_accuracy\n", 0) == 0);
    auto back = cpl::EvalMatrix::from_csv(csv);
    REQUIRE(back.num_tasks == 2);
    REQUIRE(back.rows.size() == 1);
    CHECK(back.at(1, 1).psnr == doctest::Approx(20.123456));
    CHECK(back.to_csv() == csv);
}
