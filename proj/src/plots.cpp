#include "cpl/plots.hpp"

#include "cpl/errors.hpp"

#include <algorithm>
#include <array>

namespace cpl::plots {

namespace {

constexpr std::array<std::array<uint8_t, 3>, 6> kPalette{{
    {{31, 119, 180}}, {{255, 127, 14}}, {{44, 160, 44}}, {{214, 39, 40}}, {{148, 103, 189}}, {{140, 86, 75}},
}};

const uint8_t* task_colour(int task) { return kPalette[static_cast<size_t>(task) % kPalette.size()].data(); }

} // namespace

image::Raster psnr_bars(const EvalMatrix& matrix, double max_psnr) {
    const int periods = static_cast<int>(matrix.rows.size());
    const int K = std::max(1, matrix.num_tasks);
    constexpr int bar = 12, pad = 4, panel_gap = 16, height = 160, margin = 8;
    const int panel = K * bar + (K - 1) * pad;
    const int width = 2 * margin + std::max(1, periods) * panel + std::max(0, periods - 1) * panel_gap;
    image::Raster r(width, height + 2 * margin, 3, 255);
    const uint8_t grid[3] = {220, 220, 220};
    const uint8_t axis[3] = {0, 0, 0};
    for (int g = 1; g <= 4; ++g) {
        const int y = margin + height - g * height / 4;
        r.fill_rect(margin, y, width - margin, y + 1, grid);
    }
    r.fill_rect(margin, margin + height, width - margin, margin + height + 1, axis);
    for (int p = 0; p < periods; ++p) {
        const int x0 = margin + p * (panel + panel_gap);
        for (int k = 0; k < static_cast<int>(matrix.rows[static_cast<size_t>(p)].size()); ++k) {
            const double v = std::clamp(matrix.rows[static_cast<size_t>(p)][static_cast<size_t>(k)].psnr / max_psnr, 0.0, 1.0);
            const int h = static_cast<int>(v * height);
            const int x = x0 + k * (bar + pad);
            r.fill_rect(x, margin + height - h, x + bar, margin + height, task_colour(k));
        }
    }
    return r;
}

image::Raster psnr_heatmap(const EvalMatrix& matrix, double min_psnr, double max_psnr) {
    const int periods = static_cast<int>(matrix.rows.size());
    const int K = std::max(1, matrix.num_tasks);
    constexpr int cell = 24;
    image::Raster r(K * cell, std::max(1, periods) * cell, 3, 255);
    for (int p = 0; p < periods; ++p) {
        for (int k = 0; k < static_cast<int>(matrix.rows[static_cast<size_t>(p)].size()); ++k) {
            const double v = std::clamp((matrix.rows[static_cast<size_t>(p)][static_cast<size_t>(k)].psnr - min_psnr) /
                                            (max_psnr - min_psnr),
                                        0.0, 1.0);
            // white (low) to dark blue (high)
            const uint8_t c[3] = {static_cast<uint8_t>(255 - v * 230), static_cast<uint8_t>(255 - v * 180),
                                  static_cast<uint8_t>(255 - v * 80)};
            r.fill_rect(k * cell + 1, p * cell + 1, (k + 1) * cell - 1, (p + 1) * cell - 1, c);
        }
    }
    return r;
}

image::Raster frame_strip(const torch::Tensor& truth, const torch::Tensor& prediction, int gap) {
    if (truth.dim() != 4 || prediction.dim() != 4 || truth.sizes() != prediction.sizes())
        throw ShapeError("frame_strip: truth and prediction must both be [L, C, H, W] of equal shape");
    const int L = static_cast<int>(truth.size(0));
    const int h = static_cast<int>(truth.size(2));
    const int w = static_cast<int>(truth.size(3));
    image::Raster r(L * w + (L - 1) * gap, 2 * h + gap, 3, 255);
    for (int t = 0; t < L; ++t) {
        r.blit(truth[t].clamp(0.0, 1.0), t * (w + gap), 0);
        r.blit(prediction[t].clamp(0.0, 1.0), t * (w + gap), h + gap);
    }
    return r;
}

void write_eval_plots(const EvalMatrix& matrix, const std::filesystem::path& directory, const std::string& stem) {
    std::filesystem::create_directories(directory);
    image::write_png(directory / (stem + "_bars.png"), psnr_bars(matrix));
    image::write_png(directory / (stem + "_heatmap.png"), psnr_heatmap(matrix));
}

} // namespace cpl::plots
