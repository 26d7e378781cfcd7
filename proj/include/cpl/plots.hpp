#pragma once

// PNG renderings of evaluation results. Plots carry no text; the matching
// CSV holds the numbers.

#include "cpl/image_io.hpp"
#include "cpl/metrics.hpp"

#include <filesystem>

namespace cpl::plots {

/// One panel per period, one bar per task, bar height = PSNR scaled to
/// [0, max_psnr] (Fig. 3 layout).
image::Raster psnr_bars(const EvalMatrix& matrix, double max_psnr = 40.0);

/// periods x tasks grid, cell shade = PSNR in [min_psnr, max_psnr].
image::Raster psnr_heatmap(const EvalMatrix& matrix, double min_psnr = 10.0, double max_psnr = 40.0);

/// Top row: ground truth, bottom row: prediction. Both [L, C, H, W].
image::Raster frame_strip(const torch::Tensor& truth, const torch::Tensor& prediction, int gap = 2);

void write_eval_plots(const EvalMatrix& matrix, const std::filesystem::path& directory, const std::string& stem);

} // namespace cpl::plots
