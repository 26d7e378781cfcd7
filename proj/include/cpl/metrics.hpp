#pragma once

// Frame quality metrics and the per-period evaluation matrix.

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace cpl {

inline constexpr double kPsnrCap = 100.0;

/// PSNR of one frame [C, H, W] (or any equal-shape pair), in dB, capped.
double psnr_frame(const torch::Tensor& pred, const torch::Tensor& target, double data_range = 1.0,
                  double cap = kPsnrCap);

/// Mean PSNR over frames, then over sequences. Accepts [L, C, H, W] or
/// [B, L, C, H, W]. Throws ShapeError on a shape mismatch.
double psnr(const torch::Tensor& pred, const torch::Tensor& target, double data_range = 1.0, double cap = kPsnrCap);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

/// Mean of the SSIM map over valid window positions, averaged over channels.
/// Throws ShapeError if the frame is smaller than the window.
double ssim_frame(const torch::Tensor& pred, const torch::Tensor& target, const SsimOptions& options = {});

/// Mean SSIM over frames, then over sequences; shapes as for psnr().
double ssim(const torch::Tensor& pred, const torch::Tensor& target, const SsimOptions& options = {});

struct EvalEntry {
    double psnr = 0.0;
    double ssim = 0.0;
    double inference_accuracy = 0.0;
};

/// rows[j][i]: scores on task i's test set after training period j.
struct EvalMatrix {
    int num_tasks = 0;
    std::vector<std::vector<EvalEntry>> rows;

    void append_row(std::vector<EvalEntry> row);
    const EvalEntry& at(int period, int task) const; // 1-based
    double mean_psnr(int period) const;               // 1-based
    double mean_ssim(int period) const;
    double final_mean_psnr() const { return mean_psnr(static_cast<int>(rows.size())); }

    /// CSV columns: period,task,psnr,ssim,inference_accuracy (fixed 6-decimal format).
    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
    static EvalMatrix from_csv(const std::string& text);
};

/// entries[i][i].psnr - entries[last][i].psnr, for 1-based task i.
double forgetting_gap(const EvalMatrix& matrix, int task);

} // namespace cpl
