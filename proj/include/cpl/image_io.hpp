#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cpl::image {

/// 8-bit raster, row-major, interleaved channels.
struct Raster {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<uint8_t> pixels;

    Raster() = default;
    Raster(int w, int h, int c, uint8_t fill = 0)
        : width(w), height(h), channels(c), pixels(static_cast<size_t>(w) * h * c, fill) {}

    uint8_t* at(int x, int y) { return pixels.data() + (static_cast<size_t>(y) * width + x) * channels; }
    void fill_rect(int x0, int y0, int x1, int y1, const uint8_t* colour);
    /// Copies a [C, H, W] float frame in [0,1] into the raster at (x0, y0).
    void blit(const torch::Tensor& frame, int x0, int y0);
};

/// Decodes any PNG libpng understands into `channels` (1 or 3) channels.
Raster read_png(const std::filesystem::path& path, int channels);
void write_png(const std::filesystem::path& path, const Raster& raster);

/// [C, H, W] float in [0,1] <-> 8-bit raster (round to nearest).
Raster to_raster(const torch::Tensor& frame);
torch::Tensor to_tensor(const Raster& raster);

} // namespace cpl::image
