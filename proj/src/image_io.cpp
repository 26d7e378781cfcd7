#include "cpl/image_io.hpp"

#include "cpl/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

namespace cpl::image {

void Raster::fill_rect(int x0, int y0, int x1, int y1, const uint8_t* colour) {
    x0 = std::clamp(x0, 0, width);
    x1 = std::clamp(x1, 0, width);
    y0 = std::clamp(y0, 0, height);
    y1 = std::clamp(y1, 0, height);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            std::copy(colour, colour + channels, at(x, y));
}

void Raster::blit(const torch::Tensor& frame, int x0, int y0) {
    const Raster src = to_raster(frame);
    for (int y = 0; y < src.height && y0 + y < height; ++y) {
        for (int x = 0; x < src.width && x0 + x < width; ++x) {
            const uint8_t* s = src.pixels.data() + (static_cast<size_t>(y) * src.width + x) * src.channels;
            uint8_t* d = at(x0 + x, y0 + y);
            for (int c = 0; c < channels; ++c)
                d[c] = s[src.channels == 1 ? 0 : std::min(c, src.channels - 1)];
        }
    }
}

Raster read_png(const std::filesystem::path& path, int channels) {
    if (channels != 1 && channels != 3)
        throw ConfigError("read_png: channels must be 1 or 3");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw IngestionError("cannot decode " + path.string() + ": " + img.message);
    img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Raster r(static_cast<int>(img.width), static_cast<int>(img.height), channels);
    if (!png_image_finish_read(&img, nullptr, r.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IngestionError("cannot decode " + path.string() + ": " + img.message);
    }
    return r;
}

void write_png(const std::filesystem::path& path, const Raster& raster) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(raster.width);
    img.height = static_cast<png_uint_32>(raster.height);
    img.format = raster.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, raster.pixels.data(), 0, nullptr))
        throw std::runtime_error("cannot write " + path.string() + ": " + img.message);
}

Raster to_raster(const torch::Tensor& frame) {
    TORCH_CHECK(frame.dim() == 3, "to_raster expects [C, H, W]");
    auto f = frame.detach().to(torch::kCPU, torch::kFloat).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8);
    f = f.permute({1, 2, 0}).contiguous();
    Raster r(static_cast<int>(frame.size(2)), static_cast<int>(frame.size(1)), static_cast<int>(frame.size(0)));
    std::copy_n(f.data_ptr<uint8_t>(), r.pixels.size(), r.pixels.data());
    return r;
}

torch::Tensor to_tensor(const Raster& raster) {
    auto t = torch::from_blob(const_cast<uint8_t*>(raster.pixels.data()),
                              {raster.height, raster.width, raster.channels}, torch::kUInt8)
                 .to(torch::kFloat)
                 .div(255.0);
    return t.permute({2, 0, 1}).contiguous();
}

} // namespace cpl::image
