#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elm/errors.hpp"
#include "elm/real.hpp"

namespace elm {

// Dense H x W x C pixel grid, values in [0,1], row-major with channels last.
struct Image {
    int H = 0, W = 0, C = 1;
    std::vector<real> pixels;

    Image() = default;
    Image(int h, int w, int c) : H(h), W(w), C(c), pixels(static_cast<std::size_t>(h) * w * c, 0) {}

    real& at(int r, int c, int ch = 0) {
        return pixels[(static_cast<std::size_t>(r) * W + c) * C + ch];
    }
    real at(int r, int c, int ch = 0) const {
        return pixels[(static_cast<std::size_t>(r) * W + c) * C + ch];
    }
    std::size_t numel() const { return pixels.size(); }
};

struct ImageSample {
    Image image;
    int class_id = 0;
    std::uint64_t seed = 0;
};

// Binary PGM (P5, C=1) / PPM (P6, C=3), maxval 255, round-to-nearest
// quantization of [0,1] pixels. Parse failures report the byte offset.
void write_image(const std::string& path, const Image& img);
Image read_image(const std::string& path);

}  // namespace elm
