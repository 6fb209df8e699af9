#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace speede {

// Row-major RGB float image with values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> data;  // width * height * 3

    Image() = default;
    Image(int w, int h, float fill = 0.0f)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    float& at(int x, int y, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    float at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

// 8-bit RGB PNG. Values are clamped to [0,1] and rounded on write.
void write_png(const Image& image, const std::string& path);
Image read_png(const std::string& path);

// Portable float map, little-endian (negative scale). "PF" when channels == 3,
// "Pf" for single-channel buffers.
void write_pfm(const std::vector<float>& data, int width, int height, int channels,
               const std::string& path);
std::vector<float> read_pfm(const std::string& path, int& width, int& height, int& channels);

}  // namespace speede
