#include "speede/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "speede/errors.hpp"

namespace speede {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const Image& image, const std::string& path) {
    if (image.width <= 0 || image.height <= 0) throw IoError("write_png: empty image: " + path);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("write_png: cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("write_png: libpng init failed: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("write_png: encode error: " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * 3);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(x, y, c), 0.0f, 1.0f);
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("read_png: cannot open: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("read_png: libpng init failed: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("read_png: decode error: " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    // normalize any input to 8-bit RGB
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));

    Image image(width, height);
    std::vector<unsigned char> row(png_get_rowbytes(png, info));
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                image.at(x, y, c) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0f;
            }
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_pfm(const std::vector<float>& data, int width, int height, int channels,
               const std::string& path) {
    if (channels != 1 && channels != 3) throw IoError("write_pfm: channels must be 1 or 3");
    if (data.size() != static_cast<std::size_t>(width) * height * channels)
        throw IoError("write_pfm: size mismatch: " + path);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pfm: cannot open for writing: " + path);
    out << (channels == 3 ? "PF" : "Pf") << "\n" << width << " " << height << "\n-1.0\n";
    // PFM scanlines run bottom-to-top
    for (int y = height - 1; y >= 0; --y) {
        out.write(reinterpret_cast<const char*>(&data[static_cast<std::size_t>(y) * width * channels]),
                  static_cast<std::streamsize>(width) * channels * sizeof(float));
    }
    if (!out) throw IoError("write_pfm: write failed: " + path);
}

std::vector<float> read_pfm(const std::string& path, int& width, int& height, int& channels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_pfm: cannot open: " + path);
    std::string magic;
    double scale = 0.0;
    in >> magic >> width >> height >> scale;
    if (!in || (magic != "PF" && magic != "Pf") || width <= 0 || height <= 0)
        throw IoError("read_pfm: malformed header: " + path);
    if (scale > 0) throw IoError("read_pfm: big-endian PFM not supported: " + path);
    in.get();  // single whitespace after the scale line
    channels = (magic == "PF") ? 3 : 1;
    std::vector<float> data(static_cast<std::size_t>(width) * height * channels);
    for (int y = height - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(&data[static_cast<std::size_t>(y) * width * channels]),
                static_cast<std::streamsize>(width) * channels * sizeof(float));
    }
    if (!in) throw IoError("read_pfm: truncated payload: " + path);
    return data;
}

}  // namespace speede
