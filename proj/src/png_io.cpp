#include "refseg/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>

#include "refseg/errors.hpp"

namespace refseg {

namespace {

png_image makeImage() {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    return img;
}

}  // namespace

void writeGrayPng(const std::string& path, const GrayImage& image) {
    png_image img = makeImage();
    img.width = static_cast<png_uint_32>(image.w);
    img.height = static_cast<png_uint_32>(image.h);
    img.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
        throw DataError("failed to write PNG " + path + ": " + img.message);
}

GrayImage readGrayPng(const std::string& path) {
    png_image img = makeImage();
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw DataError("failed to read PNG " + path + ": " + img.message);
    img.format = PNG_FORMAT_GRAY;
    GrayImage out;
    out.w = static_cast<int>(img.width);
    out.h = static_cast<int>(img.height);
    out.pixels.resize(static_cast<size_t>(out.w) * out.h);
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr))
        throw DataError("failed to decode PNG " + path + ": " + img.message);
    return out;
}

void writeRgbPng(const std::string& path, const RgbImage& image) {
    png_image img = makeImage();
    img.width = static_cast<png_uint_32>(image.w);
    img.height = static_cast<png_uint_32>(image.h);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
        throw DataError("failed to write PNG " + path + ": " + img.message);
}

RgbImage readRgbPng(const std::string& path) {
    png_image img = makeImage();
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw DataError("failed to read PNG " + path + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    RgbImage out;
    out.w = static_cast<int>(img.width);
    out.h = static_cast<int>(img.height);
    out.pixels.resize(static_cast<size_t>(out.w) * out.h * 3);
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr))
        throw DataError("failed to decode PNG " + path + ": " + img.message);
    return out;
}

Tensor maskFromGray(const GrayImage& image) {
    Tensor mask({image.h, image.w});
    for (int i = 0; i < mask.size(); ++i) {
        const uint8_t v = image.pixels[static_cast<size_t>(i)];
        if (v != 0 && v != 255) throw DataError("non-binary mask value " + std::to_string(v));
        mask[i] = v == 255 ? 1.0 : 0.0;
    }
    return mask;
}

GrayImage grayFromMask(const Tensor& mask) {
    if (mask.rank() != 2) throw ShapeError("grayFromMask: mask must be {H, W}");
    GrayImage out;
    out.h = mask.dim(0);
    out.w = mask.dim(1);
    out.pixels.resize(static_cast<size_t>(out.h) * out.w);
    for (int i = 0; i < mask.size(); ++i) out.pixels[static_cast<size_t>(i)] = mask[i] != 0.0 ? 255 : 0;
    return out;
}

Tensor imageFromRgb(const RgbImage& image) {
    Tensor t({image.h, image.w, 3});
    for (int i = 0; i < t.size(); ++i) t[i] = image.pixels[static_cast<size_t>(i)] / 255.0;
    return t;
}

RgbImage rgbFromImage(const Tensor& image) {
    if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("rgbFromImage: image must be {H, W, 3}");
    RgbImage out;
    out.h = image.dim(0);
    out.w = image.dim(1);
    out.pixels.resize(static_cast<size_t>(image.size()));
    for (int i = 0; i < image.size(); ++i) {
        double v = std::clamp(image[i], 0.0, 1.0);
        out.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

}  // namespace refseg
