#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refseg/tensor.hpp"

namespace refseg {

struct GrayImage {
    int h = 0, w = 0;
    std::vector<uint8_t> pixels;  // h*w
};

struct RgbImage {
    int h = 0, w = 0;
    std::vector<uint8_t> pixels;  // h*w*3
};

void writeGrayPng(const std::string& path, const GrayImage& image);
GrayImage readGrayPng(const std::string& path);
void writeRgbPng(const std::string& path, const RgbImage& image);
RgbImage readRgbPng(const std::string& path);

// Masks travel as 8-bit gray PNGs with 0 = background, 255 = anomaly; any
// other value is rejected.
Tensor maskFromGray(const GrayImage& image);
GrayImage grayFromMask(const Tensor& mask);

Tensor imageFromRgb(const RgbImage& image);  // to {h, w, 3} in [0, 1]
RgbImage rgbFromImage(const Tensor& image);  // rounds to 8-bit

}  // namespace refseg
