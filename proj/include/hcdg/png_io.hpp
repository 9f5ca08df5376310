#pragma once

// 8-bit PNG persistence for images and class masks.

#include <cstdint>
#include <filesystem>

#include "hcdg/image.hpp"

namespace hcdg::png {

// Nearest 8-bit level of v in [0, 1] (values outside are clamped).
uint8_t to_byte(double v);
inline double from_byte(uint8_t b) { return b / 255.0; }

// Rounds every value of the image onto the 8-bit grid {k / 255}.
void quantize(Image& img);

// 1-channel images are written as grayscale, 3-channel images as RGB.
void write_image(const std::filesystem::path& path, const Image& img);
Image read_image(const std::filesystem::path& path);

// Grayscale byte per pixel with bit c set when class c is present.
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_mask(const std::filesystem::path& path, int channels);

}  // namespace hcdg::png
