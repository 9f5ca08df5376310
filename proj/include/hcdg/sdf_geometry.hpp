#pragma once

// Signed-distance boundary targets, the smooth Heaviside transform, and the
// Dice / average-surface-distance evaluation metrics.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "hcdg/image.hpp"

namespace hcdg::sdf {

// Per-channel signed distance map in [-1, 1], channel-planar like BinaryMask.
struct BoundaryMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

// Exact squared Euclidean distance from every pixel to the nearest pixel
// where `feature` is nonzero (two-pass lower-envelope transform). Pixels with
// no feature anywhere get +infinity.
std::vector<double> squared_distance_transform(std::span<const uint8_t> feature, int height, int width);

// Inside pixels carry +d_in / max(d_in), outside pixels -d_out / max(d_out),
// where d is the Euclidean distance to the nearest pixel of opposite label.
// An all-background channel is -1 everywhere, an all-foreground channel +1.
BoundaryMap mask_to_boundary(const BinaryMask& mask);

// 1 / (1 + exp(-delta * x)), elementwise.
double heaviside(double x, double delta);
std::vector<double> heaviside(std::span<const double> x, double delta);

// 2|P n G| / (|P| + |G|) per channel; 1.0 when both are empty.
std::vector<double> dice(const BinaryMask& pred, const BinaryMask& gt);
double dice_channel(std::span<const uint8_t> pred, std::span<const uint8_t> gt);

// Foreground pixels with a 4-neighbour that is background or outside the image.
std::vector<uint8_t> surface_pixels(std::span<const uint8_t> plane, int height, int width);

// Symmetric average surface distance in pixels per channel. nullopt when either
// channel is empty.
std::vector<std::optional<double>> asd(const BinaryMask& pred, const BinaryMask& gt);
std::optional<double> asd_channel(std::span<const uint8_t> pred, std::span<const uint8_t> gt,
                                  int height, int width);

}  // namespace hcdg::sdf
