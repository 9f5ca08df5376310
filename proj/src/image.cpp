#include "hcdg/image.hpp"

#include <algorithm>
#include <stdexcept>

namespace hcdg {

Image::Image(int height, int width, int channels, double fill)
    : h_(height), w_(width), c_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw std::invalid_argument("Image dimensions must be positive");
  }
  data_.assign(static_cast<size_t>(height) * width * channels, fill);
}

BinaryMask::BinaryMask(int height, int width, int channels)
    : h_(height), w_(width), c_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw std::invalid_argument("BinaryMask dimensions must be positive");
  }
  data_.assign(static_cast<size_t>(height) * width * channels, 0);
}

size_t BinaryMask::count(int c) const {
  auto p = plane(c);
  return static_cast<size_t>(std::count(p.begin(), p.end(), uint8_t{1}));
}

}  // namespace hcdg
