#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace hcdg {

// H x W x C raster of doubles. Storage is channel-planar (c, y, x) so a
// channel is a contiguous H*W block, which is what the FFT and the network
// consume.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  size_t size() const { return data_.size(); }
  size_t plane_size() const { return static_cast<size_t>(h_) * w_; }

  double& at(int c, int y, int x) { return data_[(static_cast<size_t>(c) * h_ + y) * w_ + x]; }
  double at(int c, int y, int x) const { return data_[(static_cast<size_t>(c) * h_ + y) * w_ + x]; }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Image& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }
  bool operator==(const Image& o) const = default;

 private:
  int h_ = 0;
  int w_ = 0;
  int c_ = 0;
  std::vector<double> data_;
};

// {0,1} mask with one plane per foreground class.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, int channels);

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  size_t plane_size() const { return static_cast<size_t>(h_) * w_; }

  uint8_t& at(int c, int y, int x) { return data_[(static_cast<size_t>(c) * h_ + y) * w_ + x]; }
  uint8_t at(int c, int y, int x) const { return data_[(static_cast<size_t>(c) * h_ + y) * w_ + x]; }

  std::span<uint8_t> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const uint8_t> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::vector<uint8_t>& data() { return data_; }
  const std::vector<uint8_t>& data() const { return data_; }

  size_t count(int c) const;
  bool same_shape(const BinaryMask& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }
  bool operator==(const BinaryMask& o) const = default;

 private:
  int h_ = 0;
  int w_ = 0;
  int c_ = 0;
  std::vector<uint8_t> data_;
};

}  // namespace hcdg
