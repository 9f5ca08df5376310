#include "hcdg/sdf_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hcdg::sdf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform of a sampled function (Felzenszwalb &
// Huttenlocher lower envelope of parabolas). Inputs are integers or +inf, so
// all arithmetic on finite values is exact in double precision.
void dt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
          (2.0 * (q - p));
      if (s <= z[k]) {
        --k;
        if (k < 0) break;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = (k == 0) ? -kInf : s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) d[q] = kInf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double diff = static_cast<double>(q - v[j]);
    d[q] = diff * diff + f[v[j]];
  }
}

void check_same(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask shape mismatch");
}

}  // namespace

std::vector<double> squared_distance_transform(std::span<const uint8_t> feature, int height, int width) {
  const size_t n = static_cast<size_t>(height) * width;
  if (feature.size() != n) throw std::invalid_argument("squared_distance_transform: size mismatch");
  std::vector<double> grid(n);
  for (size_t i = 0; i < n; ++i) grid[i] = feature[i] ? 0.0 : kInf;

  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> col_in(height), col_out(height);
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) col_in[y] = grid[static_cast<size_t>(y) * width + x];
    dt_1d(col_in.data(), col_out.data(), height, v, z);
    for (int y = 0; y < height; ++y) grid[static_cast<size_t>(y) * width + x] = col_out[y];
  }
  std::vector<double> row_out(width);
  for (int y = 0; y < height; ++y) {
    double* row = grid.data() + static_cast<size_t>(y) * width;
    dt_1d(row, row_out.data(), width, v, z);
    std::copy(row_out.begin(), row_out.end(), row);
  }
  return grid;
}

BoundaryMap mask_to_boundary(const BinaryMask& mask) {
  BoundaryMap out;
  out.height = mask.height();
  out.width = mask.width();
  out.channels = mask.channels();
  const size_t n = mask.plane_size();
  out.data.resize(n * out.channels);

  std::vector<uint8_t> inverse(n);
  for (int c = 0; c < mask.channels(); ++c) {
    auto plane = mask.plane(c);
    double* dst = out.data.data() + c * n;
    const size_t fg = mask.count(c);
    if (fg == 0 || fg == n) {
      std::fill(dst, dst + n, fg == 0 ? -1.0 : 1.0);
      continue;
    }
    for (size_t i = 0; i < n; ++i) inverse[i] = plane[i] ? 0 : 1;
    // Inside pixels: distance to the nearest background pixel, and vice versa.
    const auto to_bg = squared_distance_transform(inverse, mask.height(), mask.width());
    const auto to_fg = squared_distance_transform(plane, mask.height(), mask.width());
    double max_in = 0.0;
    double max_out = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (plane[i]) {
        dst[i] = std::sqrt(to_bg[i]);
        max_in = std::max(max_in, dst[i]);
      } else {
        dst[i] = std::sqrt(to_fg[i]);
        max_out = std::max(max_out, dst[i]);
      }
    }
    for (size_t i = 0; i < n; ++i) dst[i] = plane[i] ? dst[i] / max_in : -dst[i] / max_out;
  }
  return out;
}

double heaviside(double x, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("heaviside: delta must be positive");
  return 1.0 / (1.0 + std::exp(-delta * x));
}

std::vector<double> heaviside(std::span<const double> x, double delta) {
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [delta](double v) { return heaviside(v, delta); });
  return out;
}

double dice_channel(std::span<const uint8_t> pred, std::span<const uint8_t> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("dice: size mismatch");
  size_t inter = 0, p = 0, g = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    p += pred[i];
    g += gt[i];
    inter += pred[i] & gt[i];
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

std::vector<double> dice(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  std::vector<double> out(pred.channels());
  for (int c = 0; c < pred.channels(); ++c) out[c] = dice_channel(pred.plane(c), gt.plane(c));
  return out;
}

std::vector<uint8_t> surface_pixels(std::span<const uint8_t> plane, int height, int width) {
  std::vector<uint8_t> surf(plane.size(), 0);
  auto fg = [&](int y, int x) {
    if (y < 0 || y >= height || x < 0 || x >= width) return false;
    return plane[static_cast<size_t>(y) * width + x] != 0;
  };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (!fg(y, x)) continue;
      if (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)) {
        surf[static_cast<size_t>(y) * width + x] = 1;
      }
    }
  }
  return surf;
}

std::optional<double> asd_channel(std::span<const uint8_t> pred, std::span<const uint8_t> gt,
                                  int height, int width) {
  if (pred.size() != gt.size()) throw std::invalid_argument("asd: size mismatch");
  const auto sp = surface_pixels(pred, height, width);
  const auto sg = surface_pixels(gt, height, width);
  const bool pred_empty = std::none_of(sp.begin(), sp.end(), [](uint8_t v) { return v != 0; });
  const bool gt_empty = std::none_of(sg.begin(), sg.end(), [](uint8_t v) { return v != 0; });
  if (pred_empty || gt_empty) return std::nullopt;

  const auto dist_to_gt = squared_distance_transform(sg, height, width);
  const auto dist_to_pred = squared_distance_transform(sp, height, width);
  auto directed = [](const std::vector<uint8_t>& from, const std::vector<double>& d2) {
    double sum = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < from.size(); ++i) {
      if (!from[i]) continue;
      sum += std::sqrt(d2[i]);
      ++count;
    }
    return sum / static_cast<double>(count);
  };
  return 0.5 * (directed(sp, dist_to_gt) + directed(sg, dist_to_pred));
}

std::vector<std::optional<double>> asd(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  std::vector<std::optional<double>> out(pred.channels());
  for (int c = 0; c < pred.channels(); ++c) {
    out[c] = asd_channel(pred.plane(c), gt.plane(c), pred.height(), pred.width());
  }
  return out;
}

}  // namespace hcdg::sdf
