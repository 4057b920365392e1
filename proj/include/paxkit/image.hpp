#pragma once

#include <cstddef>
#include <vector>

namespace paxkit {

/// Row-major (y, x, channel) f64 raster.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  static Image zeros(int height, int width, int channels) {
    Image im;
    im.height = height;
    im.width = width;
    im.channels = channels;
    im.data.assign(static_cast<std::size_t>(height) * width * channels, 0.0);
    return im;
  }

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

}  // namespace paxkit
