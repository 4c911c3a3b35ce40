// SPDX-License-Identifier: Apache-2.0
#include "pbp/conv.hpp"

namespace pbp::conv {

void im2col(const Geometry& g, std::span<const double> image, std::span<double> col) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), npos = g.positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        double* dst = col.data() + row * npos;
        for (std::size_t y = 0; y < oh; ++y) {
          const double* src = image.data() + (c * g.height + y + ky) * g.width + kx;
          for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] = src[x];
        }
      }
}

void col2im_add(const Geometry& g, std::span<const double> col, std::span<double> image) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), npos = g.positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        const double* src = col.data() + row * npos;
        for (std::size_t y = 0; y < oh; ++y) {
          double* dst = image.data() + (c * g.height + y + ky) * g.width + kx;
          for (std::size_t x = 0; x < ow; ++x) dst[x] += src[y * ow + x];
        }
      }
}

void im2row(const Geometry& g, std::span<const double> image, std::span<double> rows) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), patch = g.patch_size();
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double* dst = rows.data() + (y * ow + x) * patch;
      for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx)
            *dst++ = image[(c * g.height + y + ky) * g.width + x + kx];
    }
}

}  // namespace pbp::conv
