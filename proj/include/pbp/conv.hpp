// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

namespace pbp::conv {

/// Geometry of one sample for a valid-padding, stride-1 convolution.
struct Geometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;

  std::size_t out_h() const { return height - kernel_h + 1; }
  std::size_t out_w() const { return width - kernel_w + 1; }
  std::size_t patch_size() const { return channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h() * out_w(); }
};

/// col[(c,ky,kx), (y,x)] = image[c, y+ky, x+kx]; col is patch_size x positions.
void im2col(const Geometry& g, std::span<const double> image, std::span<double> col);
/// Adjoint of im2col: image[c, y+ky, x+kx] += col[(c,ky,kx), (y,x)].
void col2im_add(const Geometry& g, std::span<const double> col, std::span<double> image);
/// Row-per-position layout: rows[(y,x), (c,ky,kx)]; positions x patch_size.
void im2row(const Geometry& g, std::span<const double> image, std::span<double> rows);

}  // namespace pbp::conv
