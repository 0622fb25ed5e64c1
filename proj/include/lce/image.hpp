#pragma once

// 8-bit PNG I/O. Images travel as [1,3,H,W] (RGB) or [1,1,H,W] (gray)
// float tensors in [0,1]; quantization happens here and nowhere else.

#include <png.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "lce/core.hpp"
#include "lce/tensor.hpp"

namespace lce {

inline Tensor read_png(const std::string& path) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    throw IoError("cannot read PNG " + path + ": " + im.message);
  im.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&im);
    throw IoError("cannot decode PNG " + path + ": " + im.message);
  }
  const index_t H = im.height, W = im.width;
  Tensor t(Shape{1, 3, H, W});
  for (index_t h = 0; h < H; ++h)
    for (index_t w = 0; w < W; ++w)
      for (index_t c = 0; c < 3; ++c)
        t[(c * H + h) * W + w] = float(buf[size_t((h * W + w) * 3 + c)]) / 255.0f;
  return t;
}

inline unsigned char quantize8(float v) {
  const float s = std::min(std::max(v, 0.0f), 1.0f) * 255.0f;
  return static_cast<unsigned char>(std::lround(s));
}

// accepts [1,3,H,W] (RGB) or [1,1,H,W] (gray)
inline void write_png(const std::string& path, const Tensor& t) {
  LCE_CHECK(t.rank() == 4 && t.dim(0) == 1 && (t.dim(1) == 3 || t.dim(1) == 1),
            "write_png expects [1,3,H,W] or [1,1,H,W], got ", shape_str(t.shape()));
  const index_t C = t.dim(1), H = t.dim(2), W = t.dim(3);
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  im.width = png_uint_32(W);
  im.height = png_uint_32(H);
  im.format = (C == 3) ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> buf(size_t(H * W * C));
  for (index_t h = 0; h < H; ++h)
    for (index_t w = 0; w < W; ++w)
      for (index_t c = 0; c < C; ++c)
        buf[size_t((h * W + w) * C + c)] = quantize8(t[(c * H + h) * W + w]);
  if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path + ": " + im.message);
}

}  // namespace lce
