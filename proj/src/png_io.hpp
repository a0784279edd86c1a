#ifndef SEGFLOW_PNG_IO_HPP_
#define SEGFLOW_PNG_IO_HPP_

#include <cstdint>
#include <string>

#include "segflow/tensor.hpp"

// Minimal 8-bit PNG codec (zlib for the deflate stream). Writing emits
// grayscale or RGB with filter 0; reading accepts gray, RGB, palette,
// gray+alpha and RGBA at bit depth 8 (alpha dropped), non-interlaced.

namespace segflow {

// image: [1,h,w] or [3,h,w], values in [0,1]; quantized to 8 bits.
void write_png(const std::string& path, const Tensor<float>& image);

// returns [1,h,w] or [3,h,w] in [0,1]
Tensor<float> read_png(const std::string& path);

// 0/255 grayscale convention for masks
void write_mask_png(const std::string& path, const Tensor<uint8_t>& mask);

// any pixel with luminance > 127 counts as foreground
Tensor<uint8_t> read_mask_png(const std::string& path);

}  // namespace segflow

#endif  // SEGFLOW_PNG_IO_HPP_
