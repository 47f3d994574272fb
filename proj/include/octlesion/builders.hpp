#pragma once

#include <array>
#include <cstdint>

#include "octlesion/net.hpp"

namespace oct::nn {

// Volume classifier: a stack of conv3d + batchnorm + ReLU blocks with 2x
// pooling, then global average pooling, a dense head and softmax.
// dims = (n_bscans, height, width); every axis must be >= 8.
MiniNet build_classifier3d(std::array<long, 3> dims, int n_categories, double width_scale = 1.0,
                           std::uint64_t seed = 0);

// 2D U-Net over (height, width) B-scans with per-pixel softmax. height and
// width must be divisible by 2^depth; depth 0 degenerates to a plain conv
// stack.
MiniNet build_unet2d(std::array<long, 2> dims, int n_categories = 4, int depth = 3,
                     int base_width = 8, std::uint64_t seed = 0);

}  // namespace oct::nn
