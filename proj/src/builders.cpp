#include "octlesion/builders.hpp"

#include <cmath>
#include <stdexcept>

namespace oct::nn {

namespace {

long scaled(double base, double scale) { return std::max<long>(1, std::lround(base * scale)); }

int add_conv_bn_relu(MiniNet& net, int spatial_rank, long in_ch, long out_ch, long kernel, Rng& rng) {
  auto conv = std::make_unique<Conv>(spatial_rank, in_ch, out_ch, kernel);
  conv->init_he(rng);
  net.add(std::move(conv));
  net.add(std::make_unique<BatchNorm>(out_ch));
  return net.add(std::make_unique<Relu>());
}

}  // namespace

MiniNet build_classifier3d(std::array<long, 3> dims, int n_categories, double width_scale,
                           std::uint64_t seed) {
  for (long d : dims)
    if (d < 8) throw std::invalid_argument("classifier3d needs every input extent >= 8");
  if (n_categories < 2) throw std::invalid_argument("classifier needs >= 2 categories");
  if (width_scale <= 0) throw std::invalid_argument("width_scale must be > 0");

  Rng rng(seed);
  MiniNet net;
  const long c1 = scaled(4, width_scale), c2 = scaled(8, width_scale), c3 = scaled(16, width_scale);

  add_conv_bn_relu(net, 3, 1, c1, 3, rng);
  net.add(std::make_unique<MaxPool>(3));
  add_conv_bn_relu(net, 3, c1, c2, 3, rng);
  net.add(std::make_unique<MaxPool>(3));
  add_conv_bn_relu(net, 3, c2, c3, 3, rng);
  net.add(std::make_unique<MaxPool>(3));
  add_conv_bn_relu(net, 3, c3, c3, 3, rng);
  net.add(std::make_unique<GlobalAvgPool>());
  auto head = std::make_unique<Dense>(c3, n_categories);
  head->init_he(rng);
  net.add(std::move(head));
  net.add(std::make_unique<Softmax>());
  return net;
}

MiniNet build_unet2d(std::array<long, 2> dims, int n_categories, int depth, int base_width,
                     std::uint64_t seed) {
  if (depth < 0) throw std::invalid_argument("unet depth must be >= 0");
  if (base_width < 1) throw std::invalid_argument("unet base width must be >= 1");
  if (n_categories < 2) throw std::invalid_argument("unet needs >= 2 categories");
  const long div = 1L << depth;
  if (dims[0] % div != 0 || dims[1] % div != 0)
    throw std::invalid_argument("unet input extents must be divisible by 2^depth");
  if (dims[0] / div < 1 || dims[1] / div < 1)
    throw std::invalid_argument("unet input too small for requested depth");

  Rng rng(seed);
  MiniNet net;

  if (depth == 0) {
    add_conv_bn_relu(net, 2, 1, base_width, 3, rng);
    auto head = std::make_unique<Conv>(2, base_width, n_categories, 1);
    head->init_he(rng);
    net.add(std::move(head));
    net.add(std::make_unique<Softmax>());
    return net;
  }

  std::vector<int> skips;
  std::vector<long> widths;
  long in_ch = 1;
  for (int level = 0; level < depth; ++level) {
    const long w = static_cast<long>(base_width) << level;
    skips.push_back(add_conv_bn_relu(net, 2, in_ch, w, 3, rng));
    widths.push_back(w);
    net.add(std::make_unique<MaxPool>(2));
    in_ch = w;
  }

  const long bottleneck = static_cast<long>(base_width) << depth;
  add_conv_bn_relu(net, 2, in_ch, bottleneck, 3, rng);
  in_ch = bottleneck;

  for (int level = depth - 1; level >= 0; --level) {
    net.add(std::make_unique<Upsample2d>());
    const int merged = net.add(std::make_unique<Concat>(), MiniNet::kPrev, skips[static_cast<std::size_t>(level)]);
    (void)merged;
    add_conv_bn_relu(net, 2, in_ch + widths[static_cast<std::size_t>(level)], widths[static_cast<std::size_t>(level)],
                     3, rng);
    in_ch = widths[static_cast<std::size_t>(level)];
  }

  auto head = std::make_unique<Conv>(2, in_ch, n_categories, 1);
  head->init_he(rng);
  net.add(std::move(head));
  net.add(std::make_unique<Softmax>());
  return net;
}

}  // namespace oct::nn
