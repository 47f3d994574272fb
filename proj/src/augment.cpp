#include "octlesion/augment.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "octlesion/rng.hpp"

namespace oct::aug {

using nlohmann::json;

namespace {

constexpr double kDegToRad = 0.017453292519943295;

void check_interval(const Interval& iv, const char* name) {
  if (iv.lo > iv.hi) throw std::invalid_argument(std::string("interval not ordered: ") + name);
}

void check_prob(double p, const char* name) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument(std::string("probability out of [0,1]: ") + name);
}

// Forward in-plane map: p' = t + Z * S * R * (p - center), with x = column
// and y = row. Sampling inverts it.
Eigen::Matrix2d forward_matrix(const AugmentDraw& d) {
  const double a = d.rotation_deg * kDegToRad;
  Eigen::Matrix2d rot;
  rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  Eigen::Matrix2d shear;
  shear << 1.0, d.shear, 0.0, 1.0;
  const double scale = 1.0 + d.zoom;
  return scale * shear * rot;
}

bool is_identity_geometry(const AugmentDraw& d) {
  return d.rotation_deg == 0.0 && d.shear == 0.0 && d.zoom == 0.0 && d.translate_x == 0.0 &&
         d.translate_y == 0.0;
}

double bilinear(const std::vector<double>& img, long H, long W, double ys, double xs) {
  const long y0 = static_cast<long>(std::floor(ys));
  const long x0 = static_cast<long>(std::floor(xs));
  const double wy = ys - static_cast<double>(y0);
  const double wx = xs - static_cast<double>(x0);
  auto px = [&](long y, long x) -> double {
    if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
    return img[static_cast<std::size_t>(y * W + x)];
  };
  const double top = px(y0, x0) * (1.0 - wx) + px(y0, x0 + 1) * wx;
  const double bot = px(y0 + 1, x0) * (1.0 - wx) + px(y0 + 1, x0 + 1) * wx;
  return top * (1.0 - wy) + bot * wy;
}

void warp_plane(const std::vector<double>& src, std::vector<double>& dst, long H, long W,
                const AugmentDraw& d) {
  if (is_identity_geometry(d)) {
    dst = src;
    return;
  }
  const Eigen::Matrix2d m = forward_matrix(d);
  if (std::abs(m.determinant()) < 1e-12) throw std::invalid_argument("degenerate augmentation geometry");
  const Eigen::Matrix2d inv = m.inverse();
  const double cx = static_cast<double>(W - 1) / 2.0;
  const double cy = static_cast<double>(H - 1) / 2.0;
  dst.assign(static_cast<std::size_t>(H * W), 0.0);
  for (long r = 0; r < H; ++r) {
    for (long c = 0; c < W; ++c) {
      const double x = static_cast<double>(c) - cx - d.translate_x;
      const double y = static_cast<double>(r) - cy - d.translate_y;
      const double xs = inv(0, 0) * x + inv(0, 1) * y + cx;
      const double ys = inv(1, 0) * x + inv(1, 1) * y + cy;
      dst[static_cast<std::size_t>(r * W + c)] = bilinear(src, H, W, ys, xs);
    }
  }
}

void warp_plane_nearest(const std::uint8_t* src, std::uint8_t* dst, long H, long W,
                        const AugmentDraw& d) {
  if (is_identity_geometry(d)) {
    std::copy(src, src + H * W, dst);
    return;
  }
  const Eigen::Matrix2d m = forward_matrix(d);
  if (std::abs(m.determinant()) < 1e-12) throw std::invalid_argument("degenerate augmentation geometry");
  const Eigen::Matrix2d inv = m.inverse();
  const double cx = static_cast<double>(W - 1) / 2.0;
  const double cy = static_cast<double>(H - 1) / 2.0;
  for (long r = 0; r < H; ++r) {
    for (long c = 0; c < W; ++c) {
      const double x = static_cast<double>(c) - cx - d.translate_x;
      const double y = static_cast<double>(r) - cy - d.translate_y;
      const long xs = std::lround(inv(0, 0) * x + inv(0, 1) * y + cx);
      const long ys = std::lround(inv(1, 0) * x + inv(1, 1) * y + cy);
      dst[r * W + c] = (ys < 0 || ys >= H || xs < 0 || xs >= W) ? 0 : src[ys * W + xs];
    }
  }
}

void hflip_plane(std::vector<double>& img, long H, long W) {
  for (long r = 0; r < H; ++r)
    for (long c = 0; c < W / 2; ++c)
      std::swap(img[static_cast<std::size_t>(r * W + c)], img[static_cast<std::size_t>(r * W + W - 1 - c)]);
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

}  // namespace

void AugmentConfig::validate() const {
  check_interval(rotation_deg, "rotation_deg");
  check_interval(shear_frac, "shear_frac");
  check_interval(zoom_frac, "zoom_frac");
  check_interval(translate_bscan_px, "translate_bscan_px");
  check_interval(translate_z_px, "translate_z_px");
  check_interval(gamma_range, "gamma_range");
  check_prob(hflip_prob, "hflip_prob");
  check_prob(noise_prob, "noise_prob");
  check_prob(gamma_prob, "gamma_prob");
  if (noise_sigma < 0) throw std::invalid_argument("noise_sigma must be >= 0");
  if (gamma_range.lo <= 0) throw std::invalid_argument("gamma must be positive");
}

AugmentDraw sample_params(const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  AugmentDraw d;
  d.rotation_deg = rng.uniform(cfg.rotation_deg.lo, cfg.rotation_deg.hi);
  d.shear = rng.uniform(cfg.shear_frac.lo, cfg.shear_frac.hi);
  d.zoom = rng.uniform(cfg.zoom_frac.lo, cfg.zoom_frac.hi);
  d.translate_x = rng.uniform(cfg.translate_bscan_px.lo, cfg.translate_bscan_px.hi);
  d.translate_y = rng.uniform(cfg.translate_bscan_px.lo, cfg.translate_bscan_px.hi);
  d.translate_z = rng.uniform_int(std::lround(cfg.translate_z_px.lo), std::lround(cfg.translate_z_px.hi));
  d.hflip = rng.bernoulli(cfg.hflip_prob);
  d.noise = rng.bernoulli(cfg.noise_prob);
  d.noise_mean = cfg.noise_mean;
  d.noise_sigma = cfg.noise_sigma;
  d.noise_seed = rng.next_u64();
  d.gamma_on = rng.bernoulli(cfg.gamma_prob);
  d.gamma = rng.uniform(cfg.gamma_range.lo, cfg.gamma_range.hi);
  if (!d.gamma_on) d.gamma = 1.0;
  return d;
}

OctVolume apply(const OctVolume& vol, const AugmentDraw& draw) {
  vol.validate();
  const long B = vol.n_bscans, H = vol.height, W = vol.width;
  OctVolume out = vol;

  // Normalized double planes, after the z-shift.
  std::vector<std::vector<double>> planes(static_cast<std::size_t>(B));
  for (long b = 0; b < B; ++b) {
    auto& p = planes[static_cast<std::size_t>(b)];
    p.assign(static_cast<std::size_t>(H * W), 0.0);
    const long src_b = b - draw.translate_z;
    if (src_b < 0 || src_b >= B) continue;
    const std::uint8_t* src = vol.voxels.data() + src_b * H * W;
    for (long i = 0; i < H * W; ++i) p[static_cast<std::size_t>(i)] = static_cast<double>(src[i]) / 255.0;
  }

  std::vector<double> warped;
  Rng noise_rng(draw.noise_seed);
  for (long b = 0; b < B; ++b) {
    auto& p = planes[static_cast<std::size_t>(b)];
    warp_plane(p, warped, H, W, draw);
    if (draw.hflip) hflip_plane(warped, H, W);
    if (draw.noise) {
      for (double& v : warped) v += noise_rng.normal(draw.noise_mean, draw.noise_sigma);
    }
    for (double& v : warped) v = std::clamp(v, 0.0, 1.0);
    if (draw.gamma != 1.0)
      for (double& v : warped) v = std::pow(v, draw.gamma);
    std::uint8_t* dst = out.voxels.data() + b * H * W;
    for (long i = 0; i < H * W; ++i) dst[i] = quantize(warped[static_cast<std::size_t>(i)]);
  }
  return out;
}

OctVolume augment_volume(const OctVolume& vol, const AugmentConfig& cfg, std::uint64_t seed) {
  return apply(vol, sample_params(cfg, seed));
}

LesionMask apply_to_mask(const LesionMask& mask, const AugmentDraw& draw) {
  const long B = mask.n_bscans, H = mask.height, W = mask.width;
  LesionMask out = LesionMask::zeros(B, H, W);
  std::vector<std::uint8_t> shifted(static_cast<std::size_t>(H * W));
  for (long b = 0; b < B; ++b) {
    const long src_b = b - draw.translate_z;
    if (src_b < 0 || src_b >= B) continue;
    std::copy(mask.labels.data() + src_b * H * W, mask.labels.data() + (src_b + 1) * H * W, shifted.begin());
    std::uint8_t* dst = out.labels.data() + b * H * W;
    warp_plane_nearest(shifted.data(), dst, H, W, draw);
    if (draw.hflip)
      for (long r = 0; r < H; ++r)
        for (long c = 0; c < W / 2; ++c) std::swap(dst[r * W + c], dst[r * W + W - 1 - c]);
  }
  return out;
}

void augment_bscan(Plane8& image, Plane8* mask, const AugmentConfig& cfg, std::uint64_t seed) {
  AugmentDraw d = sample_params(cfg, seed);
  d.translate_z = 0;
  const long H = image.height, W = image.width;

  std::vector<double> plane(static_cast<std::size_t>(H * W));
  for (long i = 0; i < H * W; ++i) plane[static_cast<std::size_t>(i)] = static_cast<double>(image.v[i]) / 255.0;
  std::vector<double> warped;
  warp_plane(plane, warped, H, W, d);
  if (d.hflip) hflip_plane(warped, H, W);
  if (d.noise) {
    Rng noise_rng(d.noise_seed);
    for (double& v : warped) v += noise_rng.normal(d.noise_mean, d.noise_sigma);
  }
  for (double& v : warped) v = std::clamp(v, 0.0, 1.0);
  if (d.gamma != 1.0)
    for (double& v : warped) v = std::pow(v, d.gamma);
  for (long i = 0; i < H * W; ++i) image.v[i] = quantize(warped[static_cast<std::size_t>(i)]);

  if (mask) {
    Plane8 warped_mask(H, W);
    warp_plane_nearest(mask->v.data(), warped_mask.v.data(), H, W, d);
    if (d.hflip)
      for (long r = 0; r < H; ++r)
        for (long c = 0; c < W / 2; ++c)
          std::swap(warped_mask.v[r * W + c], warped_mask.v[r * W + W - 1 - c]);
    *mask = std::move(warped_mask);
  }
}

json to_json(const AugmentConfig& c) {
  auto iv = [](const Interval& i) { return json::array({i.lo, i.hi}); };
  return {
      {"rotation_deg", iv(c.rotation_deg)},
      {"shear_frac", iv(c.shear_frac)},
      {"zoom_frac", iv(c.zoom_frac)},
      {"translate_bscan_px", iv(c.translate_bscan_px)},
      {"translate_z_px", iv(c.translate_z_px)},
      {"hflip_prob", c.hflip_prob},
      {"noise", {{"mean", c.noise_mean}, {"sigma", c.noise_sigma}, {"prob", c.noise_prob}}},
      {"gamma", {{"range", iv(c.gamma_range)}, {"prob", c.gamma_prob}}},
  };
}

AugmentConfig augment_config_from_json(const json& j) {
  AugmentConfig c;
  auto iv = [&](const char* key, Interval def) {
    if (!j.contains(key)) return def;
    return Interval{j[key][0].get<double>(), j[key][1].get<double>()};
  };
  c.rotation_deg = iv("rotation_deg", c.rotation_deg);
  c.shear_frac = iv("shear_frac", c.shear_frac);
  c.zoom_frac = iv("zoom_frac", c.zoom_frac);
  c.translate_bscan_px = iv("translate_bscan_px", c.translate_bscan_px);
  c.translate_z_px = iv("translate_z_px", c.translate_z_px);
  c.hflip_prob = j.value("hflip_prob", c.hflip_prob);
  if (j.contains("noise")) {
    c.noise_mean = j["noise"].value("mean", c.noise_mean);
    c.noise_sigma = j["noise"].value("sigma", c.noise_sigma);
    c.noise_prob = j["noise"].value("prob", c.noise_prob);
  }
  if (j.contains("gamma")) {
    if (j["gamma"].contains("range"))
      c.gamma_range = {j["gamma"]["range"][0].get<double>(), j["gamma"]["range"][1].get<double>()};
    c.gamma_prob = j["gamma"].value("prob", c.gamma_prob);
  }
  c.validate();
  return c;
}

}  // namespace oct::aug
