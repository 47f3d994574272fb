#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "octlesion/augment.hpp"
#include "octlesion/phantom.hpp"
#include "oracles.hpp"

using namespace oct;
using namespace oct::aug;

namespace {

AugmentConfig degenerate_config() {
  AugmentConfig cfg;
  cfg.rotation_deg = {0, 0};
  cfg.shear_frac = {0, 0};
  cfg.zoom_frac = {0, 0};
  cfg.translate_bscan_px = {0, 0};
  cfg.translate_z_px = {0, 0};
  cfg.hflip_prob = 0;
  cfg.noise_prob = 0;
  cfg.gamma_prob = 0;
  return cfg;
}

OctVolume test_volume(std::uint64_t seed) {
  phantom::PhantomSpec spec;
  spec.n_bscans = 6;
  spec.height = 48;
  spec.width = 64;
  spec.seed = seed;
  spec.lesions = {{phantom::LesionKind::drusen, 1, {8, 10}, {4, 6}}};
  return phantom::generate(spec).volume;
}

}  // namespace

TEST_CASE("degenerate config is the identity") {
  const OctVolume vol = test_volume(1);
  const OctVolume out = augment_volume(vol, degenerate_config(), 123);
  CHECK(out.voxels == vol.voxels);
}

TEST_CASE("config validation") {
  AugmentConfig bad = degenerate_config();
  bad.rotation_deg = {5, -5};
  CHECK_THROWS(bad.validate());
  bad = degenerate_config();
  bad.hflip_prob = 1.5;
  CHECK_THROWS(bad.validate());
  bad = degenerate_config();
  bad.gamma_range = {0.0, 2.0};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("horizontal flip applied twice is the identity") {
  const OctVolume vol = test_volume(2);
  AugmentConfig cfg = degenerate_config();
  cfg.hflip_prob = 1.0;
  const OctVolume once = augment_volume(vol, cfg, 5);
  CHECK(once.voxels != vol.voxels);
  const OctVolume twice = augment_volume(once, cfg, 6);
  CHECK(twice.voxels == vol.voxels);
}

TEST_CASE("gamma forced to 1 is the identity on normalized intensities") {
  const OctVolume vol = test_volume(3);
  AugmentConfig cfg = degenerate_config();
  cfg.gamma_prob = 1.0;
  cfg.gamma_range = {1.0, 1.0};
  const OctVolume out = augment_volume(vol, cfg, 7);
  CHECK(out.voxels == vol.voxels);
}

TEST_CASE("draws stay inside their configured intervals") {
  AugmentConfig cfg;  // full ranges
  long flips = 0, noises = 0, gammas = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const AugmentDraw d = sample_params(cfg, static_cast<std::uint64_t>(i));
    CHECK(d.rotation_deg >= -20.0);
    CHECK(d.rotation_deg <= 20.0);
    CHECK(d.shear >= -0.10);
    CHECK(d.shear <= 0.10);
    CHECK(d.zoom >= -0.10);
    CHECK(d.zoom <= 0.10);
    CHECK(d.translate_x >= -10.0);
    CHECK(d.translate_x <= 10.0);
    CHECK(d.translate_y >= -10.0);
    CHECK(d.translate_y <= 10.0);
    CHECK(d.translate_z >= -2);
    CHECK(d.translate_z <= 2);
    if (d.gamma_on) {
      CHECK(d.gamma >= 0.75);
      CHECK(d.gamma <= 3.0);
    }
    flips += d.hflip;
    noises += d.noise;
    gammas += d.gamma_on;
  }
  // empirical rates near the configured 15%
  CHECK(std::abs(flips / static_cast<double>(n) - 0.15) < 0.02);
  CHECK(std::abs(noises / static_cast<double>(n) - 0.15) < 0.02);
  CHECK(std::abs(gammas / static_cast<double>(n) - 0.15) < 0.02);

  // degenerate intervals give constant draws
  const AugmentConfig deg = degenerate_config();
  for (int i = 0; i < 50; ++i) {
    const AugmentDraw d = sample_params(deg, static_cast<std::uint64_t>(i));
    CHECK(d.rotation_deg == 0.0);
    CHECK(d.zoom == 0.0);
    CHECK(d.translate_z == 0);
  }
}

TEST_CASE("augmentation is deterministic in (config, seed)") {
  const OctVolume vol = test_volume(4);
  AugmentConfig cfg;
  const OctVolume a = augment_volume(vol, cfg, 99);
  const OctVolume b = augment_volume(vol, cfg, 99);
  CHECK(a.voxels == b.voxels);
  const OctVolume c = augment_volume(vol, cfg, 100);
  CHECK(a.voxels != c.voxels);
}

TEST_CASE("noise and gamma land inside the valid intensity range") {
  const OctVolume vol = test_volume(5);
  AugmentConfig cfg = degenerate_config();
  cfg.noise_prob = 1.0;
  cfg.noise_sigma = 0.4;
  cfg.gamma_prob = 1.0;
  cfg.gamma_range = {0.75, 3.0};
  const OctVolume out = augment_volume(vol, cfg, 13);
  CHECK(out.voxels != vol.voxels);  // all bytes remain valid uint8 by type
}

TEST_CASE("geometric transforms keep mask lesion pixel counts within tolerance") {
  // central lesion so moderate rotations cannot push it off the plane
  phantom::PhantomSpec spec;
  spec.n_bscans = 4;
  spec.height = 64;
  spec.width = 96;
  spec.seed = 21;
  spec.lesions = {{phantom::LesionKind::rpd2to4, 1, {10, 12}, {3, 5}}};
  const auto sample = phantom::generate(spec);

  AugmentConfig cfg;
  cfg.translate_bscan_px = {-4, 4};  // keep the lesion inside the frame
  cfg.translate_z_px = {0, 0};
  cfg.noise_prob = 0;
  cfg.gamma_prob = 0;

  const long before = std::count_if(sample.mask.labels.begin(), sample.mask.labels.end(),
                                    [](std::uint8_t v) { return v == kRpd234; });
  REQUIRE(before > 0);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    AugmentDraw d = sample_params(cfg, seed);
    const LesionMask warped = apply_to_mask(sample.mask, d);
    const long after = std::count_if(warped.labels.begin(), warped.labels.end(),
                                     [](std::uint8_t v) { return v == kRpd234; });
    // zoom scales the area by its Jacobian; nearest-neighbour resampling must
    // stay within 10% of that expectation (plus a small rasterization slack)
    const double expected = static_cast<double>(before) * (1.0 + d.zoom) * (1.0 + d.zoom);
    CHECK(std::abs(static_cast<double>(after) - expected) <=
          std::max(3.0, 0.10 * static_cast<double>(before)));
  }
}

TEST_CASE("paired B-scan augmentation keeps image and mask aligned") {
  phantom::PhantomSpec spec;
  spec.n_bscans = 2;
  spec.height = 64;
  spec.width = 96;
  spec.seed = 31;
  spec.lesions = {{phantom::LesionKind::drusen, 1, {10, 12}, {4, 6}}};
  const auto sample = phantom::generate(spec);

  long lesion_bscan = -1;
  for (long b = 0; b < spec.n_bscans && lesion_bscan < 0; ++b) {
    const Plane8 p = sample.mask.plane(b);
    if (std::any_of(p.v.begin(), p.v.end(), [](std::uint8_t v) { return v != 0; })) lesion_bscan = b;
  }
  REQUIRE(lesion_bscan >= 0);

  Plane8 image(spec.height, spec.width);
  std::copy(sample.volume.voxels.begin() + lesion_bscan * spec.height * spec.width,
            sample.volume.voxels.begin() + (lesion_bscan + 1) * spec.height * spec.width, image.v.begin());
  Plane8 mask = sample.mask.plane(lesion_bscan);

  AugmentConfig cfg;
  cfg.translate_bscan_px = {-4, 4};
  augment_bscan(image, &mask, cfg, 17);

  // lesion pixels in the warped mask still sit on bright (lesion-filled)
  // image pixels: the mean intensity under the mask beats the plane mean
  double under_mask = 0.0;
  long n_mask = 0;
  double overall = 0.0;
  for (long i = 0; i < image.numel(); ++i) {
    overall += image.v[static_cast<std::size_t>(i)];
    if (mask.v[static_cast<std::size_t>(i)] == kDrusen) {
      under_mask += image.v[static_cast<std::size_t>(i)];
      ++n_mask;
    }
  }
  REQUIRE(n_mask > 0);
  CHECK(under_mask / n_mask > overall / image.numel());
}

TEST_CASE("augment config JSON round trip") {
  AugmentConfig cfg;
  cfg.rotation_deg = {-15, 15};
  cfg.noise_sigma = 0.2;
  const auto back = augment_config_from_json(to_json(cfg));
  CHECK(back.rotation_deg.lo == -15);
  CHECK(back.rotation_deg.hi == 15);
  CHECK(back.noise_sigma == doctest::Approx(0.2));
  CHECK(back.gamma_range.lo == doctest::Approx(0.75));
  CHECK(back.hflip_prob == doctest::Approx(0.15));
}
