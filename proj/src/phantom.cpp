#include "octlesion/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "octlesion/rng.hpp"

namespace oct::phantom {

using nlohmann::json;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

struct BandRows {
  // Per (bscan, col) row of the RPE line top; EZ and inner-retina rows derive
  // from it via the fixed gaps below.
  std::vector<long> rpe;
  long gap = 0;
  long inner_thickness = 0;

  long rpe_row(long b, long width, long c) const { return rpe[static_cast<std::size_t>(b * width + c)]; }
  long ez_row(long b, long width, long c) const { return rpe_row(b, width, c) - gap; }
};

BandRows band_rows(const PhantomSpec& spec, Rng& rng) {
  BandRows bands;
  bands.gap = std::max<long>(3, spec.height / 10);
  bands.inner_thickness = std::max<long>(6, spec.height / 5);
  bands.rpe.resize(static_cast<std::size_t>(spec.n_bscans * spec.width));

  const double base = 0.62 * static_cast<double>(spec.height);
  const double amp1 = rng.uniform(0.3, 1.0) * spec.background.undulation_px;
  const double amp2 = rng.uniform(0.3, 1.0) * spec.background.undulation_px;
  const double freq_c = rng.uniform(0.8, 2.0);
  const double freq_b = rng.uniform(0.5, 1.5);
  const double phase_c = rng.uniform(0.0, kTwoPi);
  const double phase_b = rng.uniform(0.0, kTwoPi);

  const long lo = bands.inner_thickness + bands.gap + 3;
  const long hi = spec.height - 4;
  for (long b = 0; b < spec.n_bscans; ++b) {
    for (long c = 0; c < spec.width; ++c) {
      const double u = amp1 * std::sin(kTwoPi * freq_c * c / spec.width + phase_c) +
                       amp2 * std::sin(kTwoPi * freq_b * b / std::max<long>(1, spec.n_bscans) + phase_b);
      const long row = std::clamp(std::lround(base + u), lo, hi);
      bands.rpe[static_cast<std::size_t>(b * spec.width + c)] = row;
    }
  }
  return bands;
}

void paint_background(const PhantomSpec& spec, const BandRows& bands, OctVolume& vol, Rng& rng) {
  const auto& bg = spec.background;
  for (long b = 0; b < spec.n_bscans; ++b) {
    for (long r = 0; r < spec.height; ++r) {
      for (long c = 0; c < spec.width; ++c) {
        const long rpe = bands.rpe_row(b, spec.width, c);
        const long ez = rpe - bands.gap;
        const long inner_top = ez - bands.inner_thickness;
        double v;
        if (r < inner_top)
          v = bg.vitreous;
        else if (r < ez - 1)
          v = bg.inner_retina;
        else if (r <= ez)
          v = bg.ez_line;
        else if (r < rpe)
          v = bg.sub_ez;
        else if (r <= rpe + 1)
          v = bg.rpe_line;
        else
          v = bg.choroid;
        vol.at(b, r, c) = clamp_u8(v + rng.normal(0.0, bg.jitter_sigma));
      }
    }
  }
}

struct Placement {
  long bscan = 0;
  long center_col = 0;
  long half_width = 0;
  double amplitude = 0.0;
};

// Column intervals already claimed per B-scan, including a separation margin,
// so every planned lesion stays a single isolated mask component.
using Occupancy = std::vector<std::vector<std::pair<long, long>>>;

bool claim(Occupancy& occ, long b, long lo, long hi) {
  for (const auto& [alo, ahi] : occ[static_cast<std::size_t>(b)])
    if (lo <= ahi && alo <= hi) return false;
  occ[static_cast<std::size_t>(b)].emplace_back(lo, hi);
  return true;
}

Placement place_lesion(const PhantomSpec& spec, const LesionPlan& plan, Occupancy& occ, Rng& rng) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    Placement p;
    const long w = rng.uniform_int(plan.size_px[0], plan.size_px[1]);
    p.half_width = std::max<long>(2, w / 2);
    if (2 * p.half_width + 8 >= spec.width) continue;
    p.bscan = rng.uniform_int(0, spec.n_bscans - 1);
    p.center_col = rng.uniform_int(p.half_width + 3, spec.width - p.half_width - 4);
    p.amplitude = rng.uniform(plan.amplitude_px[0], plan.amplitude_px[1]);
    if (claim(occ, p.bscan, p.center_col - p.half_width - 2, p.center_col + p.half_width + 2)) return p;
  }
  throw std::invalid_argument("lesion plan does not fit the phantom geometry: kind " + to_string(plan.kind));
}

void paint_drusen(const PhantomSpec& spec, const BandRows& bands, const Placement& p, OctVolume& vol,
                  LesionMask& mask, Rng& rng) {
  const double sigma = std::max(1.0, static_cast<double>(p.half_width) / 2.0);
  const double peak = std::min(p.amplitude, static_cast<double>(bands.gap - 1));
  for (long c = p.center_col - p.half_width; c <= p.center_col + p.half_width; ++c) {
    const double dx = static_cast<double>(c - p.center_col);
    const long elev = std::lround(peak * std::exp(-dx * dx / (2.0 * sigma * sigma)));
    if (elev < 1) continue;
    const long rpe = bands.rpe_row(p.bscan, spec.width, c);
    const long new_top = rpe - elev;
    // Relocated RPE line, then medium-reflectivity material down to the
    // original line's lower edge.
    for (long r = new_top; r <= new_top + 1; ++r)
      vol.at(p.bscan, r, c) = clamp_u8(spec.background.rpe_line + rng.normal(0.0, 4.0));
    for (long r = new_top + 2; r <= rpe + 1; ++r) {
      vol.at(p.bscan, r, c) = clamp_u8(spec.appearance.drusen_fill + rng.normal(0.0, 6.0));
      mask.at(p.bscan, r, c) = kDrusen;
    }
  }
}

void paint_rpd1(const PhantomSpec& spec, const BandRows& bands, const Placement& p, OctVolume& vol,
                LesionMask& mask, Rng& rng) {
  const double sigma = std::max(1.0, static_cast<double>(p.half_width) / 2.0);
  const double peak = std::min(p.amplitude, static_cast<double>(bands.gap - 2));
  for (long c = p.center_col - p.half_width; c <= p.center_col + p.half_width; ++c) {
    const double dx = static_cast<double>(c - p.center_col);
    const long thickness = std::lround(peak * std::exp(-dx * dx / (2.0 * sigma * sigma)));
    if (thickness < 1) continue;
    const long rpe = bands.rpe_row(p.bscan, spec.width, c);
    // Granular deposit resting on the RPE; the EZ line above stays intact.
    for (long r = rpe - thickness; r <= rpe - 1; ++r) {
      if (rng.bernoulli(spec.appearance.rpd1_speckle_density))
        vol.at(p.bscan, r, c) =
            clamp_u8(spec.appearance.rpd_fill + rng.normal(0.0, spec.appearance.rpd1_speckle_sigma));
      mask.at(p.bscan, r, c) = kRpd1;
    }
  }
}

void paint_rpd234(const PhantomSpec& spec, const BandRows& bands, const Placement& p, OctVolume& vol,
                  LesionMask& mask, Rng& rng) {
  const long rpe_center = bands.rpe_row(p.bscan, spec.width, p.center_col);
  const long ez_center = rpe_center - bands.gap;
  const long inner_top = ez_center - bands.inner_thickness;
  // Conical mound; the apex rises past the EZ line and breaks through it.
  const long peak = std::min<long>(bands.gap + std::lround(p.amplitude), rpe_center - inner_top - 2);
  for (long c = p.center_col - p.half_width; c <= p.center_col + p.half_width; ++c) {
    const double frac = 1.0 - std::abs(static_cast<double>(c - p.center_col)) / (p.half_width + 1.0);
    const long thickness = std::lround(static_cast<double>(peak) * frac);
    if (thickness < 1) continue;
    const long rpe = bands.rpe_row(p.bscan, spec.width, c);
    for (long r = rpe - thickness; r <= rpe - 1; ++r) {
      vol.at(p.bscan, r, c) = clamp_u8(spec.appearance.rpd_fill + rng.normal(0.0, 6.0));
      mask.at(p.bscan, r, c) = kRpd234;
    }
  }
}

}  // namespace

std::string to_string(LesionKind k) {
  switch (k) {
    case LesionKind::drusen: return "drusen";
    case LesionKind::rpd1: return "rpd1";
    default: return "rpd2to4";
  }
}

LesionKind lesion_kind_from_string(const std::string& s) {
  if (s == "drusen") return LesionKind::drusen;
  if (s == "rpd1") return LesionKind::rpd1;
  if (s == "rpd2to4") return LesionKind::rpd2to4;
  throw std::invalid_argument("invalid lesion kind: " + s);
}

std::string to_string(Corruption c) {
  switch (c) {
    case Corruption::none: return "none";
    case Corruption::heavy_noise: return "heavy_noise";
    case Corruption::shadow_band: return "shadow_band";
    case Corruption::outer_retina_clip: return "outer_retina_clip";
    case Corruption::vertical_flip: return "vertical_flip";
    default: return "optical_artifact";
  }
}

Corruption corruption_from_string(const std::string& s) {
  if (s == "none") return Corruption::none;
  if (s == "heavy_noise") return Corruption::heavy_noise;
  if (s == "shadow_band") return Corruption::shadow_band;
  if (s == "outer_retina_clip") return Corruption::outer_retina_clip;
  if (s == "vertical_flip") return Corruption::vertical_flip;
  if (s == "optical_artifact") return Corruption::optical_artifact;
  throw std::invalid_argument("invalid corruption: " + s);
}

std::uint8_t mask_code(LesionKind k) {
  switch (k) {
    case LesionKind::drusen: return kDrusen;
    case LesionKind::rpd1: return kRpd1;
    default: return kRpd234;
  }
}

void PhantomSpec::validate() const {
  if (n_bscans < 1 || height < 16 || width < 16)
    throw std::invalid_argument("phantom geometry too small (need height,width >= 16, n_bscans >= 1)");
  if (fov_mm[0] <= 0 || fov_mm[1] <= 0) throw std::invalid_argument("fov_mm components must be > 0");
  if (background.jitter_sigma < 0) throw std::invalid_argument("jitter sigma must be >= 0");
  for (const auto& plan : lesions) {
    if (plan.count < 0) throw std::invalid_argument("lesion count must be >= 0");
    if (plan.size_px[0] > plan.size_px[1] || plan.size_px[0] < 3)
      throw std::invalid_argument("lesion size range invalid");
    if (plan.amplitude_px[0] > plan.amplitude_px[1] || plan.amplitude_px[0] <= 0)
      throw std::invalid_argument("lesion amplitude range invalid");
  }
}

PhantomSample generate(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  PhantomSample sample;
  sample.volume = OctVolume::zeros(spec.n_bscans, spec.height, spec.width, spec.fov_mm);
  sample.volume.participant_id = spec.participant_id;
  sample.volume.eye = spec.eye;
  sample.mask = LesionMask::zeros(spec.n_bscans, spec.height, spec.width);

  const BandRows bands = band_rows(spec, rng);
  paint_background(spec, bands, sample.volume, rng);

  Occupancy occ(static_cast<std::size_t>(spec.n_bscans));
  long total_lesions = 0;
  for (const auto& plan : spec.lesions) {
    for (long i = 0; i < plan.count; ++i) {
      const Placement p = place_lesion(spec, plan, occ, rng);
      switch (plan.kind) {
        case LesionKind::drusen: paint_drusen(spec, bands, p, sample.volume, sample.mask, rng); break;
        case LesionKind::rpd1: paint_rpd1(spec, bands, p, sample.volume, sample.mask, rng); break;
        case LesionKind::rpd2to4: paint_rpd234(spec, bands, p, sample.volume, sample.mask, rng); break;
      }
      ++total_lesions;
    }
  }

  if (spec.corruption != Corruption::none) {
    CorruptionParams params = spec.corruption_params;
    params.noise_sigma = std::max(params.noise_sigma, 7.0 * spec.background.jitter_sigma);
    sample.volume = corrupt(sample.volume, spec.corruption, Rng::derive(spec.seed, 0xC0), params);
    sample.grade = GradeLabel::Ungradable;
  } else if (total_lesions == 0) {
    sample.grade = GradeLabel::NoLesion;
  } else if (total_lesions == 1) {
    sample.grade = GradeLabel::OneLesion;
  } else {
    sample.grade = GradeLabel::MoreThanOne;
  }
  return sample;
}

OctVolume corrupt(const OctVolume& vol, Corruption corruption, std::uint64_t seed,
                  const CorruptionParams& params) {
  OctVolume out = vol;
  if (corruption == Corruption::none) return out;
  Rng rng(seed);

  switch (corruption) {
    case Corruption::heavy_noise: {
      for (auto& v : out.voxels) v = clamp_u8(static_cast<double>(v) + rng.normal(0.0, params.noise_sigma));
      break;
    }
    case Corruption::shadow_band: {
      const long band = std::max<long>(2, std::lround(params.shadow_band_frac * vol.width));
      const long c0 = rng.uniform_int(0, vol.width - band);
      for (long b = 0; b < vol.n_bscans; ++b)
        for (long r = 0; r < vol.height; ++r)
          for (long c = c0; c < c0 + band; ++c) out.at(b, r, c) = 0;
      break;
    }
    case Corruption::outer_retina_clip: {
      const long clip_row = std::clamp<long>(std::lround(params.clip_row_frac * vol.height), 1, vol.height - 1);
      for (long b = 0; b < vol.n_bscans; ++b)
        for (long r = clip_row; r < vol.height; ++r)
          for (long c = 0; c < vol.width; ++c) out.at(b, r, c) = 0;
      break;
    }
    case Corruption::vertical_flip: {
      bool any = false;
      for (long b = 0; b < vol.n_bscans; ++b) {
        if (!rng.bernoulli(params.flip_bscan_prob)) continue;
        any = true;
        for (long r = 0; r < vol.height / 2; ++r)
          for (long c = 0; c < vol.width; ++c)
            std::swap(out.at(b, r, c), out.at(b, vol.height - 1 - r, c));
      }
      if (!any)
        for (long r = 0; r < vol.height / 2; ++r)
          for (long c = 0; c < vol.width; ++c) std::swap(out.at(0, r, c), out.at(0, vol.height - 1 - r, c));
      break;
    }
    case Corruption::optical_artifact: {
      // Structured diagonal grating, unlike any training-set corruption.
      const double phase = rng.uniform(0.0, kTwoPi);
      for (long b = 0; b < vol.n_bscans; ++b)
        for (long r = 0; r < vol.height; ++r)
          for (long c = 0; c < vol.width; ++c) {
            const double wave =
                std::sin(kTwoPi * static_cast<double>(r + c) / params.artifact_wavelength_px + phase + 0.35 * b);
            out.at(b, r, c) = clamp_u8(static_cast<double>(out.at(b, r, c)) + params.artifact_amplitude * wave);
          }
      break;
    }
    default: break;
  }
  return out;
}

namespace {

std::vector<LesionPlan> multi_lesion_plan() {
  return {
      {LesionKind::drusen, 3, {6, 14}, {4.0, 8.0}},
      {LesionKind::rpd1, 2, {8, 16}, {3.0, 5.0}},
      {LesionKind::rpd2to4, 2, {6, 12}, {2.0, 5.0}},
  };
}

constexpr Corruption kTrainingCorruptions[] = {Corruption::heavy_noise, Corruption::shadow_band,
                                               Corruption::outer_retina_clip, Corruption::vertical_flip};

}  // namespace

DatasetManifest generate_dataset(const std::map<std::string, long>& n_per_category,
                                 std::uint64_t base_seed, const std::filesystem::path& out_dir,
                                 const PhantomSpec& base) {
  static const std::vector<std::string> kOrder = {"control", "single",       "lesion",
                                                  "questionable", "ungradable", "ood"};
  for (const auto& [key, n] : n_per_category) {
    if (std::find(kOrder.begin(), kOrder.end(), key) == kOrder.end())
      throw std::invalid_argument("unknown phantom category: " + key);
    if (n < 0) throw std::invalid_argument("category count must be >= 0");
  }

  std::filesystem::create_directories(out_dir);
  DatasetManifest manifest;
  long idx = 0;
  for (const auto& category : kOrder) {
    const auto it = n_per_category.find(category);
    const long n = it == n_per_category.end() ? 0 : it->second;
    for (long j = 0; j < n; ++j, ++idx) {
      PhantomSpec spec = base;
      spec.seed = base_seed + static_cast<std::uint64_t>(idx);
      char pid[32];
      std::snprintf(pid, sizeof(pid), "P%04ld", idx);
      spec.participant_id = pid;
      spec.corruption = Corruption::none;
      spec.lesions.clear();

      if (category == "single") {
        auto plan = multi_lesion_plan()[static_cast<std::size_t>(j % 3)];
        plan.count = 1;
        spec.lesions = {plan};
      } else if (category == "lesion" || category == "questionable") {
        spec.lesions = base.lesions.empty() ? multi_lesion_plan() : base.lesions;
      } else if (category == "ungradable" || category == "ood") {
        if (j % 2 == 1) spec.lesions = base.lesions.empty() ? multi_lesion_plan() : base.lesions;
        spec.corruption = category == "ood" ? Corruption::optical_artifact
                                            : kTrainingCorruptions[static_cast<std::size_t>(j % 4)];
      }

      PhantomSample sample = generate(spec);

      char name[32];
      std::snprintf(name, sizeof(name), "vol_%04ld", idx);
      save_volume(sample.volume, out_dir / name);
      save_mask(sample.mask, out_dir / name / "mask.raw");

      ManifestEntry entry;
      entry.volume_path = name;
      entry.mask_path = std::string(name) + "/mask.raw";
      entry.participant_id = spec.participant_id;
      entry.eye = spec.eye;
      entry.grade = category == "questionable" ? GradeLabel::Questionable : sample.grade;
      manifest.entries.push_back(std::move(entry));
    }
  }
  save_manifest(manifest, out_dir / "manifest.json");
  // Reload so entry paths resolve exactly like a consumer's view.
  return load_manifest(out_dir / "manifest.json");
}

nlohmann::json to_json(const PhantomSpec& spec) {
  json lesions = json::array();
  for (const auto& plan : spec.lesions)
    lesions.push_back({{"kind", to_string(plan.kind)},
                       {"count", plan.count},
                       {"size_px", {plan.size_px[0], plan.size_px[1]}},
                       {"amplitude_px", {plan.amplitude_px[0], plan.amplitude_px[1]}}});
  return json{
      {"n_bscans", spec.n_bscans},
      {"height", spec.height},
      {"width", spec.width},
      {"fov_mm", {spec.fov_mm[0], spec.fov_mm[1]}},
      {"background",
       {{"vitreous", spec.background.vitreous},
        {"inner_retina", spec.background.inner_retina},
        {"ez_line", spec.background.ez_line},
        {"sub_ez", spec.background.sub_ez},
        {"rpe_line", spec.background.rpe_line},
        {"choroid", spec.background.choroid},
        {"jitter_sigma", spec.background.jitter_sigma},
        {"undulation_px", spec.background.undulation_px}}},
      {"lesions", lesions},
      {"corruption", to_string(spec.corruption)},
      {"seed", spec.seed},
      {"participant_id", spec.participant_id},
      {"eye", to_string(spec.eye)},
  };
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  PhantomSpec spec;
  spec.n_bscans = j.value("n_bscans", spec.n_bscans);
  spec.height = j.value("height", spec.height);
  spec.width = j.value("width", spec.width);
  if (j.contains("fov_mm")) spec.fov_mm = {j["fov_mm"][0].get<double>(), j["fov_mm"][1].get<double>()};
  if (j.contains("background")) {
    const auto& bg = j["background"];
    spec.background.vitreous = bg.value("vitreous", spec.background.vitreous);
    spec.background.inner_retina = bg.value("inner_retina", spec.background.inner_retina);
    spec.background.ez_line = bg.value("ez_line", spec.background.ez_line);
    spec.background.sub_ez = bg.value("sub_ez", spec.background.sub_ez);
    spec.background.rpe_line = bg.value("rpe_line", spec.background.rpe_line);
    spec.background.choroid = bg.value("choroid", spec.background.choroid);
    spec.background.jitter_sigma = bg.value("jitter_sigma", spec.background.jitter_sigma);
    spec.background.undulation_px = bg.value("undulation_px", spec.background.undulation_px);
  }
  if (j.contains("lesions")) {
    for (const auto& jp : j["lesions"]) {
      LesionPlan plan;
      plan.kind = lesion_kind_from_string(jp.at("kind").get<std::string>());
      plan.count = jp.at("count").get<long>();
      if (jp.contains("size_px")) plan.size_px = {jp["size_px"][0].get<long>(), jp["size_px"][1].get<long>()};
      if (jp.contains("amplitude_px"))
        plan.amplitude_px = {jp["amplitude_px"][0].get<double>(), jp["amplitude_px"][1].get<double>()};
      spec.lesions.push_back(plan);
    }
  }
  spec.corruption = corruption_from_string(j.value("corruption", "none"));
  spec.seed = j.value("seed", spec.seed);
  spec.participant_id = j.value("participant_id", spec.participant_id);
  if (j.contains("eye")) spec.eye = eye_from_string(j["eye"].get<std::string>());
  spec.validate();
  return spec;
}

}  // namespace oct::phantom
