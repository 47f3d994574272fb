#include "octlesion/manifest.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "octlesion/rng.hpp"

namespace oct {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    default: return "unassigned";
  }
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "unassigned") return Split::unassigned;
  throw std::invalid_argument("invalid split value: " + s);
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_volume(const OctVolume& vol, const std::filesystem::path& dir) {
  vol.validate();
  std::filesystem::create_directories(dir);
  json meta = {
      {"participant_id", vol.participant_id},
      {"eye", to_string(vol.eye)},
      {"n_bscans", vol.n_bscans},
      {"height", vol.height},
      {"width", vol.width},
      {"fov_mm", {vol.fov_mm[0], vol.fov_mm[1]}},
  };
  write_file(dir / "meta.json", meta.dump(2) + "\n");
  write_file(dir / "volume.raw",
             std::string(reinterpret_cast<const char*>(vol.voxels.data()), vol.voxels.size()));
}

OctVolume load_volume(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) throw std::runtime_error("missing file: " + meta_path.string());
  json meta = json::parse(read_file(meta_path));

  OctVolume vol;
  vol.participant_id = meta.at("participant_id").get<std::string>();
  vol.eye = eye_from_string(meta.at("eye").get<std::string>());
  vol.n_bscans = meta.at("n_bscans").get<long>();
  vol.height = meta.at("height").get<long>();
  vol.width = meta.at("width").get<long>();
  const auto fov = meta.at("fov_mm");
  if (!fov.is_array() || fov.size() != 2) throw std::runtime_error("invalid fov_mm in " + meta_path.string());
  vol.fov_mm = {fov[0].get<double>(), fov[1].get<double>()};
  if (vol.n_bscans < 1 || vol.height < 8 || vol.width < 8 || vol.fov_mm[0] <= 0 || vol.fov_mm[1] <= 0)
    throw std::runtime_error("invalid metadata values in " + meta_path.string());

  const auto raw_path = dir / "volume.raw";
  if (!std::filesystem::exists(raw_path)) throw std::runtime_error("missing file: " + raw_path.string());
  const std::string raw = read_file(raw_path);
  if (static_cast<long>(raw.size()) != vol.numel())
    throw std::runtime_error("volume.raw size " + std::to_string(raw.size()) + " does not match declared shape (" +
                             std::to_string(vol.numel()) + " bytes) in " + dir.string());
  vol.voxels.assign(raw.begin(), raw.end());
  vol.validate();
  return vol;
}

void save_mask(const LesionMask& mask, const std::filesystem::path& path) {
  mask.validate();
  std::filesystem::create_directories(path.parent_path());
  write_file(path, std::string(reinterpret_cast<const char*>(mask.labels.data()), mask.labels.size()));
}

LesionMask load_mask(const std::filesystem::path& path, long n_bscans, long height, long width) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("missing file: " + path.string());
  const std::string raw = read_file(path);
  if (static_cast<long>(raw.size()) != n_bscans * height * width)
    throw std::runtime_error("mask size " + std::to_string(raw.size()) + " does not match expected shape in " +
                             path.string());
  LesionMask mask = LesionMask::zeros(n_bscans, height, width);
  mask.labels.assign(raw.begin(), raw.end());
  mask.validate();
  return mask;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    json je = {
        {"volume", e.volume_path},
        {"participant_id", e.participant_id},
        {"eye", to_string(e.eye)},
        {"grade", static_cast<int>(e.grade)},
    };
    if (e.has_mask()) je["mask"] = e.mask_path;
    if (e.split != Split::unassigned) je["split"] = to_string(e.split);
    entries.push_back(std::move(je));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file(path, json{{"entries", entries}}.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const json root = json::parse(read_file(path));
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  DatasetManifest manifest;
  for (const auto& je : root.at("entries")) {
    ManifestEntry e;
    const std::filesystem::path vol_path = je.at("volume").get<std::string>();
    e.volume_path = (vol_path.is_absolute() ? vol_path : base / vol_path).lexically_normal().string();
    if (je.contains("mask")) {
      const std::filesystem::path mask_path = je.at("mask").get<std::string>();
      e.mask_path = (mask_path.is_absolute() ? mask_path : base / mask_path).lexically_normal().string();
    }
    e.participant_id = je.at("participant_id").get<std::string>();
    e.eye = eye_from_string(je.at("eye").get<std::string>());
    e.grade = grade_from_int(je.at("grade").get<int>());
    e.split = je.contains("split") ? split_from_string(je.at("split").get<std::string>()) : Split::unassigned;
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

DatasetManifest split_dataset(const DatasetManifest& manifest, std::array<double, 3> ratios,
                              std::uint64_t seed) {
  if (manifest.entries.empty()) throw std::invalid_argument("cannot split an empty manifest");
  for (double r : ratios)
    if (r <= 0.0) throw std::invalid_argument("split ratios must be positive");
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
  for (const auto& e : manifest.entries)
    if (e.split != Split::unassigned) throw std::invalid_argument("manifest already has split assignments");

  // Participants in first-appearance order, then a seeded shuffle.
  std::vector<std::string> participants;
  std::map<std::string, long> eye_count;
  for (const auto& e : manifest.entries) {
    if (eye_count.find(e.participant_id) == eye_count.end()) participants.push_back(e.participant_id);
    ++eye_count[e.participant_id];
  }
  Rng rng(seed);
  rng.shuffle(participants);

  const long total_eyes = static_cast<long>(manifest.entries.size());
  const double train_target = ratios[0] * total_eyes;
  const double val_target = (ratios[0] + ratios[1]) * total_eyes;

  std::map<std::string, Split> assignment;
  double cumulative = 0.0;
  for (const auto& pid : participants) {
    Split s = Split::test;
    if (cumulative < train_target)
      s = Split::train;
    else if (cumulative < val_target)
      s = Split::val;
    assignment[pid] = s;
    cumulative += static_cast<double>(eye_count[pid]);
  }

  DatasetManifest out = manifest;
  for (auto& e : out.entries) e.split = assignment.at(e.participant_id);
  return out;
}

std::vector<std::string> validate_manifest(const DatasetManifest& manifest, bool check_files) {
  std::vector<std::string> violations;

  std::map<std::string, std::set<Split>> splits_of;
  for (const auto& e : manifest.entries)
    if (e.split != Split::unassigned) splits_of[e.participant_id].insert(e.split);
  for (const auto& [pid, splits] : splits_of)
    if (splits.size() > 1)
      violations.push_back("participant " + pid + " appears in " + std::to_string(splits.size()) +
                           " different splits");

  if (!check_files) return violations;

  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    const std::string tag = "entry " + std::to_string(i) + " (" + e.volume_path + ")";
    OctVolume vol;
    try {
      vol = load_volume(e.volume_path);
    } catch (const std::exception& ex) {
      violations.push_back(tag + ": volume does not load: " + ex.what());
      continue;
    }
    if (!e.has_mask()) continue;
    try {
      LesionMask mask = load_mask(e.mask_path, vol.n_bscans, vol.height, vol.width);
      (void)mask;
    } catch (const std::exception& ex) {
      violations.push_back(tag + ": mask does not load or mismatches volume shape: " + ex.what());
    }
  }
  return violations;
}

}  // namespace oct
