#include "octlesion/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <set>

#include "octlesion/checkpoint.hpp"
#include "octlesion/metrics.hpp"

namespace oct::seg {

using nlohmann::json;

BscanSet collect_bscans(const DatasetManifest& manifest, Split split, BscanSelection selection,
                        std::uint64_t seed) {
  BscanSet lesion_bearing, lesion_free;
  for (const auto& e : manifest.entries) {
    if (e.split != split || !e.has_mask()) continue;
    const OctVolume vol = load_volume(e.volume_path);
    const LesionMask mask = load_mask(e.mask_path, vol.n_bscans, vol.height, vol.width);
    for (long b = 0; b < vol.n_bscans; ++b) {
      BscanSample sample;
      sample.participant_id = e.participant_id;
      sample.image = Plane8(vol.height, vol.width);
      std::copy(vol.voxels.begin() + b * vol.height * vol.width,
                vol.voxels.begin() + (b + 1) * vol.height * vol.width, sample.image.v.begin());
      sample.mask = mask.plane(b);
      const bool has_lesion =
          std::any_of(sample.mask.v.begin(), sample.mask.v.end(), [](std::uint8_t v) { return v != 0; });
      (has_lesion ? lesion_bearing : lesion_free).push_back(std::move(sample));
    }
  }

  if (selection == BscanSelection::all) {
    BscanSet all = std::move(lesion_bearing);
    all.insert(all.end(), std::make_move_iterator(lesion_free.begin()),
               std::make_move_iterator(lesion_free.end()));
    return all;
  }

  // Lesion planes plus an equal-size draw of lesion-free ones.
  Rng rng(seed);
  std::vector<std::size_t> order(lesion_free.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t keep = std::min(lesion_free.size(), lesion_bearing.size());
  BscanSet out = std::move(lesion_bearing);
  for (std::size_t i = 0; i < keep; ++i) out.push_back(std::move(lesion_free[order[i]]));
  return out;
}

FoldPlan plan_folds(const BscanSet& set, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("fold count must be >= 2");
  std::vector<std::string> participants;
  std::map<std::string, int> fold_of;
  for (const auto& s : set)
    if (!fold_of.count(s.participant_id)) {
      fold_of[s.participant_id] = -1;
      participants.push_back(s.participant_id);
    }
  if (static_cast<int>(participants.size()) < k)
    throw std::invalid_argument("fewer participants (" + std::to_string(participants.size()) +
                                ") than folds (" + std::to_string(k) + ")");
  Rng rng(seed);
  rng.shuffle(participants);
  for (std::size_t i = 0; i < participants.size(); ++i)
    fold_of[participants[i]] = static_cast<int>(i % static_cast<std::size_t>(k));

  FoldPlan plan;
  plan.k = k;
  plan.assignments.reserve(set.size());
  for (const auto& s : set) plan.assignments.push_back(fold_of.at(s.participant_id));
  return plan;
}

namespace {

nn::Tensor planes_to_batch(const std::vector<const Plane8*>& planes) {
  const long H = planes.front()->height, W = planes.front()->width;
  nn::Tensor batch = nn::Tensor::zeros({static_cast<Eigen::Index>(planes.size()), 1, H, W});
  for (std::size_t i = 0; i < planes.size(); ++i) {
    if (planes[i]->height != H || planes[i]->width != W)
      throw std::invalid_argument("B-scans in a batch must share one shape");
    double* dst = batch.data() + static_cast<Eigen::Index>(i) * H * W;
    for (long j = 0; j < H * W; ++j) dst[j] = static_cast<double>(planes[i]->v[static_cast<std::size_t>(j)]) / 255.0;
  }
  return batch;
}

// Foreground-mean Dice with global per-category counts over the fold.
double fold_dice(const nn::MiniNet& net, const BscanSet& set, const std::vector<std::size_t>& val_items) {
  std::array<long, 4> inter{0, 0, 0, 0}, na{0, 0, 0, 0}, nb{0, 0, 0, 0};
  constexpr std::size_t kChunk = 8;
  for (std::size_t at = 0; at < val_items.size(); at += kChunk) {
    std::vector<const Plane8*> chunk;
    for (std::size_t i = at; i < std::min(at + kChunk, val_items.size()); ++i)
      chunk.push_back(&set[val_items[i]].image);
    const nn::Tensor probs = net.infer(planes_to_batch(chunk));
    const long H = probs.dim(2), W = probs.dim(3), C = probs.dim(1);
    for (Eigen::Index n = 0; n < probs.dim(0); ++n) {
      ProbMap pm(C, H, W);
      std::copy(probs.data() + n * C * H * W, probs.data() + (n + 1) * C * H * W, pm.v.begin());
      const Plane8 pred = metrics::discretize_probs(pm, 0.0);
      const Plane8& truth = set[val_items[at + static_cast<std::size_t>(n)]].mask;
      for (long j = 0; j < H * W; ++j) {
        const std::uint8_t p = pred.v[static_cast<std::size_t>(j)], t = truth.v[static_cast<std::size_t>(j)];
        for (std::uint8_t cat = 1; cat <= 3; ++cat) {
          na[cat] += p == cat;
          nb[cat] += t == cat;
          inter[cat] += (p == cat) && (t == cat);
        }
      }
    }
  }
  double total = 0.0;
  for (int cat = 1; cat <= 3; ++cat) {
    const long denom = na[static_cast<std::size_t>(cat)] + nb[static_cast<std::size_t>(cat)];
    total += denom == 0 ? 1.0 : 2.0 * static_cast<double>(inter[static_cast<std::size_t>(cat)]) /
                                     static_cast<double>(denom);
  }
  return total / 3.0;
}

gates::TrainLog train_fold(const BscanSet& set, const FoldPlan& plan, const gates::TrainConfig& cfg,
                           int depth, int base_width, int fold, nn::MiniNet* out_net) {
  std::vector<std::size_t> train_items, val_items;
  for (std::size_t i = 0; i < set.size(); ++i)
    (plan.assignments[i] == fold ? val_items : train_items).push_back(i);
  if (train_items.empty() || val_items.empty())
    throw std::invalid_argument("fold " + std::to_string(fold) + " has an empty side");

  gates::TrainLog log;
  log.metric_name = "val_dice";
  std::array<bool, 4> seen{false, false, false, false};
  for (std::size_t i : train_items)
    for (std::uint8_t v : set[i].mask.v) seen[v] = true;
  for (int cat = 1; cat <= 3; ++cat)
    if (!seen[static_cast<std::size_t>(cat)])
      log.notes.push_back("warning: category " + std::to_string(cat) +
                          " absent from fold " + std::to_string(fold) + " training masks");

  const long H = set.front().image.height, W = set.front().image.width;
  const std::uint64_t fold_seed = cfg.seed + 101 * static_cast<std::uint64_t>(fold);
  nn::MiniNet net = nn::build_unet2d({H, W}, kNumMaskCategories, depth, base_width, fold_seed);

  Rng order_rng(Rng::derive(fold_seed, 2));
  std::vector<std::size_t> order = train_items;
  order_rng.shuffle(order);
  std::size_t cursor = 0;

  std::string best_bytes;
  long best_iter = 0;
  double best_dice = -1.0;

  for (long iter = 1; iter <= cfg.max_iterations; ++iter) {
    std::vector<Plane8> images, masks;
    images.reserve(static_cast<std::size_t>(cfg.batch_size));
    masks.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int s = 0; s < cfg.batch_size; ++s) {
      if (cursor >= order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      const BscanSample& sample = set[order[cursor++]];
      images.push_back(sample.image);
      masks.push_back(sample.mask);
      if (cfg.augment_enabled)
        aug::augment_bscan(images.back(), &masks.back(), cfg.augment,
                           Rng::derive(fold_seed, 0x2000 + static_cast<std::uint64_t>(iter) *
                                                                 static_cast<std::uint64_t>(cfg.batch_size) +
                                                             static_cast<std::uint64_t>(s)));
    }

    std::vector<const Plane8*> ptrs;
    for (const auto& img : images) ptrs.push_back(&img);
    const nn::Tensor input = planes_to_batch(ptrs);
    std::vector<long> targets;
    targets.reserve(static_cast<std::size_t>(cfg.batch_size) * H * W);
    for (const auto& m : masks)
      for (std::uint8_t v : m.v) targets.push_back(static_cast<long>(v));

    net.zero_grads();
    const nn::Tensor probs = net.forward(input, nn::Phase::train);
    const double loss = nn::cross_entropy(probs, targets);
    if (!std::isfinite(loss))
      throw std::runtime_error("non-finite segmentation loss at iteration " + std::to_string(iter));
    net.backward_from_output(nn::cross_entropy_grad(probs, targets));
    nn::adam_step(net, cfg.adam);

    if (iter % cfg.eval_every == 0) {
      const double d = fold_dice(net, set, val_items);
      const bool is_best = d > best_dice;
      if (is_best) {
        best_dice = d;
        best_iter = iter;
        best_bytes = nn::serialize_net(net);
      }
      log.entries.push_back({iter, loss, d, is_best});
      if (iter - best_iter >= cfg.patience_iterations) {
        log.notes.push_back("early stop at iteration " + std::to_string(iter) + ", best " +
                            std::to_string(best_iter));
        break;
      }
    }
  }
  log.best_iteration = best_iter;
  log.best_kappa = best_dice;
  *out_net = best_bytes.empty() ? std::move(net) : nn::deserialize_net(best_bytes);
  return log;
}

}  // namespace

SegTrainResult train_seg(const BscanSet& set, const FoldPlan& plan, const gates::TrainConfig& cfg,
                         int depth, int base_width, bool parallel) {
  cfg.validate();
  if (set.empty()) throw std::invalid_argument("empty B-scan set");
  if (plan.assignments.size() != set.size()) throw std::invalid_argument("fold plan does not match set");
  for (const auto& s : set)
    for (std::uint8_t v : s.mask.v)
      if (v > 3) throw std::invalid_argument("mask contains label codes outside {0,1,2,3}");

  SegTrainResult result;
  result.ensemble.depth = depth;
  result.ensemble.base_width = base_width;
  result.ensemble.members.resize(static_cast<std::size_t>(plan.k));
  result.fold_logs.resize(static_cast<std::size_t>(plan.k));

  auto run_fold = [&](int f) {
    result.fold_logs[static_cast<std::size_t>(f)] = train_fold(
        set, plan, cfg, depth, base_width, f, &result.ensemble.members[static_cast<std::size_t>(f)]);
  };
  if (parallel) {
    std::vector<std::future<void>> jobs;
    for (int f = 0; f < plan.k; ++f) jobs.push_back(std::async(std::launch::async, run_fold, f));
    for (auto& j : jobs) j.get();
  } else {
    for (int f = 0; f < plan.k; ++f) run_fold(f);
  }
  return result;
}

ProbMap probmap_from_tensor(const nn::Tensor& probs) {
  if (probs.rank() == 4 && probs.dim(0) == 1) {
    ProbMap pm(probs.dim(1), probs.dim(2), probs.dim(3));
    std::copy(probs.data(), probs.data() + probs.numel(), pm.v.begin());
    return pm;
  }
  if (probs.rank() == 3) {
    ProbMap pm(probs.dim(0), probs.dim(1), probs.dim(2));
    std::copy(probs.data(), probs.data() + probs.numel(), pm.v.begin());
    return pm;
  }
  throw std::invalid_argument("expected (1,C,H,W) or (C,H,W) probability tensor");
}

ProbMap predict_bscan(const SegEnsemble& ensemble, const Plane8& image) {
  if (ensemble.members.empty()) throw std::invalid_argument("empty segmentation ensemble");
  std::vector<const Plane8*> one{&image};
  ProbMap acc;
  for (const auto& member : ensemble.members) {
    const ProbMap pm = probmap_from_tensor(member.infer(planes_to_batch(one)));
    if (acc.v.empty())
      acc = pm;
    else {
      if (acc.v.size() != pm.v.size()) throw std::invalid_argument("members disagree on output shape");
      for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += pm.v[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(ensemble.members.size());
  for (double& v : acc.v) v *= inv;
  return acc;
}

Plane8 mask_from_probs(const ProbMap& probs, double lesion_prob_threshold) {
  return metrics::discretize_probs(probs, lesion_prob_threshold);
}

LesionMask predict_volume_mask(const SegEnsemble& ensemble, const OctVolume& vol, double threshold) {
  LesionMask mask = LesionMask::zeros(vol.n_bscans, vol.height, vol.width);
  for (long b = 0; b < vol.n_bscans; ++b) {
    Plane8 image(vol.height, vol.width);
    std::copy(vol.voxels.begin() + b * vol.height * vol.width,
              vol.voxels.begin() + (b + 1) * vol.height * vol.width, image.v.begin());
    const Plane8 plane = mask_from_probs(predict_bscan(ensemble, image), threshold);
    std::copy(plane.v.begin(), plane.v.end(), mask.labels.begin() + b * vol.height * vol.width);
  }
  return mask;
}

LesionAreas quantify(const LesionMask& mask, const ScanGeometry& geometry) {
  if (mask.n_bscans != geometry.n_bscans || mask.height != geometry.height || mask.width != geometry.width)
    throw std::invalid_argument("mask shape does not match geometry");
  const double col_pitch = geometry.fov_mm[0] / static_cast<double>(geometry.width);
  const double bscan_pitch = geometry.fov_mm[1] / static_cast<double>(geometry.n_bscans);
  const double cell = col_pitch * bscan_pitch;

  LesionAreas out;
  for (int cat = 1; cat <= 3; ++cat)
    out.pixels_per_bscan[static_cast<std::size_t>(cat)].assign(static_cast<std::size_t>(mask.n_bscans), 0);

  for (long b = 0; b < mask.n_bscans; ++b) {
    std::array<std::vector<char>, 4> col_hit;
    for (int cat = 1; cat <= 3; ++cat)
      col_hit[static_cast<std::size_t>(cat)].assign(static_cast<std::size_t>(mask.width), 0);
    std::vector<char> col_rpd(static_cast<std::size_t>(mask.width), 0);
    for (long r = 0; r < mask.height; ++r) {
      for (long c = 0; c < mask.width; ++c) {
        const std::uint8_t v = mask.at(b, r, c);
        if (v == 0) continue;
        ++out.pixels_per_bscan[v][static_cast<std::size_t>(b)];
        ++out.total_pixels[v];
        col_hit[v][static_cast<std::size_t>(c)] = 1;
        if (v == kRpd1 || v == kRpd234) col_rpd[static_cast<std::size_t>(c)] = 1;
      }
    }
    for (int cat = 1; cat <= 3; ++cat) {
      long n = 0;
      for (char h : col_hit[static_cast<std::size_t>(cat)]) n += h;
      out.enface_area_mm2[static_cast<std::size_t>(cat)] += static_cast<double>(n) * cell;
    }
    long n = 0;
    for (char h : col_rpd) n += h;
    out.rpd_combined_area_mm2 += static_cast<double>(n) * cell;
  }
  return out;
}

double enface_area_mm2(const LesionMask& mask, std::span<const std::uint8_t> categories,
                       const ScanGeometry& geometry) {
  if (mask.n_bscans != geometry.n_bscans || mask.height != geometry.height || mask.width != geometry.width)
    throw std::invalid_argument("mask shape does not match geometry");
  const double cell = (geometry.fov_mm[0] / static_cast<double>(geometry.width)) *
                      (geometry.fov_mm[1] / static_cast<double>(geometry.n_bscans));
  double area = 0.0;
  std::vector<char> col_hit;
  for (long b = 0; b < mask.n_bscans; ++b) {
    col_hit.assign(static_cast<std::size_t>(mask.width), 0);
    for (long r = 0; r < mask.height; ++r)
      for (long c = 0; c < mask.width; ++c) {
        const std::uint8_t v = mask.at(b, r, c);
        if (v != 0 && std::find(categories.begin(), categories.end(), v) != categories.end())
          col_hit[static_cast<std::size_t>(c)] = 1;
      }
    long n = 0;
    for (char h : col_hit) n += h;
    area += static_cast<double>(n) * cell;
  }
  return area;
}

void save_seg_ensemble(const SegEnsemble& ensemble, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["n_members"] = ensemble.members.size();
  manifest["depth"] = ensemble.depth;
  manifest["base_width"] = ensemble.base_width;
  json members = json::array();
  for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "fold_%02zu.net", i);
    nn::save_net(ensemble.members[i], dir / name);
    members.push_back({{"file", name}});
  }
  manifest["members"] = members;
  std::ofstream out(dir / "ensemble.json");
  if (!out) throw std::runtime_error("cannot write segmentation ensemble manifest");
  out << manifest.dump(2) << "\n";
}

SegEnsemble load_seg_ensemble(const std::filesystem::path& dir) {
  std::ifstream in(dir / "ensemble.json");
  if (!in) throw std::runtime_error("missing segmentation ensemble manifest in " + dir.string());
  json manifest;
  in >> manifest;
  SegEnsemble ens;
  ens.depth = manifest.value("depth", ens.depth);
  ens.base_width = manifest.value("base_width", ens.base_width);
  for (const auto& jm : manifest.at("members")) ens.members.push_back(nn::load_net(dir / jm.at("file").get<std::string>()));
  if (ens.members.empty()) throw std::runtime_error("segmentation ensemble checkpoint is empty");
  return ens;
}

void save_probmaps(const std::vector<ProbMap>& maps, const std::filesystem::path& dir) {
  if (maps.empty()) throw std::invalid_argument("no probability maps to save");
  std::filesystem::create_directories(dir);
  const json header = {{"count", maps.size()},
                       {"channels", maps.front().channels},
                       {"height", maps.front().height},
                       {"width", maps.front().width},
                       {"dtype", "float32"},
                       {"order", "[map][channel][row][col]"}};
  std::ofstream hout(dir / "probs.json");
  hout << header.dump(2) << "\n";
  std::ofstream out(dir / "probs.raw", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write probability maps");
  for (const auto& m : maps) {
    if (m.channels != maps.front().channels || m.height != maps.front().height || m.width != maps.front().width)
      throw std::invalid_argument("probability maps differ in shape");
    for (double v : m.v) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
  }
}

std::vector<ProbMap> load_probmaps(const std::filesystem::path& dir) {
  std::ifstream hin(dir / "probs.json");
  if (!hin) throw std::runtime_error("missing probs.json in " + dir.string());
  json header;
  hin >> header;
  const std::size_t count = header.at("count").get<std::size_t>();
  const long C = header.at("channels").get<long>(), H = header.at("height").get<long>(),
             W = header.at("width").get<long>();
  std::ifstream in(dir / "probs.raw", std::ios::binary);
  if (!in) throw std::runtime_error("missing probs.raw in " + dir.string());
  std::vector<ProbMap> maps;
  for (std::size_t i = 0; i < count; ++i) {
    ProbMap m(C, H, W);
    for (double& v : m.v) {
      float f;
      in.read(reinterpret_cast<char*>(&f), sizeof(float));
      if (!in) throw std::runtime_error("probability map payload truncated");
      v = static_cast<double>(f);
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

}  // namespace oct::seg
