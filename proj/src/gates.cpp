#include "octlesion/gates.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <set>

#include "octlesion/checkpoint.hpp"
#include "octlesion/metrics.hpp"

namespace oct::gates {

using nlohmann::json;

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2 (batchnorm training)");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (patience_iterations < eval_every)
    throw std::invalid_argument("patience_iterations must be >= eval_every");
  if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (width_scale <= 0) throw std::invalid_argument("width_scale must be > 0");
  augment.validate();
}

json to_json(const TrainConfig& c) {
  return {{"adam", to_json(c.adam)},
          {"batch_size", c.batch_size},
          {"max_iterations", c.max_iterations},
          {"patience_iterations", c.patience_iterations},
          {"eval_every", c.eval_every},
          {"augment", to_json(c.augment)},
          {"augment_enabled", c.augment_enabled},
          {"width_scale", c.width_scale},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  if (j.contains("adam")) c.adam = nn::adam_config_from_json(j["adam"]);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.patience_iterations = j.value("patience_iterations", c.patience_iterations);
  c.eval_every = j.value("eval_every", c.eval_every);
  if (j.contains("augment")) c.augment = aug::augment_config_from_json(j["augment"]);
  c.augment_enabled = j.value("augment_enabled", c.augment_enabled);
  c.width_scale = j.value("width_scale", c.width_scale);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string to_string(GateTask task) {
  return task == GateTask::ungradable_vs_rest ? "ungradable_vs_rest" : "lesion_vs_control";
}

std::optional<int> task_label(GradeLabel grade, GateTask task) {
  switch (task) {
    case GateTask::ungradable_vs_rest:
      if (grade == GradeLabel::Ungradable) return 1;
      if (grade == GradeLabel::NoLesion || grade == GradeLabel::MoreThanOne) return 0;
      return std::nullopt;  // one-lesion and questionable volumes stay out
    case GateTask::lesion_vs_control:
      if (grade == GradeLabel::MoreThanOne) return 1;
      if (grade == GradeLabel::NoLesion) return 0;
      return std::nullopt;
  }
  return std::nullopt;
}

VolumeSet load_volume_set(const DatasetManifest& manifest, Split split) {
  VolumeSet set;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    set.volumes.push_back(load_volume(e.volume_path));
    set.grades.push_back(e.grade);
    set.participant_ids.push_back(e.participant_id);
  }
  return set;
}

// ---------------------------------------------------------------------------
// BalancedSampler

BalancedSampler::BalancedSampler(std::vector<int> categories, int batch_size, std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::set<int> values(categories.begin(), categories.end());
  if (values.empty()) throw std::invalid_argument("balanced sampler needs a nonempty dataset");
  cat_values_.assign(values.begin(), values.end());
  items_.resize(cat_values_.size());
  cursor_.assign(cat_values_.size(), 0);
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const auto c = static_cast<std::size_t>(
        std::find(cat_values_.begin(), cat_values_.end(), categories[i]) - cat_values_.begin());
    items_[c].push_back(i);
  }
  for (auto& q : items_) {
    if (q.empty()) throw std::invalid_argument("balanced sampler has an empty category");
    rng_.shuffle(q);
  }
}

std::size_t BalancedSampler::draw_from(std::size_t cat) {
  auto& q = items_[cat];
  auto& pos = cursor_[cat];
  if (pos >= q.size()) {
    rng_.shuffle(q);
    pos = 0;
  }
  return q[pos++];
}

std::vector<std::size_t> BalancedSampler::next_batch() {
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size_));
  for (int i = 0; i < batch_size_; ++i) {
    out.push_back(draw_from(slot_ % items_.size()));
    ++slot_;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

void TrainLog::to_jsonl(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& note : notes) out << json{{"note", note}}.dump() << "\n";
  for (const auto& e : entries)
    out << json{{"iteration", e.iteration}, {"loss", e.loss}, {metric_name, e.val_kappa}, {"best", e.is_best}}
               .dump()
        << "\n";
}

nn::Tensor volumes_to_batch(std::span<const OctVolume* const> volumes) {
  if (volumes.empty()) throw std::invalid_argument("empty batch");
  const OctVolume& first = *volumes.front();
  nn::Tensor batch = nn::Tensor::zeros(
      {static_cast<Eigen::Index>(volumes.size()), 1, first.n_bscans, first.height, first.width});
  const Eigen::Index stride = first.numel();
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    const OctVolume& v = *volumes[i];
    if (v.n_bscans != first.n_bscans || v.height != first.height || v.width != first.width)
      throw std::invalid_argument("volumes in a batch must share one shape");
    double* dst = batch.data() + static_cast<Eigen::Index>(i) * stride;
    for (Eigen::Index j = 0; j < stride; ++j) dst[j] = static_cast<double>(v.voxels[static_cast<std::size_t>(j)]) / 255.0;
  }
  return batch;
}

nn::Tensor volume_to_input(const OctVolume& vol) {
  const OctVolume* ptr = &vol;
  return volumes_to_batch(std::span<const OctVolume* const>(&ptr, 1));
}

namespace {

struct TaskItems {
  std::vector<std::size_t> indices;
  std::vector<int> labels;
  long excluded = 0;
};

TaskItems select_task_items(const VolumeSet& set, GateTask task) {
  TaskItems items;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto label = task_label(set.grades[i], task);
    if (!label) {
      ++items.excluded;
      continue;
    }
    items.indices.push_back(i);
    items.labels.push_back(*label);
  }
  return items;
}

double validation_kappa(const nn::MiniNet& net, const VolumeSet& val, const TaskItems& items) {
  std::vector<int> predicted, truth;
  constexpr std::size_t kChunk = 8;
  for (std::size_t at = 0; at < items.indices.size(); at += kChunk) {
    std::vector<const OctVolume*> chunk;
    for (std::size_t i = at; i < std::min(at + kChunk, items.indices.size()); ++i)
      chunk.push_back(&val.volumes[items.indices[i]]);
    const nn::Tensor probs = net.infer(volumes_to_batch(chunk));
    for (Eigen::Index n = 0; n < probs.dim(0); ++n) {
      predicted.push_back(probs[n * 2 + 1] >= 0.5 ? 1 : 0);
      truth.push_back(items.labels[at + static_cast<std::size_t>(n)]);
    }
  }
  return metrics::cohens_kappa(predicted, truth);
}

}  // namespace

GateTrainResult train_gate(const VolumeSet& train, const VolumeSet& val, GateTask task,
                           const TrainConfig& cfg) {
  cfg.validate();
  const TaskItems train_items = select_task_items(train, task);
  const TaskItems val_items = select_task_items(val, task);

  TrainLog log;
  log.notes.push_back("task " + to_string(task) + ": " + std::to_string(train_items.indices.size()) +
                      " training volumes, " + std::to_string(train_items.excluded) +
                      " excluded by grade (categories 2 and 4 are never used)");
  if (train_items.indices.empty() || val_items.indices.empty())
    throw std::invalid_argument("no usable volumes for task " + to_string(task));
  const bool has_both = std::count(train_items.labels.begin(), train_items.labels.end(), 1) > 0 &&
                        std::count(train_items.labels.begin(), train_items.labels.end(), 0) > 0;
  if (!has_both) throw std::invalid_argument("task " + to_string(task) + " needs both classes in training");

  const OctVolume& first = train.volumes[train_items.indices.front()];
  nn::MiniNet net = nn::build_classifier3d({first.n_bscans, first.height, first.width}, 2,
                                           cfg.width_scale, cfg.seed);
  BalancedSampler sampler(train_items.labels, cfg.batch_size, Rng::derive(cfg.seed, 1));

  std::string best_bytes;
  long best_iter = 0;
  double best_kappa = -2.0;

  for (long iter = 1; iter <= cfg.max_iterations; ++iter) {
    const auto batch_slots = sampler.next_batch();
    std::vector<OctVolume> augmented;
    std::vector<const OctVolume*> batch_vols;
    std::vector<long> targets;
    augmented.reserve(batch_slots.size());
    for (std::size_t s = 0; s < batch_slots.size(); ++s) {
      const std::size_t item = batch_slots[s];
      const OctVolume& vol = train.volumes[train_items.indices[item]];
      if (cfg.augment_enabled) {
        augmented.push_back(aug::augment_volume(
            vol, cfg.augment,
            Rng::derive(cfg.seed, 0x1000 + static_cast<std::uint64_t>(iter) * batch_slots.size() + s)));
        batch_vols.push_back(&augmented.back());
      } else {
        batch_vols.push_back(&vol);
      }
      targets.push_back(train_items.labels[item]);
    }

    const nn::Tensor input = volumes_to_batch(batch_vols);
    net.zero_grads();
    const nn::Tensor probs = net.forward(input, nn::Phase::train);
    const double loss = nn::cross_entropy(probs, targets);
    if (!std::isfinite(loss))
      throw std::runtime_error("non-finite training loss at iteration " + std::to_string(iter));
    net.backward_from_output(nn::cross_entropy_grad(probs, targets));
    nn::adam_step(net, cfg.adam);

    if (iter % cfg.eval_every == 0) {
      const double kappa = validation_kappa(net, val, val_items);
      const bool is_best = kappa > best_kappa;
      if (is_best) {
        best_kappa = kappa;
        best_iter = iter;
        best_bytes = nn::serialize_net(net);
      }
      log.entries.push_back({iter, loss, kappa, is_best});
      if (iter - best_iter >= cfg.patience_iterations) {
        log.notes.push_back("early stop at iteration " + std::to_string(iter) + ", best " +
                            std::to_string(best_iter));
        break;
      }
    }
  }

  log.best_iteration = best_iter;
  log.best_kappa = best_kappa;
  GateTrainResult result{best_bytes.empty() ? std::move(net) : nn::deserialize_net(best_bytes),
                         std::move(log)};
  return result;
}

std::array<double, 2> predict_gate(const nn::MiniNet& net, const OctVolume& vol) {
  const nn::Tensor probs = net.infer(volume_to_input(vol));
  if (probs.numel() != 2) throw std::invalid_argument("gate network does not emit 2 categories");
  return {probs[0], probs[1]};
}

EnsembleModel train_ensemble(const VolumeSet& train, const VolumeSet& val, const TrainConfig& cfg,
                             int n_members, GateTask task, bool parallel) {
  if (n_members < 2) throw std::invalid_argument("ensemble needs >= 2 members");
  EnsembleModel ens;
  ens.members.resize(static_cast<std::size_t>(n_members));
  ens.member_seeds.resize(static_cast<std::size_t>(n_members));

  auto train_member = [&](int i) {
    TrainConfig member_cfg = cfg;
    member_cfg.seed = cfg.seed + static_cast<std::uint64_t>(i);
    ens.member_seeds[static_cast<std::size_t>(i)] = member_cfg.seed;
    ens.members[static_cast<std::size_t>(i)] = train_gate(train, val, task, member_cfg).net;
  };

  if (parallel) {
    std::vector<std::future<void>> jobs;
    for (int i = 0; i < n_members; ++i)
      jobs.push_back(std::async(std::launch::async, train_member, i));
    for (auto& j : jobs) j.get();
  } else {
    for (int i = 0; i < n_members; ++i) train_member(i);
  }
  return ens;
}

double mean_member_variance(const std::vector<std::vector<double>>& member_probs) {
  if (member_probs.size() < 2) throw std::invalid_argument("ensemble variance needs >= 2 members");
  const std::size_t n_cats = member_probs.front().size();
  for (const auto& p : member_probs)
    if (p.size() != n_cats) throw std::invalid_argument("members disagree on category count");

  const double m = static_cast<double>(member_probs.size());
  double total = 0.0;
  for (std::size_t c = 0; c < n_cats; ++c) {
    double mean = 0.0;
    for (const auto& p : member_probs) mean += p[c];
    mean /= m;
    double var = 0.0;
    for (const auto& p : member_probs) var += (p[c] - mean) * (p[c] - mean);
    total += var / m;  // population variance
  }
  return total / static_cast<double>(n_cats);
}

double ood_uncertainty(const EnsembleModel& ensemble, const OctVolume& vol) {
  if (ensemble.members.size() < 2) throw std::invalid_argument("ensemble needs >= 2 members");
  const nn::Tensor input = volume_to_input(vol);
  std::vector<std::vector<double>> member_probs;
  for (const auto& member : ensemble.members) {
    const nn::Tensor probs = member.infer(input);
    member_probs.emplace_back(probs.data(), probs.data() + probs.numel());
  }
  return mean_member_variance(member_probs);
}

void save_ensemble(const EnsembleModel& ensemble, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["n_members"] = ensemble.members.size();
  json members = json::array();
  for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "member_%02zu.net", i);
    nn::save_net(ensemble.members[i], dir / name);
    members.push_back({{"file", name},
                       {"seed", i < ensemble.member_seeds.size() ? ensemble.member_seeds[i] : 0}});
  }
  manifest["members"] = members;
  std::ofstream out(dir / "ensemble.json");
  if (!out) throw std::runtime_error("cannot write ensemble manifest");
  out << manifest.dump(2) << "\n";
}

EnsembleModel load_ensemble(const std::filesystem::path& dir) {
  std::ifstream in(dir / "ensemble.json");
  if (!in) throw std::runtime_error("missing ensemble manifest in " + dir.string());
  json manifest;
  in >> manifest;
  EnsembleModel ens;
  for (const auto& jm : manifest.at("members")) {
    ens.members.push_back(nn::load_net(dir / jm.at("file").get<std::string>()));
    ens.member_seeds.push_back(jm.value("seed", std::uint64_t{0}));
  }
  if (ens.members.size() < 2) throw std::runtime_error("ensemble checkpoint has fewer than 2 members");
  return ens;
}

// ---------------------------------------------------------------------------
// Threshold calibration

double calibrate_threshold(std::span<const double> scores, std::span<const int> labels,
                           const ThresholdPolicy& policy) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("calibration needs matching nonempty scores and labels");
  const long pos = std::count(labels.begin(), labels.end(), 1);
  const long neg = static_cast<long>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("calibration needs both label categories");

  std::vector<double> candidates(scores.begin(), scores.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  candidates.push_back(candidates.back() + 1.0);  // all-negative operating point

  auto rates_at = [&](double t) {
    return metrics::rates(metrics::confusion_at(scores, labels, t));
  };

  switch (policy.kind) {
    case ThresholdPolicy::Kind::youden: {
      double best_t = candidates.front();
      double best_j = -2.0;
      for (double t : candidates) {
        const auto r = rates_at(t);
        const double j = r.sensitivity + r.specificity - 1.0;
        if (j > best_j || (j == best_j && t > best_t)) {  // ties: higher specificity
          best_j = j;
          best_t = t;
        }
      }
      return best_t;
    }
    case ThresholdPolicy::Kind::sens_at: {
      // Highest cut still reaching the sensitivity target (most specific).
      double best = candidates.front();
      for (double t : candidates)
        if (rates_at(t).sensitivity >= policy.target) best = std::max(best, t);
      return best;
    }
    case ThresholdPolicy::Kind::spec_at: {
      // Lowest cut reaching the specificity target (most sensitive).
      double best = candidates.back();
      for (double t : candidates)
        if (rates_at(t).specificity >= policy.target) best = std::min(best, t);
      return best;
    }
  }
  throw std::logic_error("unknown threshold policy");
}

void GateThresholds::validate() const {
  if (ungradable_prob < 0 || ungradable_prob > 1) throw std::invalid_argument("ungradable_prob out of [0,1]");
  if (lesion_prob < 0 || lesion_prob > 1) throw std::invalid_argument("lesion_prob out of [0,1]");
  if (ood_uncertainty < 0) throw std::invalid_argument("ood_uncertainty must be >= 0");
}

json to_json(const GateThresholds& t) {
  return {{"ungradable_prob", t.ungradable_prob},
          {"ood_uncertainty", t.ood_uncertainty},
          {"lesion_prob", t.lesion_prob}};
}

GateThresholds gate_thresholds_from_json(const json& j) {
  GateThresholds t;
  t.ungradable_prob = j.value("ungradable_prob", t.ungradable_prob);
  t.ood_uncertainty = j.value("ood_uncertainty", t.ood_uncertainty);
  t.lesion_prob = j.value("lesion_prob", t.lesion_prob);
  t.validate();
  return t;
}

}  // namespace oct::gates
