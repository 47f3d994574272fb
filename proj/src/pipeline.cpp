#include "octlesion/pipeline.hpp"

#include <atomic>
#include <fstream>
#include <thread>

#include <Eigen/Core>

#include "octlesion/checkpoint.hpp"
#include "octlesion/metrics.hpp"

namespace oct::pipe {

using nlohmann::json;

std::string to_string(StageReached stage) {
  switch (stage) {
    case StageReached::removed_ungradable: return "removed_ungradable";
    case StageReached::removed_outlier: return "removed_outlier";
    case StageReached::removed_control: return "removed_control";
    default: return "segmented";
  }
}

void RunConfig::validate() const {
  thresholds.validate();
  if (seg_mask_threshold < 0.0 || seg_mask_threshold > 1.0)
    throw std::invalid_argument("seg_mask_threshold out of [0,1]");
  if (out_dir.empty()) throw std::invalid_argument("out_dir is required");
}

json to_json(const RunConfig& cfg) {
  return {{"ungradable_model", cfg.ungradable_model.string()},
          {"ood_model_dir", cfg.ood_model_dir.string()},
          {"lesion_model", cfg.lesion_model.string()},
          {"seg_model_dir", cfg.seg_model_dir.string()},
          {"thresholds", gates::to_json(cfg.thresholds)},
          {"seg_mask_threshold", cfg.seg_mask_threshold},
          {"seed", cfg.seed},
          {"segment_all", cfg.segment_all},
          {"emit_masks", cfg.emit_masks}};
}

json to_json(const PipelineVerdict& v) {
  json out = {{"id", v.volume_id}};
  if (v.failed) {
    out["failed"] = true;
    out["error"] = v.error;
    return out;
  }
  out["stage"] = to_string(v.stage);
  if (v.p_ungradable) out["p_ungradable"] = *v.p_ungradable;
  if (v.ood_uncertainty) out["ood_uncertainty"] = *v.ood_uncertainty;
  if (v.p_lesion) out["p_lesion"] = *v.p_lesion;
  if (v.areas) {
    const auto& a = *v.areas;
    out["areas"] = {{"drusen_mm2", a.enface_area_mm2[kDrusen]},
                    {"rpd1_mm2", a.enface_area_mm2[kRpd1]},
                    {"rpd2to4_mm2", a.enface_area_mm2[kRpd234]},
                    {"rpd_all_mm2", a.rpd_combined_area_mm2},
                    {"pixels",
                     {{"drusen", a.total_pixels[kDrusen]},
                      {"rpd1", a.total_pixels[kRpd1]},
                      {"rpd2to4", a.total_pixels[kRpd234]}}}};
  }
  return out;
}

namespace {

struct WorkResult {
  PipelineVerdict verdict;
  std::optional<LesionMask> pred_mask;
  bool has_truth = false;
  std::array<double, 4> dice{0, 0, 0, 0};
  std::array<double, 4> truth_area{0, 0, 0, 0};
  double truth_rpd_all = 0.0;
};

std::string entry_id(const ManifestEntry& e) {
  const auto name = std::filesystem::path(e.volume_path).filename().string();
  return name.empty() ? e.participant_id + "_" + to_string(e.eye) : name;
}

}  // namespace

RunOutput run_pipeline(const DatasetManifest& manifest, const RunConfig& cfg) {
  cfg.validate();
  if (manifest.entries.empty()) throw std::invalid_argument("empty manifest");

  // Model artifacts are mandatory; failure to load aborts the run.
  const nn::MiniNet ungradable_net = nn::load_net(cfg.ungradable_model);
  const nn::MiniNet lesion_net = nn::load_net(cfg.lesion_model);
  const gates::EnsembleModel ood = gates::load_ensemble(cfg.ood_model_dir);
  const seg::SegEnsemble segmenter = seg::load_seg_ensemble(cfg.seg_model_dir);

  const std::size_t n = manifest.entries.size();
  std::vector<WorkResult> results(n);

  auto process = [&](std::size_t i) {
    const ManifestEntry& entry = manifest.entries[i];
    WorkResult& res = results[i];
    res.verdict.volume_id = entry_id(entry);
    OctVolume vol;
    try {
      vol = load_volume(entry.volume_path);
    } catch (const std::exception& ex) {
      res.verdict.failed = true;
      res.verdict.error = ex.what();
      return;
    }

    const double p_ungradable = gates::predict_gate(ungradable_net, vol)[1];
    res.verdict.p_ungradable = p_ungradable;
    if (p_ungradable >= cfg.thresholds.ungradable_prob) {
      res.verdict.stage = StageReached::removed_ungradable;
      return;
    }

    const double uncertainty = gates::ood_uncertainty(ood, vol);
    res.verdict.ood_uncertainty = uncertainty;
    if (uncertainty >= cfg.thresholds.ood_uncertainty) {
      res.verdict.stage = StageReached::removed_outlier;
      return;
    }

    const double p_lesion = gates::predict_gate(lesion_net, vol)[1];
    res.verdict.p_lesion = p_lesion;
    if (!cfg.segment_all && p_lesion < cfg.thresholds.lesion_prob) {
      res.verdict.stage = StageReached::removed_control;
      return;
    }

    res.verdict.stage = StageReached::segmented;
    LesionMask pred = seg::predict_volume_mask(segmenter, vol, cfg.seg_mask_threshold);
    res.verdict.areas = seg::quantify(pred, vol.geometry());

    if (entry.has_mask()) {
      try {
        const LesionMask truth = load_mask(entry.mask_path, vol.n_bscans, vol.height, vol.width);
        res.has_truth = true;
        for (std::uint8_t cat = 1; cat <= 3; ++cat) res.dice[cat] = metrics::dice(pred, truth, cat);
        const seg::LesionAreas ta = seg::quantify(truth, vol.geometry());
        res.truth_area = ta.enface_area_mm2;
        res.truth_rpd_all = ta.rpd_combined_area_mm2;
      } catch (const std::exception&) {
        res.has_truth = false;  // a broken truth mask never fails the run
      }
    }
    if (cfg.emit_masks) res.pred_mask = std::move(pred);
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned n_threads =
      std::min<unsigned>(cfg.n_threads > 0 ? static_cast<unsigned>(cfg.n_threads) : hw,
                         static_cast<unsigned>(n));
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (unsigned t = 0; t < n_threads; ++t)
      workers.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) process(i);
      });
    for (auto& w : workers) w.join();
  }

  // Aggregate and write everything in manifest order.
  std::filesystem::create_directories(cfg.out_dir);
  {
    std::ofstream out(cfg.out_dir / "verdicts.jsonl");
    if (!out) throw std::runtime_error("cannot write verdicts.jsonl");
    for (const auto& res : results) out << to_json(res.verdict).dump() << "\n";
  }
  {
    std::ofstream out(cfg.out_dir / "config.json");
    out << to_json(cfg).dump(2) << "\n";
  }
  if (cfg.emit_masks) {
    for (const auto& res : results)
      if (res.pred_mask) save_mask(*res.pred_mask, cfg.out_dir / "pred_masks" / (res.verdict.volume_id + ".raw"));
  }

  json counts = {{"removed_ungradable", 0}, {"removed_outlier", 0}, {"removed_control", 0},
                 {"segmented", 0},          {"failed", 0}};
  for (const auto& res : results) {
    if (res.verdict.failed)
      counts["failed"] = counts["failed"].get<long>() + 1;
    else
      counts[to_string(res.verdict.stage)] = counts[to_string(res.verdict.stage)].get<long>() + 1;
  }

  json metrics_json = {{"n_volumes", n}, {"counts", counts}};

  // Agreement against truth masks over segmented volumes, when available.
  std::vector<std::size_t> compared;
  for (std::size_t i = 0; i < n; ++i)
    if (results[i].has_truth && results[i].verdict.stage == StageReached::segmented) compared.push_back(i);
  if (!compared.empty()) {
    json against;
    const char* names[4] = {nullptr, "drusen", "rpd1", "rpd2to4"};
    json dice_json;
    for (int cat = 1; cat <= 3; ++cat) {
      double sum = 0.0;
      for (std::size_t i : compared) sum += results[i].dice[static_cast<std::size_t>(cat)];
      dice_json[names[cat]] = sum / static_cast<double>(compared.size());
    }
    against["mean_dice"] = dice_json;
    against["n_compared"] = compared.size();

    if (compared.size() >= 2) {
      json icc_json;
      for (int cat = 1; cat <= 3; ++cat) {
        Eigen::MatrixXd pair(static_cast<Eigen::Index>(compared.size()), 2);
        for (std::size_t r = 0; r < compared.size(); ++r) {
          const auto& res = results[compared[r]];
          pair(static_cast<Eigen::Index>(r), 0) = res.verdict.areas->enface_area_mm2[static_cast<std::size_t>(cat)];
          pair(static_cast<Eigen::Index>(r), 1) = res.truth_area[static_cast<std::size_t>(cat)];
        }
        const auto icc = metrics::icc_absolute(pair);
        icc_json[names[cat]] = {{"icc", icc.icc},
                                {"ci_low", icc.ci_low},
                                {"ci_high", icc.ci_high},
                                {"bin", metrics::to_string(icc.bin)}};
      }
      Eigen::MatrixXd pair(static_cast<Eigen::Index>(compared.size()), 2);
      for (std::size_t r = 0; r < compared.size(); ++r) {
        pair(static_cast<Eigen::Index>(r), 0) = results[compared[r]].verdict.areas->rpd_combined_area_mm2;
        pair(static_cast<Eigen::Index>(r), 1) = results[compared[r]].truth_rpd_all;
      }
      const auto icc = metrics::icc_absolute(pair);
      icc_json["rpd_all"] = {{"icc", icc.icc},
                             {"ci_low", icc.ci_low},
                             {"ci_high", icc.ci_high},
                             {"bin", metrics::to_string(icc.bin)}};
      against["area_icc"] = icc_json;
    }
    metrics_json["against_truth"] = against;
  }

  {
    std::ofstream out(cfg.out_dir / "metrics.json");
    if (!out) throw std::runtime_error("cannot write metrics.json");
    out << metrics_json.dump(2) << "\n";
  }

  RunOutput output;
  for (auto& res : results) output.verdicts.push_back(std::move(res.verdict));
  output.metrics = std::move(metrics_json);
  return output;
}

}  // namespace oct::pipe
