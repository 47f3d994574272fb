// Command-line front end for the OCT drusen/RPD pipeline: phantom corpus
// generation, dataset splitting, model training, the staged run, and the
// evaluation/plot-data commands.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "octlesion/builders.hpp"
#include "octlesion/checkpoint.hpp"
#include "octlesion/gates.hpp"
#include "octlesion/gradcheck.hpp"
#include "octlesion/manifest.hpp"
#include "octlesion/metrics.hpp"
#include "octlesion/phantom.hpp"
#include "octlesion/pipeline.hpp"
#include "octlesion/report.hpp"
#include "octlesion/segmenter.hpp"

namespace {

using nlohmann::json;

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  json j;
  in >> j;
  return j;
}

void write_json(const json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

oct::gates::TrainConfig load_train_config(const std::string& path, std::uint64_t seed, bool seed_set) {
  oct::gates::TrainConfig cfg;
  if (!path.empty()) cfg = oct::gates::train_config_from_json(load_json(path));
  if (seed_set) cfg.seed = seed;
  return cfg;
}

// Scores file: CSV with header "id,score,label".
void load_scores_csv(const std::filesystem::path& path, std::vector<double>& scores,
                     std::vector<int>& labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id, score, label;
    std::getline(ss, id, ',');
    std::getline(ss, score, ',');
    std::getline(ss, label, ',');
    scores.push_back(std::stod(score));
    labels.push_back(std::stoi(label));
  }
  if (scores.empty()) throw std::runtime_error("no rows in " + path.string());
}

std::vector<std::uint8_t> category_codes(const std::string& name) {
  if (name == "drusen") return {oct::kDrusen};
  if (name == "rpd1") return {oct::kRpd1};
  if (name == "rpd2to4") return {oct::kRpd234};
  if (name == "rpd_all") return {oct::kRpd1, oct::kRpd234};
  throw std::runtime_error("unknown category: " + name + " (use drusen|rpd1|rpd2to4|rpd_all)");
}

std::vector<double> default_froc_thresholds() {
  std::vector<double> t;
  for (int i = 19; i >= 1; --i) t.push_back(static_cast<double>(i) / 20.0);
  return t;
}

oct::gates::ThresholdPolicy parse_policy(const std::string& s) {
  if (s == "youden") return oct::gates::ThresholdPolicy::youden();
  if (s.rfind("sens_at:", 0) == 0) return oct::gates::ThresholdPolicy::sens_at(std::stod(s.substr(8)));
  if (s.rfind("spec_at:", 0) == 0) return oct::gates::ThresholdPolicy::spec_at(std::stod(s.substr(8)));
  throw std::runtime_error("unknown policy: " + s + " (use youden|sens_at:<x>|spec_at:<x>)");
}

struct GateScores {
  std::vector<double> scores;
  std::vector<int> labels;
};

GateScores gate_scores(const oct::nn::MiniNet& net, const oct::gates::VolumeSet& set,
                       oct::gates::GateTask task) {
  GateScores out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto label = oct::gates::task_label(set.grades[i], task);
    if (!label) continue;
    out.scores.push_back(oct::gates::predict_gate(net, set.volumes[i])[1]);
    out.labels.push_back(*label);
  }
  return out;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"OCT drusen/RPD detection, segmentation and quantification pipeline"};
  app.require_subcommand(1);

  // ---- phantom-gen ----
  auto* gen = app.add_subcommand("phantom-gen", "Generate a synthetic phantom corpus with masks");
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  long n_control = 0, n_single = 0, n_lesion = 0, n_questionable = 0, n_ungradable = 0, n_ood = 0;
  long g_bscans = 16, g_height = 64, g_width = 128;
  std::string gen_spec;
  gen->add_option("--out-dir", gen_out, "Output corpus directory")->required();
  gen->add_option("--seed", gen_seed, "Base seed");
  gen->add_option("--control", n_control, "Lesion-free volumes");
  gen->add_option("--single", n_single, "Single-lesion volumes (grade 2)");
  gen->add_option("--lesion", n_lesion, "Multi-lesion volumes (grade 3)");
  gen->add_option("--questionable", n_questionable, "Questionable volumes (grade 4)");
  gen->add_option("--ungradable", n_ungradable, "Corrupted volumes (grade 5, training corruptions)");
  gen->add_option("--ood", n_ood, "Optical-artifact volumes (held-out corruption)");
  gen->add_option("--bscans", g_bscans, "B-scans per volume");
  gen->add_option("--height", g_height, "Axial pixels per B-scan");
  gen->add_option("--width", g_width, "A-scans per B-scan");
  gen->add_option("--spec", gen_spec, "Base phantom spec JSON");
  gen->callback([&] {
    oct::phantom::PhantomSpec base;
    if (!gen_spec.empty()) base = oct::phantom::phantom_spec_from_json(load_json(gen_spec));
    base.n_bscans = g_bscans;
    base.height = g_height;
    base.width = g_width;
    const std::map<std::string, long> counts = {{"control", n_control},       {"single", n_single},
                                                {"lesion", n_lesion},         {"questionable", n_questionable},
                                                {"ungradable", n_ungradable}, {"ood", n_ood}};
    const auto manifest = oct::phantom::generate_dataset(counts, gen_seed, gen_out, base);
    std::cout << "wrote " << manifest.entries.size() << " volumes under " << gen_out << "\n";
  });

  // ---- split ----
  auto* split = app.add_subcommand("split", "Assign participant-disjoint train/val/test splits");
  std::string split_manifest, split_out;
  std::vector<double> ratios{0.6, 0.2, 0.2};
  std::uint64_t split_seed = 0;
  split->add_option("--manifest", split_manifest, "Input manifest JSON")->required();
  split->add_option("--out", split_out, "Output manifest path (default: in place)");
  split->add_option("--ratios", ratios, "train val test ratios")->expected(3);
  split->add_option("--seed", split_seed, "Shuffle seed");
  split->callback([&] {
    auto manifest = oct::load_manifest(split_manifest);
    auto assigned = oct::split_dataset(manifest, {ratios[0], ratios[1], ratios[2]}, split_seed);
    oct::save_manifest(assigned, split_out.empty() ? split_manifest : split_out);
    const auto violations = oct::validate_manifest(assigned, false);
    for (const auto& v : violations) std::cerr << "violation: " << v << "\n";
    if (!violations.empty()) throw std::runtime_error("split produced violations");
    std::cout << "split " << assigned.entries.size() << " volumes\n";
  });

  // ---- training commands ----
  struct TrainArgs {
    std::string manifest, out, config, log;
    std::uint64_t seed = 0;
    bool seed_set = false;
  };
  auto add_train_options = [](CLI::App* cmd, TrainArgs& args) {
    cmd->add_option("--manifest", args.manifest, "Split manifest JSON")->required();
    cmd->add_option("--out", args.out, "Output model path")->required();
    cmd->add_option("--config", args.config, "TrainConfig JSON");
    cmd->add_option("--log", args.log, "Training log JSONL path");
    cmd->add_option("--seed", args.seed, "Seed override")->each([&args](const std::string&) {
      args.seed_set = true;
    });
  };

  TrainArgs gate_args, lesion_args, ood_args, seg_args;
  int ood_members = 10;
  int seg_folds = 5, seg_depth = 3, seg_base_width = 8;
  std::string seg_selection = "balanced";

  auto* tg = app.add_subcommand("train-gate", "Train the ungradable classification gate");
  add_train_options(tg, gate_args);
  auto* tl = app.add_subcommand("train-lesion", "Train the drusen/RPD vs control classifier");
  add_train_options(tl, lesion_args);
  auto* to = app.add_subcommand("train-ood", "Train the deep-ensemble outlier detector");
  add_train_options(to, ood_args);
  to->add_option("--members", ood_members, "Ensemble size");
  auto* ts = app.add_subcommand("train-seg", "Train the cross-validated segmentation ensemble");
  add_train_options(ts, seg_args);
  ts->add_option("--folds", seg_folds, "Cross-validation folds");
  ts->add_option("--depth", seg_depth, "U-Net depth");
  ts->add_option("--base-width", seg_base_width, "U-Net base channel width");
  ts->add_option("--selection", seg_selection, "B-scan selection: balanced|all");

  auto run_gate_training = [&](const TrainArgs& args, oct::gates::GateTask task) {
    const auto manifest = oct::load_manifest(args.manifest);
    const auto train = oct::gates::load_volume_set(manifest, oct::Split::train);
    const auto val = oct::gates::load_volume_set(manifest, oct::Split::val);
    const auto cfg = load_train_config(args.config, args.seed, args.seed_set);
    auto result = oct::gates::train_gate(train, val, task, cfg);
    oct::nn::save_net(result.net, args.out);
    if (!args.log.empty()) result.log.to_jsonl(args.log);
    write_json(oct::gates::to_json(cfg), std::filesystem::path(args.out).string() + ".config.json");
    std::cout << "best validation kappa " << result.log.best_kappa << " at iteration "
              << result.log.best_iteration << "\n";
  };
  tg->callback([&] { run_gate_training(gate_args, oct::gates::GateTask::ungradable_vs_rest); });
  tl->callback([&] { run_gate_training(lesion_args, oct::gates::GateTask::lesion_vs_control); });

  to->callback([&] {
    const auto manifest = oct::load_manifest(ood_args.manifest);
    const auto train = oct::gates::load_volume_set(manifest, oct::Split::train);
    const auto val = oct::gates::load_volume_set(manifest, oct::Split::val);
    const auto cfg = load_train_config(ood_args.config, ood_args.seed, ood_args.seed_set);
    const auto ens = oct::gates::train_ensemble(train, val, cfg, ood_members);
    oct::gates::save_ensemble(ens, ood_args.out);
    write_json(oct::gates::to_json(cfg), std::filesystem::path(ood_args.out) / "train_config.json");
    std::cout << "trained " << ens.members.size() << " ensemble members\n";
  });

  ts->callback([&] {
    const auto manifest = oct::load_manifest(seg_args.manifest);
    const auto selection =
        seg_selection == "all" ? oct::seg::BscanSelection::all : oct::seg::BscanSelection::balanced;
    const auto cfg = load_train_config(seg_args.config, seg_args.seed, seg_args.seed_set);
    const auto set = oct::seg::collect_bscans(manifest, oct::Split::train, selection, cfg.seed);
    const auto plan = oct::seg::plan_folds(set, seg_folds, oct::Rng::derive(cfg.seed, 11));
    auto result = oct::seg::train_seg(set, plan, cfg, seg_depth, seg_base_width);
    oct::seg::save_seg_ensemble(result.ensemble, seg_args.out);
    if (!seg_args.log.empty())
      for (std::size_t f = 0; f < result.fold_logs.size(); ++f)
        result.fold_logs[f].to_jsonl(seg_args.log + ".fold" + std::to_string(f));
    write_json(oct::gates::to_json(cfg), std::filesystem::path(seg_args.out) / "train_config.json");
    std::cout << "trained " << result.ensemble.members.size() << " fold members on " << set.size()
              << " B-scans\n";
  });

  // ---- run ----
  auto* run = app.add_subcommand("run", "Run the staged pipeline over a manifest");
  std::string run_manifest, run_out, run_thresholds;
  oct::pipe::RunConfig run_cfg;
  std::string m_ungradable, m_ood, m_lesion, m_seg;
  run->add_option("--manifest", run_manifest, "Manifest JSON")->required();
  run->add_option("--ungradable-model", m_ungradable, "Ungradable gate checkpoint")->required();
  run->add_option("--ood-model", m_ood, "OOD ensemble directory")->required();
  run->add_option("--lesion-model", m_lesion, "Lesion classifier checkpoint")->required();
  run->add_option("--seg-model", m_seg, "Segmentation ensemble directory")->required();
  run->add_option("--thresholds", run_thresholds, "GateThresholds JSON");
  run->add_option("--seg-threshold", run_cfg.seg_mask_threshold, "Mask discretization threshold");
  run->add_option("--out-dir", run_out, "Output directory")->required();
  run->add_option("--seed", run_cfg.seed, "Run seed");
  run->add_option("--threads", run_cfg.n_threads, "Worker threads (0 = hardware)");
  run->add_flag("--segment-all", run_cfg.segment_all, "Segment every gated-in volume");
  bool no_masks = false;
  run->add_flag("--no-masks", no_masks, "Skip predicted-mask emission");
  run->callback([&] {
    run_cfg.ungradable_model = m_ungradable;
    run_cfg.ood_model_dir = m_ood;
    run_cfg.lesion_model = m_lesion;
    run_cfg.seg_model_dir = m_seg;
    run_cfg.out_dir = run_out;
    run_cfg.emit_masks = !no_masks;
    if (!run_thresholds.empty())
      run_cfg.thresholds = oct::gates::gate_thresholds_from_json(load_json(run_thresholds));
    const auto manifest = oct::load_manifest(run_manifest);
    const auto output = oct::pipe::run_pipeline(manifest, run_cfg);
    std::cout << output.metrics["counts"].dump() << "\n";
  });

  // ---- eval-cls ----
  auto* ec = app.add_subcommand("eval-cls", "Classification metrics and ROC/PR plot data");
  std::string ec_scores, ec_out = ".", ec_policy;
  double ec_threshold = 0.5;
  ec->add_option("--scores", ec_scores, "CSV with id,score,label rows")->required();
  ec->add_option("--threshold", ec_threshold, "Operating threshold");
  ec->add_option("--calibrate", ec_policy, "Calibrate threshold first: youden|sens_at:<x>|spec_at:<x>");
  ec->add_option("--out-dir", ec_out, "Output directory");
  ec->callback([&] {
    std::vector<double> scores;
    std::vector<int> labels;
    load_scores_csv(ec_scores, scores, labels);
    double threshold = ec_threshold;
    if (!ec_policy.empty())
      threshold = oct::gates::calibrate_threshold(scores, labels, parse_policy(ec_policy));
    const auto rep = oct::report::evaluate_classification(scores, labels, threshold);
    const std::filesystem::path out_dir(ec_out);
    write_json(oct::report::to_json(rep), out_dir / "metrics.json");
    oct::report::write_roc_csv(rep.roc, out_dir / "roc.csv");
    oct::report::write_pr_csv(rep.pr, out_dir / "pr.csv");
    std::cout << oct::report::to_json(rep).dump() << "\n";
  });

  // ---- eval-seg ----
  auto* es = app.add_subcommand("eval-seg", "Dice and area-agreement evaluation of the segmenter");
  std::string es_manifest, es_model, es_out = ".", es_split = "test";
  double es_threshold = 0.5;
  es->add_option("--manifest", es_manifest, "Manifest JSON (entries need masks)")->required();
  es->add_option("--seg-model", es_model, "Segmentation ensemble directory")->required();
  es->add_option("--split", es_split, "Split to evaluate (train|val|test|unassigned)");
  es->add_option("--seg-threshold", es_threshold, "Mask discretization threshold");
  es->add_option("--out-dir", es_out, "Output directory");
  es->callback([&] {
    const auto manifest = oct::load_manifest(es_manifest);
    const auto split = oct::split_from_string(es_split);
    const auto ens = oct::seg::load_seg_ensemble(es_model);
    const char* names[4] = {nullptr, "drusen", "rpd1", "rpd2to4"};

    std::vector<std::array<double, 4>> model_areas, truth_areas;
    std::vector<double> model_rpd, truth_rpd;
    std::array<double, 4> dice_sum{0, 0, 0, 0};
    long compared = 0;
    for (const auto& e : manifest.entries) {
      if (e.split != split || !e.has_mask()) continue;
      const auto vol = oct::load_volume(e.volume_path);
      const auto truth = oct::load_mask(e.mask_path, vol.n_bscans, vol.height, vol.width);
      const auto pred = oct::seg::predict_volume_mask(ens, vol, es_threshold);
      for (std::uint8_t cat = 1; cat <= 3; ++cat) dice_sum[cat] += oct::metrics::dice(pred, truth, cat);
      const auto ma = oct::seg::quantify(pred, vol.geometry());
      const auto ta = oct::seg::quantify(truth, vol.geometry());
      model_areas.push_back(ma.enface_area_mm2);
      truth_areas.push_back(ta.enface_area_mm2);
      model_rpd.push_back(ma.rpd_combined_area_mm2);
      truth_rpd.push_back(ta.rpd_combined_area_mm2);
      ++compared;
    }
    if (compared == 0) throw std::runtime_error("no masked volumes in split " + es_split);

    json out = {{"n_volumes", compared}};
    for (int cat = 1; cat <= 3; ++cat)
      out["mean_dice"][names[cat]] = dice_sum[static_cast<std::size_t>(cat)] / static_cast<double>(compared);
    if (compared >= 2) {
      auto icc_of = [&](auto select_model, auto select_truth, const char* key) {
        Eigen::MatrixXd pair(compared, 2);
        for (long i = 0; i < compared; ++i) {
          pair(i, 0) = select_model(static_cast<std::size_t>(i));
          pair(i, 1) = select_truth(static_cast<std::size_t>(i));
        }
        const auto icc = oct::metrics::icc_absolute(pair);
        out["area_icc"][key] = {{"icc", icc.icc},
                                {"ci_low", icc.ci_low},
                                {"ci_high", icc.ci_high},
                                {"bin", oct::metrics::to_string(icc.bin)}};
      };
      for (int cat = 1; cat <= 3; ++cat)
        icc_of([&](std::size_t i) { return model_areas[i][static_cast<std::size_t>(cat)]; },
               [&](std::size_t i) { return truth_areas[i][static_cast<std::size_t>(cat)]; }, names[cat]);
      icc_of([&](std::size_t i) { return model_rpd[i]; }, [&](std::size_t i) { return truth_rpd[i]; },
             "rpd_all");
    }
    write_json(out, std::filesystem::path(es_out) / "eval_seg.json");
    std::cout << out.dump() << "\n";
  });

  // ---- froc ----
  auto* fr = app.add_subcommand("froc", "Lesion-level FROC with bootstrap confidence intervals");
  std::string fr_manifest, fr_model, fr_out = ".", fr_category = "drusen", fr_split = "test";
  std::vector<double> fr_thresholds;
  int fr_bootstrap = 1000;
  std::uint64_t fr_seed = 0;
  fr->add_option("--manifest", fr_manifest, "Manifest JSON (entries need masks)")->required();
  fr->add_option("--seg-model", fr_model, "Segmentation ensemble directory")->required();
  fr->add_option("--split", fr_split, "Split to evaluate");
  fr->add_option("--category", fr_category, "drusen|rpd1|rpd2to4|rpd_all");
  fr->add_option("--thresholds", fr_thresholds, "Explicit threshold sweep (descending)");
  fr->add_option("--bootstrap", fr_bootstrap, "Bootstrap replicates");
  fr->add_option("--seed", fr_seed, "Bootstrap seed");
  fr->add_option("--out-dir", fr_out, "Output directory");
  fr->callback([&] {
    const auto manifest = oct::load_manifest(fr_manifest);
    const auto split = oct::split_from_string(fr_split);
    const auto ens = oct::seg::load_seg_ensemble(fr_model);
    const auto codes = category_codes(fr_category);

    std::vector<oct::ProbMap> maps;
    std::vector<oct::Plane8> truths;
    for (const auto& e : manifest.entries) {
      if (e.split != split || !e.has_mask()) continue;
      const auto vol = oct::load_volume(e.volume_path);
      const auto mask = oct::load_mask(e.mask_path, vol.n_bscans, vol.height, vol.width);
      for (long b = 0; b < vol.n_bscans; ++b) {
        oct::Plane8 image(vol.height, vol.width);
        std::copy(vol.voxels.begin() + b * vol.height * vol.width,
                  vol.voxels.begin() + (b + 1) * vol.height * vol.width, image.v.begin());
        maps.push_back(oct::seg::predict_bscan(ens, image));
        truths.push_back(mask.plane(b));
      }
    }
    if (maps.empty()) throw std::runtime_error("no masked volumes in split " + fr_split);
    const auto thresholds = fr_thresholds.empty() ? default_froc_thresholds() : fr_thresholds;
    const auto points = oct::metrics::froc(maps, truths, codes, thresholds, fr_bootstrap, fr_seed);
    oct::report::write_froc_csv(points, std::filesystem::path(fr_out) / ("froc_" + fr_category + ".csv"));
    std::cout << "froc_" << fr_category << ".csv: " << points.size() << " points over " << maps.size()
              << " B-scans\n";
  });

  // ---- gradcheck ----
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference verification of every layer type");
  double gc_h = 1e-5, gc_tol = 1e-4;
  gc->add_option("--step", gc_h, "Central-difference step");
  gc->add_option("--tol", gc_tol, "Max relative error tolerance");
  gc->callback([&] {
    oct::Rng rng(7);
    bool all_pass = true;
    auto check = [&](const std::string& name, oct::nn::MiniNet net, const oct::nn::Tensor& batch,
                     const std::vector<long>& targets) {
      const auto rep = oct::nn::grad_check(net, batch, targets, gc_h, gc_tol, 1500, 11);
      all_pass = all_pass && rep.pass;
      std::cout << (rep.pass ? "[PASS] " : "[FAIL] ") << name << ": max rel error "
                << rep.max_rel_error << " over " << rep.checked << " parameters (worst layer: "
                << (rep.worst_layer.empty() ? "-" : rep.worst_layer) << ")\n";
    };

    auto random_batch = [&](std::vector<Eigen::Index> shape) {
      oct::nn::Tensor t = oct::nn::Tensor::zeros(std::move(shape));
      for (Eigen::Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.0, 1.0);
      return t;
    };

    check("classifier3d (conv3d/batchnorm/relu/maxpool3d/global_avg_pool/dense/softmax)",
          oct::nn::build_classifier3d({8, 8, 8}, 2, 0.5, 3), random_batch({2, 1, 8, 8, 8}),
          {0, 1});
    std::vector<long> pixel_targets;
    for (int i = 0; i < 2 * 8 * 16; ++i) pixel_targets.push_back(i % 4);
    check("unet2d (conv2d/batchnorm/relu/maxpool2d/upsample2d/concat/softmax)",
          oct::nn::build_unet2d({8, 16}, 4, 1, 4, 5), random_batch({2, 1, 8, 16}), pixel_targets);
    if (!all_pass) throw std::runtime_error("gradient check failed");
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}
