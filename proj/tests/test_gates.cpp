#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "octlesion/checkpoint.hpp"
#include "octlesion/gates.hpp"
#include "octlesion/phantom.hpp"
#include "octlesion/metrics.hpp"

using namespace oct;
using namespace oct::gates;

namespace {

// Tiny separable corpus for training smoke tests.
VolumeSet tiny_set(int n_control, int n_lesion, int n_ungradable, std::uint64_t seed) {
  VolumeSet set;
  long idx = 0;
  auto push = [&](GradeLabel grade, const phantom::PhantomSpec& spec) {
    auto sample = phantom::generate(spec);
    set.volumes.push_back(std::move(sample.volume));
    set.grades.push_back(grade);
    set.participant_ids.push_back("P" + std::to_string(idx++));
  };
  phantom::PhantomSpec base;
  base.n_bscans = 8;
  base.height = 16;
  base.width = 32;
  for (int i = 0; i < n_control; ++i) {
    phantom::PhantomSpec spec = base;
    spec.seed = seed + static_cast<std::uint64_t>(idx);
    push(GradeLabel::NoLesion, spec);
  }
  for (int i = 0; i < n_lesion; ++i) {
    phantom::PhantomSpec spec = base;
    spec.seed = seed + static_cast<std::uint64_t>(idx);
    spec.lesions = {{phantom::LesionKind::drusen, 2, {5, 8}, {3, 4}},
                    {phantom::LesionKind::rpd2to4, 1, {5, 8}, {2, 3}}};
    push(GradeLabel::MoreThanOne, spec);
  }
  for (int i = 0; i < n_ungradable; ++i) {
    phantom::PhantomSpec spec = base;
    spec.seed = seed + static_cast<std::uint64_t>(idx);
    spec.corruption = phantom::Corruption::heavy_noise;
    push(GradeLabel::Ungradable, spec);
  }
  return set;
}

TrainConfig tiny_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_iterations = 20;
  cfg.eval_every = 5;
  cfg.patience_iterations = 20;
  cfg.augment_enabled = false;
  cfg.width_scale = 0.5;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("train config invariants") {
  TrainConfig cfg = tiny_config(1);
  cfg.patience_iterations = 3;
  cfg.eval_every = 5;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config(1);
  cfg.batch_size = 1;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config(1);
  CHECK_NOTHROW(cfg.validate());

  const auto back = train_config_from_json(to_json(cfg));
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.seed == cfg.seed);
  CHECK(back.adam.learning_rate == doctest::Approx(1e-4));
  CHECK(back.adam.beta1 == doctest::Approx(0.9));
  CHECK(back.adam.beta2 == doctest::Approx(0.999));
}

TEST_CASE("task label mapping excludes grades 2 and 4") {
  CHECK(task_label(GradeLabel::Ungradable, GateTask::ungradable_vs_rest) == 1);
  CHECK(task_label(GradeLabel::NoLesion, GateTask::ungradable_vs_rest) == 0);
  CHECK(task_label(GradeLabel::MoreThanOne, GateTask::ungradable_vs_rest) == 0);
  CHECK_FALSE(task_label(GradeLabel::OneLesion, GateTask::ungradable_vs_rest).has_value());
  CHECK_FALSE(task_label(GradeLabel::Questionable, GateTask::ungradable_vs_rest).has_value());

  CHECK(task_label(GradeLabel::MoreThanOne, GateTask::lesion_vs_control) == 1);
  CHECK(task_label(GradeLabel::NoLesion, GateTask::lesion_vs_control) == 0);
  CHECK_FALSE(task_label(GradeLabel::OneLesion, GateTask::lesion_vs_control).has_value());
  CHECK_FALSE(task_label(GradeLabel::Questionable, GateTask::lesion_vs_control).has_value());
  CHECK_FALSE(task_label(GradeLabel::Ungradable, GateTask::lesion_vs_control).has_value());
}

TEST_CASE("balanced sampler balances arbitrary imbalance") {
  // categories sized {100, 10}: after 200 draws each category appears
  // 100 +- batch_size times
  std::vector<int> cats;
  for (int i = 0; i < 100; ++i) cats.push_back(0);
  for (int i = 0; i < 10; ++i) cats.push_back(1);
  const int batch_size = 4;
  BalancedSampler sampler(cats, batch_size, 5);
  std::map<int, long> drawn;
  for (int b = 0; b < 50; ++b)
    for (std::size_t idx : sampler.next_batch()) drawn[cats[idx]]++;
  CHECK(std::abs(drawn[0] - 100) <= batch_size);
  CHECK(std::abs(drawn[1] - 100) <= batch_size);

  // windows of C * batch_size stay balanced within batch_size
  BalancedSampler windows(cats, batch_size, 6);
  std::vector<int> stream;
  for (int b = 0; b < 30; ++b)
    for (std::size_t idx : windows.next_batch()) stream.push_back(cats[idx]);
  for (std::size_t start = 0; start + 8 <= stream.size(); ++start) {
    long c0 = 0, c1 = 0;
    for (std::size_t i = start; i < start + 8; ++i) (stream[i] == 0 ? c0 : c1)++;
    CHECK(std::abs(c0 - c1) <= batch_size);
  }
}

TEST_CASE("balanced sampler determinism and edge cases") {
  const std::vector<int> cats{0, 0, 0, 1, 1, 2};
  BalancedSampler a(cats, 3, 9);
  BalancedSampler b(cats, 3, 9);
  for (int i = 0; i < 20; ++i) CHECK(a.next_batch() == b.next_batch());

  // single category: every draw comes from it
  const std::vector<int> solo{7, 7, 7};
  BalancedSampler s(solo, 2, 1);
  for (int i = 0; i < 10; ++i)
    for (std::size_t idx : s.next_batch()) CHECK(solo[idx] == 7);

  CHECK_THROWS(BalancedSampler({}, 2, 1));
}

TEST_CASE("ensemble uncertainty fixtures") {
  // identical members agree -> 0
  CHECK(mean_member_variance({{0.3, 0.7}, {0.3, 0.7}, {0.3, 0.7}}) == doctest::Approx(0.0));

  // two members at (1,0) and (0,1): per-category variance 0.25, mean 0.25
  CHECK(mean_member_variance({{1.0, 0.0}, {0.0, 1.0}}) == doctest::Approx(0.25));

  CHECK_THROWS(mean_member_variance({{0.5, 0.5}}));

  // random member tuples: matches a direct variance computation and stays
  // within [0, 0.25] for two categories
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 2 + static_cast<int>(rng.below(8));
    std::vector<std::vector<double>> probs;
    for (int i = 0; i < m; ++i) {
      const double p = rng.uniform01();
      probs.push_back({p, 1.0 - p});
    }
    double direct = 0.0;
    for (int c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (const auto& p : probs) mean += p[static_cast<std::size_t>(c)];
      mean /= m;
      double var = 0.0;
      for (const auto& p : probs)
        var += (p[static_cast<std::size_t>(c)] - mean) * (p[static_cast<std::size_t>(c)] - mean);
      direct += var / m;
    }
    direct /= 2.0;
    const double got = mean_member_variance(probs);
    CHECK(got == doctest::Approx(direct).epsilon(1e-12));
    CHECK(got >= 0.0);
    CHECK(got <= 0.25 + 1e-12);
  }
}

TEST_CASE("threshold calibration policies") {
  // perfectly separated scores: the chosen cut separates them, ties toward
  // higher specificity
  std::vector<double> sep{0.9, 0.8, 0.3, 0.1};
  std::vector<int> lab{1, 1, 0, 0};
  const double t = calibrate_threshold(sep, lab, ThresholdPolicy::youden());
  CHECK(t > 0.3);
  CHECK(t <= 0.8);
  const auto r = metrics::rates(metrics::confusion_at(sep, lab, t));
  CHECK(r.sensitivity == doctest::Approx(1.0));
  CHECK(r.specificity == doctest::Approx(1.0));

  // youden on {pos: 0.9, 0.8; neg: 0.3, 0.1} -> threshold in (0.3, 0.8]
  const double ty = calibrate_threshold(sep, lab, ThresholdPolicy::youden());
  CHECK(ty > 0.3);
  CHECK(ty <= 0.8);

  // exhaustive-sweep cross-check on a mixed fixture
  std::vector<double> mixed{0.9, 0.6, 0.55, 0.4, 0.35, 0.1};
  std::vector<int> mlab{1, 0, 1, 1, 0, 0};
  const double tm = calibrate_threshold(mixed, mlab, ThresholdPolicy::youden());
  double best_j = -2.0;
  for (double cand : mixed) {
    const auto rr = metrics::rates(metrics::confusion_at(mixed, mlab, cand));
    best_j = std::max(best_j, rr.sensitivity + rr.specificity - 1.0);
  }
  const auto rm = metrics::rates(metrics::confusion_at(mixed, mlab, tm));
  CHECK(rm.sensitivity + rm.specificity - 1.0 == doctest::Approx(best_j));

  // sens_at picks the most specific cut still hitting the target
  const double ts = calibrate_threshold(mixed, mlab, ThresholdPolicy::sens_at(0.967));
  const auto rs = metrics::rates(metrics::confusion_at(mixed, mlab, ts));
  CHECK(rs.sensitivity >= 0.967);
  for (double cand : mixed) {
    if (cand <= ts) continue;
    CHECK(metrics::rates(metrics::confusion_at(mixed, mlab, cand)).sensitivity < 0.967);
  }

  // spec_at picks the most sensitive cut reaching the target
  const double tp = calibrate_threshold(mixed, mlab, ThresholdPolicy::spec_at(0.9));
  const auto rp = metrics::rates(metrics::confusion_at(mixed, mlab, tp));
  CHECK(rp.specificity >= 0.9);

  std::vector<int> single(6, 1);
  CHECK_THROWS(calibrate_threshold(mixed, single, ThresholdPolicy::youden()));
}

TEST_CASE("gate thresholds JSON round trip") {
  GateThresholds t;
  t.ungradable_prob = 0.7;
  t.ood_uncertainty = 0.01;
  const auto back = gate_thresholds_from_json(to_json(t));
  CHECK(back.ungradable_prob == doctest::Approx(0.7));
  CHECK(back.ood_uncertainty == doctest::Approx(0.01));
  GateThresholds bad;
  bad.lesion_prob = 1.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("train_gate smoke run: logging, exclusions, best checkpoint") {
  VolumeSet train = tiny_set(4, 4, 3, 100);
  // add excluded grades to the pool
  {
    phantom::PhantomSpec spec;
    spec.n_bscans = 8;
    spec.height = 16;
    spec.width = 32;
    spec.seed = 999;
    spec.lesions = {{phantom::LesionKind::drusen, 1, {5, 8}, {3, 4}}};
    auto sample = phantom::generate(spec);
    train.volumes.push_back(std::move(sample.volume));
    train.grades.push_back(GradeLabel::OneLesion);
    train.participant_ids.push_back("Pq1");
    auto sample2 = phantom::generate(spec);
    train.volumes.push_back(std::move(sample2.volume));
    train.grades.push_back(GradeLabel::Questionable);
    train.participant_ids.push_back("Pq2");
  }
  const VolumeSet val = tiny_set(2, 2, 2, 200);

  const auto result = train_gate(train, val, GateTask::ungradable_vs_rest, tiny_config(5));
  CHECK_FALSE(result.log.entries.empty());
  // exclusion is logged
  bool found_exclusion_note = false;
  for (const auto& note : result.log.notes)
    if (note.find("2 excluded") != std::string::npos) found_exclusion_note = true;
  CHECK(found_exclusion_note);

  // best-checkpoint property: no later evaluation beats the returned one
  for (const auto& e : result.log.entries)
    CHECK(e.val_kappa <= result.log.best_kappa + 1e-12);

  // prediction contract: two probabilities summing to 1, deterministic
  const auto p1 = predict_gate(result.net, val.volumes[0]);
  const auto p2 = predict_gate(result.net, val.volumes[0]);
  CHECK(p1[0] + p1[1] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p1[0] == p2[0]);

  // empty split for the task
  VolumeSet no_positives = tiny_set(3, 3, 0, 300);
  CHECK_THROWS(train_gate(no_positives, val, GateTask::ungradable_vs_rest, tiny_config(5)));
}

TEST_CASE("ensemble members differ and parallel equals serial") {
  const VolumeSet train = tiny_set(3, 0, 3, 400);
  const VolumeSet val = tiny_set(2, 0, 2, 500);
  TrainConfig cfg = tiny_config(7);
  cfg.max_iterations = 10;
  cfg.eval_every = 5;
  cfg.patience_iterations = 10;

  const auto serial = train_ensemble(train, val, cfg, 2, GateTask::ungradable_vs_rest, false);
  const auto parallel = train_ensemble(train, val, cfg, 2, GateTask::ungradable_vs_rest, true);
  REQUIRE(serial.members.size() == 2);
  REQUIRE(parallel.members.size() == 2);

  CHECK(nn::serialize_net(serial.members[0]) == nn::serialize_net(parallel.members[0]));
  CHECK(nn::serialize_net(serial.members[1]) == nn::serialize_net(parallel.members[1]));
  CHECK(nn::serialize_net(serial.members[0]) != nn::serialize_net(serial.members[1]));

  // uncertainty bounds hold on a real volume
  const double u = ood_uncertainty(serial, val.volumes[0]);
  CHECK(u >= 0.0);
  CHECK(u <= 0.25);

  CHECK_THROWS(train_ensemble(train, val, cfg, 1));
}

TEST_CASE("ensemble checkpoint directory round trip") {
  const VolumeSet train = tiny_set(3, 0, 3, 600);
  const VolumeSet val = tiny_set(2, 0, 2, 700);
  TrainConfig cfg = tiny_config(8);
  cfg.max_iterations = 5;
  cfg.eval_every = 5;
  cfg.patience_iterations = 5;
  const auto ens = train_ensemble(train, val, cfg, 2, GateTask::ungradable_vs_rest, false);

  const auto dir = std::filesystem::temp_directory_path() / "octlesion_test_ensemble";
  std::filesystem::remove_all(dir);
  save_ensemble(ens, dir);
  const auto back = load_ensemble(dir);
  REQUIRE(back.members.size() == 2);
  CHECK(nn::serialize_net(back.members[0]) == nn::serialize_net(ens.members[0]));
  CHECK(back.member_seeds == ens.member_seeds);
}
