#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "octlesion/checkpoint.hpp"
#include "octlesion/phantom.hpp"
#include "octlesion/segmenter.hpp"

using namespace oct;
using namespace oct::seg;

namespace {

BscanSet synthetic_set(int n_participants, int per_participant, std::uint64_t seed) {
  BscanSet set;
  for (int p = 0; p < n_participants; ++p) {
    phantom::PhantomSpec spec;
    spec.n_bscans = per_participant;
    spec.height = 16;
    spec.width = 32;
    spec.seed = seed + static_cast<std::uint64_t>(p);
    spec.lesions = {{phantom::LesionKind::drusen, 1, {5, 8}, {3, 4}}};
    const auto sample = phantom::generate(spec);
    for (long b = 0; b < spec.n_bscans; ++b) {
      BscanSample s;
      s.participant_id = "P" + std::to_string(p);
      s.image = Plane8(spec.height, spec.width);
      std::copy(sample.volume.voxels.begin() + b * spec.height * spec.width,
                sample.volume.voxels.begin() + (b + 1) * spec.height * spec.width, s.image.v.begin());
      s.mask = sample.mask.plane(b);
      set.push_back(std::move(s));
    }
  }
  return set;
}

}  // namespace

TEST_CASE("fold planning balance and disjointness") {
  const BscanSet set = synthetic_set(10, 2, 1);
  const FoldPlan plan = plan_folds(set, 5, 3);
  REQUIRE(plan.assignments.size() == set.size());

  std::map<std::string, std::set<int>> folds_of;
  std::map<int, std::set<std::string>> participants_of;
  for (std::size_t i = 0; i < set.size(); ++i) {
    folds_of[set[i].participant_id].insert(plan.assignments[i]);
    participants_of[plan.assignments[i]].insert(set[i].participant_id);
  }
  for (const auto& [pid, folds] : folds_of) CHECK(folds.size() == 1);
  for (int f = 0; f < 5; ++f) CHECK(participants_of[f].size() == 2);  // 10 participants over 5 folds

  // k = 2 with 2 participants -> one each
  const BscanSet two = synthetic_set(2, 2, 9);
  const FoldPlan p2 = plan_folds(two, 2, 1);
  std::set<int> seen(p2.assignments.begin(), p2.assignments.end());
  CHECK(seen.size() == 2);

  CHECK_THROWS(plan_folds(synthetic_set(3, 1, 2), 5, 1));  // fewer participants than folds
}

TEST_CASE("1000 random fold plans never split a participant") {
  Rng rng(17);
  const BscanSet base = synthetic_set(12, 2, 100);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(6));
    const FoldPlan plan = plan_folds(base, k, rng.next_u64());
    std::map<std::string, std::set<int>> folds_of;
    for (std::size_t i = 0; i < base.size(); ++i)
      folds_of[base[i].participant_id].insert(plan.assignments[i]);
    for (const auto& [pid, folds] : folds_of) CHECK(folds.size() == 1);
    // balance within one participant
    std::map<int, int> count;
    for (const auto& [pid, folds] : folds_of) count[*folds.begin()]++;
    int lo = 1 << 20, hi = 0;
    for (int f = 0; f < k; ++f) {
      lo = std::min(lo, count[f]);
      hi = std::max(hi, count[f]);
    }
    CHECK(hi - lo <= 1);
  }
}

TEST_CASE("train_seg rejects invalid mask codes") {
  BscanSet set = synthetic_set(4, 2, 5);
  set[0].mask.v[10] = 4;
  const FoldPlan plan = plan_folds(set, 2, 1);
  gates::TrainConfig cfg;
  cfg.max_iterations = 2;
  cfg.eval_every = 1;
  cfg.patience_iterations = 2;
  CHECK_THROWS(train_seg(set, plan, cfg, 1, 2, false));
}

TEST_CASE("predict_bscan averages member maps") {
  // two hand-built nets with constant conv heads give known probabilities
  const BscanSet set = synthetic_set(2, 1, 6);
  const Plane8& image = set[0].image;

  auto make_member = [&](std::uint64_t seed) {
    return nn::build_unet2d({image.height, image.width}, 4, 1, 2, seed);
  };
  SegEnsemble single;
  single.members.push_back(make_member(3));
  SegEnsemble twin;
  twin.members.push_back(make_member(3));
  twin.members.push_back(make_member(3));

  // identical members: ensemble output equals any member
  const ProbMap one = predict_bscan(single, image);
  const ProbMap two = predict_bscan(twin, image);
  REQUIRE(one.v.size() == two.v.size());
  for (std::size_t i = 0; i < one.v.size(); ++i) CHECK(one.v[i] == doctest::Approx(two.v[i]).epsilon(1e-12));

  // two distinct members: mean of the member maps
  SegEnsemble mixed;
  mixed.members.push_back(make_member(3));
  mixed.members.push_back(make_member(4));
  const ProbMap pa = predict_bscan({{make_member(3)}, 1, 2}, image);
  const ProbMap pb = predict_bscan({{make_member(4)}, 1, 2}, image);
  const ProbMap pm = predict_bscan(mixed, image);
  for (std::size_t i = 0; i < pm.v.size(); ++i)
    CHECK(pm.v[i] == doctest::Approx((pa.v[i] + pb.v[i]) / 2.0).epsilon(1e-12));

  // per-pixel probabilities sum to one
  const long P = one.height * one.width;
  for (long p = 0; p < P; ++p) {
    double sum = 0.0;
    for (long c = 0; c < 4; ++c) sum += pm.v[static_cast<std::size_t>(c * P + p)];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("argmax of the average can disagree with the member-majority argmax") {
  // one pixel, three members; averaging favours category 2 while the
  // majority of per-member argmaxes is category 1
  ProbMap m1(3, 1, 1), m2(3, 1, 1), m3(3, 1, 1);
  auto fill = [](ProbMap& m, double bg, double c1, double c2) {
    m.v = {bg, c1, c2};
  };
  fill(m1, 0.05, 0.50, 0.45);
  fill(m2, 0.05, 0.50, 0.45);
  fill(m3, 0.05, 0.00, 0.95);
  ProbMap mean(3, 1, 1);
  for (std::size_t i = 0; i < 3; ++i) mean.v[i] = (m1.v[i] + m2.v[i] + m3.v[i]) / 3.0;

  // member argmaxes: {1, 1, 2} -> majority 1; averaged argmax: 2
  CHECK(mean.v[1] < mean.v[2]);
  const Plane8 averaged = mask_from_probs(mean, 0.0);
  CHECK(averaged.at(0, 0) == 2);
}

TEST_CASE("mask_from_probs thresholds") {
  ProbMap pm(4, 1, 2);
  // pixel 0 drusen 0.55 vs bg 0.25; pixel 1 all-background
  pm.at(0, 0, 0) = 0.25;
  pm.at(1, 0, 0) = 0.55;
  pm.at(2, 0, 0) = 0.10;
  pm.at(3, 0, 0) = 0.10;
  pm.at(0, 0, 1) = 1.0;

  CHECK(mask_from_probs(pm, 0.0).at(0, 0) == kDrusen);
  CHECK(mask_from_probs(pm, 0.6).at(0, 0) == kBackground);
  CHECK(mask_from_probs(pm, 0.0).at(0, 1) == kBackground);

  // threshold sweep: foreground count never increases as t grows
  Rng rng(77);
  ProbMap rnd(4, 8, 8);
  for (long p = 0; p < 64; ++p) {
    double total = 0.0;
    std::array<double, 4> vals;
    for (auto& v : vals) {
      v = rng.uniform01();
      total += v;
    }
    for (int c = 0; c < 4; ++c) rnd.v[static_cast<std::size_t>(c * 64 + p)] = vals[static_cast<std::size_t>(c)] / total;
  }
  long prev = 1 << 20;
  for (int i = 0; i <= 20; ++i) {
    const Plane8 mask = mask_from_probs(rnd, i / 20.0);
    const long fg = std::count_if(mask.v.begin(), mask.v.end(), [](std::uint8_t v) { return v != 0; });
    CHECK(fg <= prev);
    prev = fg;
  }
}

TEST_CASE("quantify pixel counts and en-face areas") {
  ScanGeometry full{128, 64, 512, {6.0, 6.0}};
  LesionMask mask = LesionMask::zeros(128, 64, 512);
  const auto empty = quantify(mask, full);
  for (int c = 1; c <= 3; ++c) {
    CHECK(empty.total_pixels[static_cast<std::size_t>(c)] == 0);
    CHECK(empty.enface_area_mm2[static_cast<std::size_t>(c)] == doctest::Approx(0.0));
  }

  // one drusen column in one B-scan at full-scale geometry
  mask.at(10, 30, 100) = kDrusen;
  mask.at(10, 31, 100) = kDrusen;  // same column: still one A-scan column
  const auto one = quantify(mask, full);
  CHECK(one.total_pixels[kDrusen] == 2);
  CHECK(one.enface_area_mm2[kDrusen] == doctest::Approx((6.0 / 512.0) * (6.0 / 128.0)).epsilon(1e-12));
  CHECK(one.enface_area_mm2[kDrusen] == doctest::Approx(5.4931640625e-4).epsilon(1e-9));

  // additivity over disjoint B-scan subsets and monotonicity
  mask.at(20, 30, 200) = kDrusen;
  const auto two = quantify(mask, full);
  CHECK(two.enface_area_mm2[kDrusen] == doctest::Approx(2.0 * 5.4931640625e-4).epsilon(1e-9));
  CHECK(two.total_pixels[kDrusen] == 3);

  // union of two categories >= each alone
  mask.at(40, 10, 50) = kRpd1;
  mask.at(40, 10, 51) = kRpd234;
  const auto three = quantify(mask, full);
  const std::uint8_t rpd_codes[2] = {kRpd1, kRpd234};
  const double union_area = enface_area_mm2(mask, rpd_codes, full);
  CHECK(union_area >= three.enface_area_mm2[kRpd1]);
  CHECK(union_area >= three.enface_area_mm2[kRpd234]);
  CHECK(three.rpd_combined_area_mm2 == doctest::Approx(union_area).epsilon(1e-12));

  // same column shared by both RPD stages counts once in the union
  LesionMask shared = LesionMask::zeros(4, 8, 16);
  shared.at(1, 2, 5) = kRpd1;
  shared.at(1, 3, 5) = kRpd234;
  ScanGeometry small{4, 8, 16, {6.0, 6.0}};
  const double cell = (6.0 / 16.0) * (6.0 / 4.0);
  CHECK(enface_area_mm2(shared, rpd_codes, small) == doctest::Approx(cell).epsilon(1e-12));

  LesionMask wrong = LesionMask::zeros(2, 8, 16);
  CHECK_THROWS(quantify(wrong, full));
}

TEST_CASE("train_seg smoke run produces a working fold ensemble") {
  const BscanSet set = synthetic_set(4, 4, 50);
  const FoldPlan plan = plan_folds(set, 2, 7);
  gates::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_iterations = 12;
  cfg.eval_every = 4;
  cfg.patience_iterations = 12;
  cfg.augment_enabled = false;
  cfg.seed = 3;

  const auto result = train_seg(set, plan, cfg, 1, 2, false);
  REQUIRE(result.ensemble.members.size() == 2);
  REQUIRE(result.fold_logs.size() == 2);
  CHECK(result.fold_logs[0].metric_name == "val_dice");
  CHECK_FALSE(result.fold_logs[0].entries.empty());

  // parallel fold training reproduces serial results
  const auto par = train_seg(set, plan, cfg, 1, 2, true);
  CHECK(nn::serialize_net(par.ensemble.members[0]) == nn::serialize_net(result.ensemble.members[0]));
  CHECK(nn::serialize_net(par.ensemble.members[1]) == nn::serialize_net(result.ensemble.members[1]));

  // checkpoint directory round trip
  const auto dir = std::filesystem::temp_directory_path() / "octlesion_test_segens";
  std::filesystem::remove_all(dir);
  save_seg_ensemble(result.ensemble, dir);
  const auto back = load_seg_ensemble(dir);
  REQUIRE(back.members.size() == 2);
  CHECK(nn::serialize_net(back.members[0]) == nn::serialize_net(result.ensemble.members[0]));
  CHECK(back.depth == 1);
  CHECK(back.base_width == 2);

  // volume-level prediction emits a well-formed mask
  phantom::PhantomSpec spec;
  spec.n_bscans = 2;
  spec.height = 16;
  spec.width = 32;
  spec.seed = 123;
  const auto vol = phantom::generate(spec).volume;
  const LesionMask pred = predict_volume_mask(result.ensemble, vol, 0.5);
  CHECK(pred.shape_matches(vol));
  CHECK_NOTHROW(pred.validate());
}

TEST_CASE("probability map export round trip") {
  Rng rng(5);
  std::vector<ProbMap> maps;
  for (int i = 0; i < 3; ++i) {
    ProbMap m(4, 6, 8);
    for (auto& v : m.v) v = rng.uniform01();
    maps.push_back(std::move(m));
  }
  const auto dir = std::filesystem::temp_directory_path() / "octlesion_test_probmaps";
  std::filesystem::remove_all(dir);
  save_probmaps(maps, dir);
  const auto back = load_probmaps(dir);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < maps[i].v.size(); ++j)
      CHECK(back[i].v[j] == doctest::Approx(maps[i].v[j]).epsilon(1e-7));  // float32 payload
}
