#include <doctest.h>

#include <random>

#include "dvc/esgn.hpp"

using namespace dvc;
using namespace dvc::esgn;

namespace {

SelectorDims tiny() {
  SelectorDims d;
  d.feature_dim = 4;
  d.hidden = 6;
  d.pointer = 6;
  d.max_events = 10;
  return d;
}

VideoRecord video(std::mt19937_64& rng) {
  VideoRecord r;
  r.video_id = "v";
  r.duration = 20.0;
  r.stride = 0.5;
  std::normal_distribution<double> n;
  r.features = Matrix::NullaryExpr(40, 4, [&]() { return n(rng); });
  return r;
}

CandidateSet random_candidates(std::mt19937_64& rng, int k, double duration) {
  std::uniform_real_distribution<double> u(0.0, duration), s(0.0, 1.0);
  CandidateSet c{"v", {}};
  while (static_cast<int>(c.proposals.size()) < k) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    if (b - a > 0.5) c.proposals.push_back({a, b, s(rng)});
  }
  return c;
}

// Candidate keys and END key point in opposite directions relative to a
// constant query; `candidate_first` picks which side wins.
void force(Selector& sel, bool candidate_first) {
  sel.params().set_zero();
  const int H = sel.dims().hidden;
  sel.params().at("sel.ptr_bh").value.setConstant(1.0);
  sel.params().at("sel.ptr_wk").value = ad::Mat::Identity(sel.dims().pointer, H);
  sel.params().at("sel.enc_b").value.setConstant(candidate_first ? 1.0 : -1.0);
  sel.end_embedding().value.setConstant(candidate_first ? -1.0 : 1.0);
}

}  // namespace

TEST_CASE("forced single candidate is selected once, then END") {
  std::mt19937_64 rng(1);
  const auto v = video(rng);
  Selector sel(tiny());
  force(sel, true);
  const CandidateSet one{"v", {{2.0, 6.0, 0.9}}};
  const auto seq = select_sequence(sel, one, v, Mode::kGreedy);
  CHECK(seq.indices == std::vector<int>{0});
  CHECK(seq.events[0].start == 2.0);

  force(sel, false);
  CHECK(select_sequence(sel, one, v, Mode::kGreedy).events.empty());
  CHECK_THROWS_AS(select_sequence(sel, CandidateSet{"v", {}}, v, Mode::kGreedy), ValidationError);
}

TEST_CASE("pointer distributions are normalized and selected candidates are masked") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto v = video(rng);
    Selector sel(tiny());
    sel.params().init_uniform(rng, 1.0);
    const auto cands = random_candidates(rng, 1 + trial % 12, v.duration);
    ad::Tape t(false);
    Selector::Run run(sel, t, sel.candidate_inputs(cands, v));
    std::vector<int> chosen;
    for (int step = 0; step < run.num_candidates(); ++step) {
      const ad::Mat lp = run.log_probs().value();
      REQUIRE(lp.rows() == run.num_candidates() + 1);
      CHECK(std::abs(lp.array().exp().sum() - 1.0) < 1e-6);
      for (int c : chosen) CHECK(std::exp(lp(c, 0)) == 0.0);
      const int pick = step;  // walk every candidate once
      chosen.push_back(pick);
      run.advance(pick);
    }
    CHECK_THROWS(run.advance(0));
  }
}

TEST_CASE("sequences never repeat a candidate and respect max_events") {
  std::mt19937_64 rng(3);
  SelectorDims d = tiny();
  d.max_events = 4;
  for (int trial = 0; trial < 50; ++trial) {
    const auto v = video(rng);
    Selector sel(d);
    sel.params().init_uniform(rng, 2.0);
    // Push END down so long sequences occur.
    sel.end_embedding().value.setConstant(-3.0);
    const auto cands = random_candidates(rng, 8, v.duration);
    std::mt19937_64 srng(trial);
    for (Mode m : {Mode::kGreedy, Mode::kSample}) {
      const auto seq = select_sequence(sel, cands, v, m, &srng);
      CHECK(seq.events.size() <= 4);
      auto idx = seq.indices;
      std::sort(idx.begin(), idx.end());
      CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    }
  }
}

TEST_CASE("greedy selection is deterministic; seeded sampling reproducible") {
  std::mt19937_64 rng(4);
  const auto v = video(rng);
  Selector sel(tiny());
  sel.params().init_uniform(rng, 1.0);
  const auto cands = random_candidates(rng, 10, v.duration);
  CHECK(select_sequence(sel, cands, v, Mode::kGreedy).indices ==
        select_sequence(sel, cands, v, Mode::kGreedy).indices);
  std::mt19937_64 a(9), b(9);
  CHECK(select_sequence(sel, cands, v, Mode::kSample, &a).indices ==
        select_sequence(sel, cands, v, Mode::kSample, &b).indices);
  CHECK_THROWS(select_sequence(sel, cands, v, Mode::kSample));
}

TEST_CASE("teacher targets follow ground truth in start order over unused candidates") {
  const CandidateSet c{"v", {{0, 4, 0.9}, {5, 9, 0.8}, {0, 5, 0.7}, {20, 21, 0.1}}};
  const auto t = teacher_targets(c, {{5, 9}, {0, 4}, {1, 4}});
  // {0,4} -> 0, {1,4} -> 2 (0 is used), {5,9} -> 1, then END.
  CHECK(t.steps == std::vector<int>{0, 2, 1, 4});
  CHECK(t.poor_matches == 0);
  const auto far = teacher_targets(CandidateSet{"v", {{0, 1, 0.5}}}, {{10, 12}});
  CHECK(far.steps == std::vector<int>{0, 1});
  CHECK(far.poor_matches == 1);
  CHECK(teacher_targets(c, {}).steps == std::vector<int>{4});
}

TEST_CASE("selector training lowers the teacher-forced loss") {
  std::mt19937_64 rng(5);
  std::vector<VideoRecord> vids;
  std::vector<CandidateSet> cands;
  for (int i = 0; i < 6; ++i) {
    auto v = video(rng);
    v.video_id = "v" + std::to_string(i);
    v.events = {{1.0, 5.0, {"a"}}, {8.0, 14.0, {"b"}}};
    vids.push_back(v);
    auto c = random_candidates(rng, 6, v.duration);
    c.video_id = v.video_id;
    c.proposals.push_back({1.0, 5.0, 0.5});
    c.proposals.push_back({8.0, 14.0, 0.5});
    cands.push_back(c);
  }
  Selector sel(tiny());
  sel.params().init_uniform(rng, 0.1);
  const auto first = train_selector(sel, cands, vids, 1, 1e-2, 1);
  const auto later = train_selector(sel, cands, vids, 40, 1e-2, 2);
  CHECK(later.final_loss < first.final_loss);
  const std::string j = sequences_to_json({select_sequence(sel, cands[0], vids[0], Mode::kGreedy)});
  CHECK(j.find("\"v0\"") != std::string::npos);
}
