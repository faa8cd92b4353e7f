#include <doctest.h>

#include <cmath>
#include <random>

#include "dvc/tsrm.hpp"
#include "oracles.hpp"

using namespace dvc;
using namespace dvc::tsrm;

namespace {

tsrm::Dims small_dims() {
  tsrm::Dims d;
  d.feature_dim = 6;
  d.d_pos = 8;
  d.hidden = 10;
  d.d_k = 4;
  d.d_v = 5;
  return d;
}

oracle::TsrmWeights weights_of(Tsrm& enc) {
  return {enc.pos_w0().value, enc.pos_b0().value, enc.pos_w1().value, enc.pos_b1().value,
          enc.wq().value,     enc.wk().value,     enc.wv().value,     enc.dims().d_pos};
}

std::vector<Proposal> random_proposals(std::mt19937_64& rng, int n, double lo = 0.0, double hi = 60.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Proposal> out;
  while (static_cast<int>(out.size()) < n) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    if (b - a > 0.5) out.push_back({a, b, 1.0});
  }
  return out;
}

VideoRecord random_video(std::mt19937_64& rng, int clips, int dim) {
  VideoRecord r;
  r.video_id = "v";
  r.stride = 0.5;
  r.duration = clips * r.stride;
  std::normal_distribution<double> n;
  r.features = Matrix::NullaryExpr(clips, dim, [&]() { return n(rng); });
  return r;
}

}  // namespace

TEST_CASE("mean pooling") {
  VideoRecord r;
  r.duration = 4.0;
  r.stride = 1.0;
  r.features = Matrix::Constant(4, 3, 2.5);
  CHECK(mean_pool(r, {0.3, 3.7}) == Vector::Constant(3, 2.5));
  r.features << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  CHECK(mean_pool(r, {1.0, 2.0}) == r.features.row(1).transpose());
  CHECK(mean_pool(r, {1.0, 3.0}).isApprox((r.features.row(1) + r.features.row(2)).transpose() / 2.0, 1e-15));
  CHECK_THROWS(mean_pool(r, {5.0, 6.0}));
}

TEST_CASE("pair position code examples") {
  const auto same = pair_position_code({2, 6}, {2, 6}, 8);
  CHECK(same.relative_length == 0.0);
  CHECK(same.relative_distance == 0.0);
  for (int k = 0; k < 16; ++k) CHECK(same.code[k] == (k % 2 ? 1.0 : 0.0));
  const auto twice = pair_position_code({4, 6}, {3, 7}, 8);
  CHECK(twice.relative_length == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(twice.relative_distance == 0.0);
  const auto a = pair_position_code({1, 4}, {2, 9}, 8);
  const auto b = pair_position_code({101, 104}, {102, 109}, 8);
  CHECK(a.code == b.code);
  for (int d : {2, 8, 16}) CHECK(sinusoid(0.37, d).isApprox(oracle::sinusoid(0.37, d), 1e-15));
  CHECK_THROWS(sinusoid(1.0, 3));
}

TEST_CASE("temporal scores: zero params, N = 1, shift and rescale invariance") {
  ad::ParamSet ps;
  Tsrm enc(ps, small_dims());
  std::vector<Proposal> props = {{0, 4, 1}, {2, 10, 1}, {5, 6, 1}};
  CHECK(temporal_scores(enc, props).isZero(0.0));
  CHECK(temporal_scores(enc, {{1, 2, 1}}).rows() == 1);

  std::mt19937_64 rng(1);
  ps.init_uniform(rng, 0.5);
  const Matrix base = temporal_scores(enc, props);
  CHECK_FALSE(base.isApprox(base.transpose()));
  // Dyadic offsets and factors keep every ratio bit-identical.
  auto moved = props;
  for (auto& p : moved) p.start += 64, p.end += 64;
  CHECK(temporal_scores(enc, moved) == base);
  auto scaled = props;
  for (auto& p : scaled) p.start *= 4, p.end *= 4;
  CHECK(temporal_scores(enc, scaled) == base);
}

TEST_CASE("semantic scores examples") {
  tsrm::Dims d = small_dims();
  d.feature_dim = 4;
  d.d_k = 4;
  ad::ParamSet ps;
  Tsrm enc(ps, d);
  const Vector e1 = Vector::Unit(4, 0), e2 = Vector::Unit(4, 1);
  CHECK(semantic_scores(enc, {e1, e1}).isZero(0.0));
  enc.wq().value.setIdentity();
  enc.wk().value.setIdentity();
  const Matrix s = semantic_scores(enc, {e1, e1});
  CHECK(s(0, 1) == 0.5);
  const Matrix o = semantic_scores(enc, {e1, e2});
  CHECK(o(0, 1) == 0.0);
  CHECK(o(1, 0) == 0.0);
}

TEST_CASE("encoder matches the element-wise oracle and its invariants") {
  std::mt19937_64 rng(17);
  for (int n : {1, 2, 3, 7}) {
    ad::ParamSet ps;
    Tsrm enc(ps, small_dims());
    ps.init_uniform(rng, 0.4);
    const auto video = random_video(rng, 80, 6);
    const auto props = random_proposals(rng, n, 0.0, video.duration);
    const auto [scores, feats] = encode_events(enc, video, props);
    std::vector<std::pair<double, double>> spans;
    for (const auto& p : props) spans.emplace_back(p.start, p.end);
    const auto ref = oracle::tsrm(weights_of(enc), spans, pooled_matrix(video, props));
    CHECK((scores.attention - ref.attention).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(scores.fused == scores.temporal + scores.semantic);
    REQUIRE(feats.size() == static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      CHECK((feats[i].relational - ref.relational.col(i)).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(feats[i].z.size() == feats[i].pooled.size() + feats[i].relational.size());
      CHECK(feats[i].z.head(6) == feats[i].pooled);
      CHECK(std::abs(scores.attention.row(i).sum() - 1.0) < 1e-6);
    }
    if (n == 1) {
      CHECK(scores.attention(0, 0) == 1.0);
      CHECK(feats[0].relational.isApprox(enc.wv().value * feats[0].pooled, 1e-12));
    }
  }
}

TEST_CASE("equal fused scores give uniform attention") {
  ad::ParamSet ps;
  Tsrm enc(ps, small_dims());
  std::mt19937_64 rng(2);
  const auto video = random_video(rng, 40, 6);
  const auto [scores, feats] = encode_events(enc, video, random_proposals(rng, 4, 0.0, video.duration));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(scores.attention(i, j) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("attention rows are normalized for random sizes up to 64") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> size(1, 64);
  for (int trial = 0; trial < 20; ++trial) {
    ad::ParamSet ps;
    Tsrm enc(ps, small_dims());
    ps.init_uniform(rng, 1.0);
    const auto video = random_video(rng, 120, 6);
    const auto [scores, feats] = encode_events(enc, video, random_proposals(rng, size(rng), 0.0, video.duration));
    CHECK(scores.attention.allFinite());
    CHECK((scores.attention.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("relation scores serialize") {
  RelationScores s{Matrix::Zero(1, 1), Matrix::Zero(1, 1), Matrix::Zero(1, 1), Matrix::Ones(1, 1)};
  const std::string j = relation_scores_to_json(s);
  CHECK(j.find("\"attention\":[[1.0]]") != std::string::npos);
}
