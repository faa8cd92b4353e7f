#include <doctest.h>

#include <cmath>
#include <random>

#include "dvc/metrics.hpp"
#include "oracles.hpp"

using namespace dvc;
using namespace dvc::metrics;

namespace {

Tokens T(const std::string& s) { return tokenize(s); }

Tokens rename(const Tokens& s) {
  Tokens out;
  for (const auto& w : s) out.push_back("r_" + w + "_x");
  return out;
}

AnnotationMap one_video(std::vector<EventAnnotation> events) {
  AnnotationMap m;
  m["v"] = {100.0, std::move(events)};
  return m;
}

}  // namespace

TEST_CASE("bleu4 examples") {
  CHECK(bleu4(T("a b c d e"), {T("a b c d e")}) == 1.0);
  CHECK(bleu4(T("a b c d"), {T("a b c d e")}) == doctest::Approx(std::exp(1.0 - 5.0 / 4.0)).epsilon(1e-15));
  CHECK(bleu4(T("a b c d"), {T("w x y z")}) == 0.0);
  CHECK_THROWS(bleu4(T("a"), {}));
  // Closest reference length, ties to the shorter one.
  CHECK(bleu4(T("a b c d e f"), {T("a b c d e f g h"), T("a b c d")}) ==
        doctest::Approx(oracle::bleu4(T("a b c d e f"), {T("a b c d e f g h"), T("a b c d")})));
}

TEST_CASE("meteor-lite examples") {
  CHECK(meteor_lite(T("a b c d"), {T("a b c d")}) == 0.9921875);
  CHECK(meteor_lite(T("a"), {T("a")}) == 0.5);
  CHECK(meteor_lite(T("a b"), {T("c d")}) == 0.0);
  CHECK_THROWS(meteor_lite(T("a"), {}));
  const auto al = align_exact(T("a b x c d"), T("a b c d"));
  CHECK(al.matches == 4);
  CHECK(al.chunks == 2);
}

TEST_CASE("cider examples") {
  std::map<std::string, Tokens> c = {{"v", T("a b c d e")}};
  std::map<std::string, std::vector<Tokens>> r = {{"v", {T("a b c d e")}}};
  CHECK(cider(c, r) == doctest::Approx(10.0).epsilon(1e-15));
  r["v"] = {T("x y z w")};
  CHECK(cider(c, r) == 0.0);
  r["u"] = {T("a")};
  CHECK_THROWS(cider(c, r));
}

TEST_CASE("metrics match the independent oracles on random instances") {
  std::mt19937_64 rng(77);
  for (int n = 0; n < 150; ++n) {
    const Tokens cand = oracle::random_sentence(rng, 1, 8, 6);
    std::vector<Tokens> refs;
    for (int k = 0; k < 1 + n % 3; ++k) refs.push_back(oracle::random_sentence(rng, 1, 9, 6));
    CHECK(std::abs(bleu4(cand, refs) - oracle::bleu4(cand, refs)) < 1e-9);
    CHECK(std::abs(meteor_lite(cand, refs) - oracle::meteor(cand, refs)) < 1e-9);
  }
  for (int n = 0; n < 30; ++n) {
    const int videos = 1 + n % 6;
    std::map<std::string, Tokens> c;
    std::map<std::string, std::vector<Tokens>> r;
    std::vector<Tokens> oc;
    std::vector<std::vector<Tokens>> orf;
    for (int v = 0; v < videos; ++v) {
      const std::string key = "k" + std::to_string(v);
      c[key] = oracle::random_sentence(rng, 1, 8, 8);
      for (int k = 0; k < 1 + v % 3; ++k) r[key].push_back(oracle::random_sentence(rng, 1, 8, 8));
    }
    for (const auto& [k, s] : c) {
      oc.push_back(s);
      orf.push_back(r[k]);
    }
    CHECK(std::abs(cider(c, r) - oracle::cider(oc, orf)) < 1e-9);
  }
}

TEST_CASE("metrics are invariant under token renaming and bounded") {
  std::mt19937_64 rng(13);
  for (int n = 0; n < 100; ++n) {
    const Tokens cand = oracle::random_sentence(rng, 1, 8, 5);
    const std::vector<Tokens> refs = {oracle::random_sentence(rng, 1, 8, 5), oracle::random_sentence(rng, 1, 8, 5)};
    const std::vector<Tokens> rrefs = {rename(refs[0]), rename(refs[1])};
    CHECK(bleu4(cand, refs) == bleu4(rename(cand), rrefs));
    CHECK(meteor_lite(cand, refs) == meteor_lite(rename(cand), rrefs));
    const double b = bleu4(cand, refs), m = meteor_lite(cand, refs);
    CHECK((b >= 0.0 && b <= 1.0));
    CHECK((m >= 0.0 && m <= 1.0));
    if (cand.size() >= 4) CHECK(bleu4(cand, {refs[0], cand}) == doctest::Approx(1.0).epsilon(1e-15));
    std::map<std::string, Tokens> c = {{"a", cand}, {"b", refs[0]}};
    std::map<std::string, std::vector<Tokens>> r = {{"a", refs}, {"b", {refs[1]}}};
    std::map<std::string, Tokens> rc = {{"a", rename(cand)}, {"b", rename(refs[0])}};
    std::map<std::string, std::vector<Tokens>> rr = {{"a", rrefs}, {"b", {rename(refs[1])}}};
    CHECK(cider(c, r) == doctest::Approx(cider(rc, rr)).epsilon(1e-12));
    CHECK(cider(c, r, CiderVariant::kD) >= 0.0);
  }
}

TEST_CASE("metric names parse") {
  CHECK(parse_metric("meteor") == Metric::kMeteor);
  CHECK(parse_metric("Bleu_4") == Metric::kBleu4);
  CHECK(parse_metric("cider") == Metric::kCider);
  CHECK_THROWS(parse_metric("rouge"));
}

TEST_CASE("dense evaluation examples") {
  const auto refs = one_video({{0, 10, T("a person runs fast")}});
  const auto same = dense_caption_eval(refs, refs);
  CHECK(same.scores.at("METEOR") == 0.9921875);
  CHECK(same.scores.at("Bleu_4") == 1.0);
  for (double s : same.per_threshold.at("METEOR")) CHECK(s == 0.9921875);
  CHECK(same.num_predictions == 1);

  const auto shifted = one_video({{5, 15, T("a person runs fast")}});
  const auto third = dense_caption_eval(shifted, refs);
  CHECK(third.scores.at("METEOR") == doctest::Approx(0.9921875 / 4).epsilon(1e-15));
  CHECK(third.matched == std::vector<int>{1, 0, 0, 0});

  AnnotationMap empty = one_video({});
  CHECK(dense_caption_eval(empty, refs).scores.at("METEOR") == 0.0);

  AnnotationMap stranger;
  stranger["ghost"] = {10.0, {{0, 1, T("a")}}};
  try {
    dense_caption_eval(stranger, refs);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }
}

TEST_CASE("an extra threshold above every observed tIoU cannot raise the score") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 90.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<EventAnnotation> p, g;
    for (int k = 0; k < 4; ++k) {
      const double a = u(rng), b = u(rng);
      p.push_back({a, a + 5 + b / 10, oracle::random_sentence(rng, 2, 6, 5)});
      g.push_back({b, b + 5 + a / 10, oracle::random_sentence(rng, 2, 6, 5)});
    }
    DenseEvalOptions base;
    base.thresholds = {0.3, 0.5};
    DenseEvalOptions more = base;
    more.thresholds.push_back(1.0 - 1e-12);
    const auto a = dense_caption_eval(one_video(p), one_video(g), base);
    const auto b = dense_caption_eval(one_video(p), one_video(g), more);
    for (const auto& [name, score] : a.scores) CHECK(b.scores.at(name) <= score + 1e-12);
  }
}

TEST_CASE("multiple reference sets average and reports serialize") {
  const auto r1 = one_video({{0, 10, T("a b c d")}});
  const auto r2 = one_video({{0, 10, T("w x y z")}});
  const auto avg = dense_caption_eval(r1, std::vector<AnnotationMap>{r1, r2});
  CHECK(avg.scores.at("METEOR") == doctest::Approx(0.9921875 / 2).epsilon(1e-15));
  const std::string j = avg.to_json();
  CHECK(j.find("METEOR") != std::string::npos);
  CHECK(avg.to_table().find("CIDEr") != std::string::npos);
}
