#include <doctest.h>

#include <cmath>
#include <random>

#include "dvc/decoder.hpp"
#include "dvc/model.hpp"
#include "oracles.hpp"

using namespace dvc;
using namespace dvc::decoder;

namespace {

Dims tiny_dims() {
  Dims d;
  d.z_dim = 6;
  d.frame_dim = 4;
  d.hidden = 7;
  d.embed = 5;
  d.pos_hidden = 3;
  d.pos_dim = 4;
  d.proj = 5;
  d.attn = 6;
  d.vocab = 9;
  return d;
}

ad::Mat randn(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> n;
  return ad::Mat::NullaryExpr(r, c, [&]() { return n(rng); });
}

Vocabulary tiny_vocab(int extra) {
  std::vector<std::string> toks = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (int i = 0; i < extra; ++i) toks.push_back("w" + std::to_string(i));
  return Vocabulary::from_tokens(toks, 1, 30);
}

VideoRecord tiny_video(std::mt19937_64& rng, int dim) {
  VideoRecord r;
  r.video_id = "v";
  r.stride = 0.5;
  r.duration = 10.0;
  r.features = randn(rng, 20, dim);
  return r;
}

ModelConfig tiny_model(int hidden) {
  ModelConfig c;
  c.feature_dim = 4;
  c.hidden = hidden;
  c.d_pos = 4;
  return c;
}

}  // namespace

TEST_CASE("position embedding of zero params is zero") {
  ad::ParamSet ps;
  Decoder dec(ps, tiny_dims(), {});
  ad::Tape t(false);
  CHECK(dec.position_embed(t, {0.0, 10.0}, 10.0).value().isZero(0.0));
  CHECK_THROWS(dec.position_embed(t, {0.0, 1.0}, 0.0));
}

TEST_CASE("gate: zero inputs give 0.5, saturated bias gives > 1 - 1e-9, always inside (0, 1)") {
  const Dims d = tiny_dims();
  ad::ParamSet ps;
  Decoder dec(ps, d, {});
  ad::Tape t(false);
  auto zeros = [&](int n) { return t.constant(ad::Mat::Zero(n, 1)); };
  const ad::Mat g0 = dec.gate(t, zeros(d.pos_dim), zeros(d.z_dim), zeros(d.hidden), zeros(d.hidden)).value();
  CHECK(g0.rows() == d.proj);
  CHECK((g0.array() == 0.5).all());
  dec.gate_b().value.setConstant(30.0);
  // A tape caches bound parameter values, so changed weights need a new one.
  ad::Tape t2(false);
  auto zeros2 = [&](int n) { return t2.constant(ad::Mat::Zero(n, 1)); };
  const ad::Mat g1 = dec.gate(t2, zeros2(d.pos_dim), zeros2(d.z_dim), zeros2(d.hidden), zeros2(d.hidden)).value();
  CHECK((g1.array() > 1.0 - 1e-9).all());
  for (double huge : {1e3, -1e3}) {
    dec.gate_b().value.setConstant(huge);
    ad::Tape t3(false);
    const ad::Mat g = dec.gate(t3, t3.constant(ad::Mat::Zero(d.pos_dim, 1)), t3.constant(ad::Mat::Zero(d.z_dim, 1)),
                               t3.constant(ad::Mat::Zero(d.hidden, 1)), t3.constant(ad::Mat::Zero(d.hidden, 1)))
                          .value();
    CHECK((g.array() > 0.0).all());
    CHECK((g.array() < 1.0).all());
  }

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::mt19937_64 init(trial);
    ps.init_uniform(init, 2.0);
    ad::Tape tr(false);
    const ad::Mat g = dec.gate(tr, tr.constant(randn(rng, d.pos_dim, 1)), tr.constant(randn(rng, d.z_dim, 1)),
                               tr.constant(randn(rng, d.hidden, 1)), tr.constant(randn(rng, d.hidden, 1)))
                          .value();
    CHECK((g.array() > 0.0).all());
    CHECK((g.array() < 1.0).all());
  }
}

TEST_CASE("first event has no linguistic input; saturated gates block one modality") {
  const Dims d = tiny_dims();
  ad::ParamSet ps;
  Decoder dec(ps, d, {});
  std::mt19937_64 rng(5);
  ps.init_uniform(rng, 0.1);
  const ad::Mat l = randn(rng, d.pos_dim, 1), z = randn(rng, d.z_dim, 1);
  {
    ad::Tape t(false);
    const auto first = dec.sentence_step(t, dec.initial_context(t), t.constant(l), t.constant(z));
    CHECK(ad::rows(first.x, d.proj, d.proj).value().isZero(0.0));
  }
  const ad::Mat h_prev = randn(rng, d.hidden, 1), c_prev = randn(rng, d.hidden, 1);
  const ad::Mat s_prev = randn(rng, d.hidden, 1), other_s = randn(rng, d.hidden, 1) * 5.0;
  const ad::Mat other_z = randn(rng, d.z_dim, 1) * 5.0;
  auto h_of = [&](const ad::Mat& zz, const ad::Mat& ss) {
    ad::Tape t(false);
    SentenceContext ctx{{t.constant(h_prev), t.constant(c_prev)}, t.constant(ss)};
    return ad::Mat(dec.sentence_step(t, ctx, t.constant(l), t.constant(zz)).sent.h.value());
  };

  dec.gate_b().value.setConstant(40.0);
  const ad::Mat h_a = h_of(z, s_prev);
  CHECK((h_a - h_of(z, other_s)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((h_a - h_of(other_z, s_prev)).cwiseAbs().maxCoeff() > 1e-6);

  dec.gate_b().value.setConstant(-40.0);
  const ad::Mat h_c = h_of(z, s_prev);
  CHECK((h_c - h_of(other_z, s_prev)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((h_c - h_of(z, other_s)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("gate off feeds both projections ungated") {
  const Dims d = tiny_dims();
  ad::ParamSet ps;
  Decoder dec(ps, d, {.cmg = false});
  std::mt19937_64 rng(6);
  ps.init_uniform(rng, 0.3);
  ad::Tape t(false);
  const ad::Mat z = randn(rng, d.z_dim, 1), s = randn(rng, d.hidden, 1), l = randn(rng, d.pos_dim, 1);
  SentenceContext ctx{dec.initial_context(t).sent, t.constant(s)};
  const auto step = dec.sentence_step(t, ctx, t.constant(l), t.constant(z));
  CHECK_FALSE(step.gate.valid());
  ad::Mat expected(2 * d.proj + d.pos_dim, 1);
  expected << ps.at("dec.vis_w").value * z, ps.at("dec.lin_w").value * s, l;
  CHECK(step.x.value() == expected);
}

TEST_CASE("frame attention matches the element-wise oracle") {
  const Dims d = tiny_dims();
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    ad::ParamSet ps;
    Decoder dec(ps, d, {});
    ps.init_uniform(rng, 0.5);
    ad::Tape t(false);
    const ad::Mat frames = randn(rng, 4, d.frame_dim);  // T x frame_dim
    const ad::Mat h = randn(rng, d.hidden, 1);
    const auto mem = dec.frame_memory(t, frames);
    const auto got = dec.frame_attention(t, t.constant(h), mem);
    const auto [ctx, w] = oracle::frame_attention(ps.at("dec.att_wh").value, ps.at("dec.att_wf").value,
                                                  ps.at("dec.att_v").value, h.col(0), frames.transpose());
    CHECK((got.context.value().col(0) - ctx).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((got.weights.value().col(0) - w).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(got.weights.value().sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("frame attention: single frame and zero params") {
  const Dims d = tiny_dims();
  ad::ParamSet ps;
  Decoder dec(ps, d, {});
  std::mt19937_64 rng(3);
  ad::Tape t(false);
  const ad::Mat frames = randn(rng, 5, d.frame_dim);
  const ad::Var h = t.constant(randn(rng, d.hidden, 1));
  const auto uniform = dec.frame_attention(t, h, dec.frame_memory(t, frames));
  CHECK((uniform.weights.value().array() - 0.2).abs().maxCoeff() < 1e-15);
  CHECK(uniform.context.value().col(0).isApprox(frames.colwise().mean().transpose(), 1e-12));

  ps.init_uniform(rng, 1.0);
  const auto single = dec.frame_attention(t, h, dec.frame_memory(t, frames.topRows(1)));
  CHECK(single.weights.value()(0, 0) == 1.0);
  CHECK(single.context.value().col(0) == frames.row(0).transpose());
  CHECK_THROWS(dec.frame_memory(t, ad::Mat(0, d.frame_dim)));
}

TEST_CASE("word step: zero output weights give uniform logits; bad token id throws") {
  const Dims d = tiny_dims();
  ad::ParamSet ps;
  Decoder dec(ps, d, {});
  std::mt19937_64 rng(1);
  ps.init_uniform(rng, 0.5);
  dec.out_w().value.setZero();
  dec.out_b().value.setZero();
  ad::Tape t(false);
  const auto mem = dec.frame_memory(t, randn(rng, 3, d.frame_dim));
  const ad::Var sh = t.constant(randn(rng, d.hidden, 1));
  const auto ws = dec.word_step(t, dec.initial_word_state(t), 1, sh, mem);
  CHECK(ws.logits.rows() == d.vocab);
  CHECK(ad::cross_entropy(ws.logits, 4).scalar() == doctest::Approx(std::log(d.vocab)).epsilon(1e-15));
  CHECK_THROWS(dec.word_step(t, dec.initial_word_state(t), d.vocab, sh, mem));
}

TEST_CASE("forced logits decode exactly [w0, w1] and stop at EOS") {
  // Word cell driven only by the previous token: forget gate closed, output
  // gate open, cell input = one-hot embedding of the previous token.
  const Vocabulary vocab = tiny_vocab(2);  // w0 = 4, w1 = 5
  ModelConfig mc = tiny_model(8);
  mc.embed = 8;
  CaptionModel m(mc, vocab);
  m.params().set_zero();
  const int H = 8;
  auto& b = m.params().at("dec.word_lstm.b").value;
  b.middleRows(0, H).setConstant(30.0);
  b.middleRows(H, H).setConstant(-30.0);
  b.middleRows(2 * H, H).setConstant(30.0);
  auto& w = m.params().at("dec.word_lstm.w").value;
  auto& embed = m.params().at("dec.embed").value;
  for (int k = 0; k < vocab.size(); ++k) {
    embed(k, k) = 1.0;
    w(3 * H + k, k) = 5.0;
  }
  auto& out = m.params().at("dec.out_w").value;
  out(4, Vocabulary::kBos) = 10.0;
  out(5, 4) = 10.0;
  out(Vocabulary::kEos, 5) = 10.0;
  std::mt19937_64 rng(2);
  const auto video = tiny_video(rng, 4);
  const auto para = generate_paragraph(m, video, {{0.0, 10.0, 1.0}}, DecodeMode::kGreedy);
  REQUIRE(para.size() == 1);
  CHECK(para[0] == std::vector<TokenId>{4, 5});
  CHECK(generate_paragraph(m, video, {}, DecodeMode::kGreedy).empty());
}

TEST_CASE("a model that never emits EOS truncates every sentence at 30 tokens") {
  CaptionModel m(tiny_model(8), tiny_vocab(3));
  std::mt19937_64 rng(4);
  m.init(3);
  m.params().at("dec.out_w").value.setZero();
  m.params().at("dec.out_b").value.setZero();
  m.params().at("dec.out_b").value(5) = 5.0;
  const auto video = tiny_video(rng, 4);
  const auto para = generate_paragraph(m, video, {{0, 3, 1}, {2, 8, 1}}, DecodeMode::kGreedy);
  REQUIRE(para.size() == 2);
  for (const auto& s : para) CHECK(s.size() == 30);
}

TEST_CASE("greedy decoding is deterministic for fixed parameters") {
  CaptionModel m(tiny_model(12), tiny_vocab(6));
  m.init(9);
  std::mt19937_64 rng(4);
  const auto video = tiny_video(rng, 4);
  const std::vector<Proposal> ev = {{0, 4, 1}, {3, 9, 1}};
  CHECK(generate_paragraph(m, video, ev, DecodeMode::kGreedy) == generate_paragraph(m, video, ev, DecodeMode::kGreedy));
  std::mt19937_64 r1(5), r2(5);
  CHECK(generate_paragraph(m, video, ev, DecodeMode::kSample, &r1) ==
        generate_paragraph(m, video, ev, DecodeMode::kSample, &r2));
}

TEST_CASE("ablation switches: sentence RNN off resets per event, relation encoder off keeps pooled only") {
  std::mt19937_64 rng(7);
  const auto video = tiny_video(rng, 4);
  const std::vector<Proposal> ev = {{0, 4, 1}, {3, 9, 1}};
  auto second_event_h = [&](CaptionModel& m, const std::vector<Proposal>& events) {
    ad::Tape t(false);
    CaptionModel::Session s(m, t, video, events);
    for (int i = 0; i + 1 < s.num_events(); ++i) {
      s.begin_event(i);
      s.step(Vocabulary::kBos);
      s.end_event();
    }
    s.begin_event(s.num_events() - 1);
    return s.state().h;
  };
  ModelConfig off = tiny_model(8);
  off.use_tsrm = false;
  off.use_sent_rnn = false;
  CaptionModel a(off, tiny_vocab(2));
  a.init(1);
  CHECK(off.z_dim() == off.feature_dim);
  CHECK(second_event_h(a, ev) == second_event_h(a, {ev[1]}));

  ModelConfig on = off;
  on.use_sent_rnn = true;
  CaptionModel b(on, tiny_vocab(2));
  b.init(1);
  CHECK(second_event_h(b, ev) != second_event_h(b, {ev[1]}));

  ModelConfig full = tiny_model(8);
  CHECK(full.z_dim() > full.feature_dim);
}
