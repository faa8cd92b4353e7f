#include "dvc/decoder.hpp"

#include <stdexcept>

#include "dvc/config.hpp"

namespace dvc::decoder {

Lstm::Lstm(ad::ParamSet& params, const std::string& prefix, int input, int hidden)
    : input_(input), hidden_(hidden) {
  w_ = &params.add(prefix + "w", 4 * hidden, input + hidden);
  b_ = &params.add(prefix + "b", 4 * hidden, 1);
}

LstmState Lstm::zero_state(ad::Tape& t) const {
  return {t.constant(ad::Mat::Zero(hidden_, 1)), t.constant(ad::Mat::Zero(hidden_, 1))};
}

LstmState Lstm::step(ad::Tape& t, ad::Var x, const LstmState& prev) {
  if (x.rows() != input_) throw std::invalid_argument("lstm: input width mismatch");
  const int H = hidden_;
  ad::Var pre = ad::affine(t, *w_, *b_, ad::vcat({x, prev.h}));
  ad::Var i = ad::sigmoid(ad::rows(pre, 0, H));
  ad::Var f = ad::sigmoid(ad::rows(pre, H, H));
  ad::Var o = ad::sigmoid(ad::rows(pre, 2 * H, H));
  ad::Var g = ad::tanh(ad::rows(pre, 3 * H, H));
  ad::Var c = ad::add(ad::cmul(f, prev.c), ad::cmul(i, g));
  ad::Var h = ad::cmul(o, ad::tanh(c));
  return {h, c};
}

Decoder::Decoder(ad::ParamSet& params, const Dims& d, const Switches& sw, const std::string& prefix)
    : dims_(d),
      sw_(sw),
      sent_lstm_(params, prefix + "sent_lstm.", 2 * d.proj + d.pos_dim, d.hidden),
      word_lstm_(params, prefix + "word_lstm.", d.embed + d.frame_dim + d.hidden, d.hidden) {
  if (d.z_dim < 1 || d.frame_dim < 1 || d.hidden < 1 || d.embed < 1 || d.pos_hidden < 1 || d.pos_dim < 1 ||
      d.proj < 1 || d.attn < 1 || d.vocab < 1)
    throw ValidationError("decoder dims must be positive");
  pos_w1_ = &params.add(prefix + "pos_w1", d.pos_hidden, 2);
  pos_b1_ = &params.add(prefix + "pos_b1", d.pos_hidden, 1);
  pos_w2_ = &params.add(prefix + "pos_w2", d.pos_dim, d.pos_hidden);
  pos_b2_ = &params.add(prefix + "pos_b2", d.pos_dim, 1);
  gate_w_ = &params.add(prefix + "gate_w", gate_width(), d.pos_dim + d.z_dim + 2 * d.hidden);
  gate_b_ = &params.add(prefix + "gate_b", gate_width(), 1);
  vis_w_ = &params.add(prefix + "vis_w", d.proj, d.z_dim);
  lin_w_ = &params.add(prefix + "lin_w", d.proj, d.hidden);
  embed_ = &params.add(prefix + "embed", d.embed, d.vocab);
  att_wh_ = &params.add(prefix + "att_wh", d.attn, d.hidden);
  att_wf_ = &params.add(prefix + "att_wf", d.attn, d.frame_dim);
  att_v_ = &params.add(prefix + "att_v", 1, d.attn);
  out_w_ = &params.add(prefix + "out_w", d.vocab, d.hidden);
  out_b_ = &params.add(prefix + "out_b", d.vocab, 1);
}

ad::Var Decoder::position_embed(ad::Tape& t, const Segment& span, double duration) {
  if (!(duration > 0.0)) throw ValidationError("position_embed: duration must be positive");
  ad::Mat in(2, 1);
  in << span.start / duration, span.end / duration;
  ad::Var hidden = ad::relu(ad::affine(t, *pos_w1_, *pos_b1_, t.constant(in)));
  return ad::affine(t, *pos_w2_, *pos_b2_, hidden);
}

ad::Var Decoder::gate(ad::Tape& t, ad::Var l, ad::Var z, ad::Var s_prev, ad::Var h_prev) {
  // Bounded pre-activation keeps both g and 1 - g nonzero in double precision.
  ad::Var pre = ad::affine(t, *gate_w_, *gate_b_, ad::vcat({l, z, s_prev, h_prev}));
  return ad::sigmoid(ad::clamp(pre, -kGateLimit, kGateLimit));
}

SentenceContext Decoder::initial_context(ad::Tape& t) const {
  return {sent_lstm_.zero_state(t), t.constant(ad::Mat::Zero(dims_.hidden, 1))};
}

SentenceStep Decoder::sentence_step(ad::Tape& t, const SentenceContext& ctx, ad::Var l, ad::Var z) {
  SentenceStep out;
  out.l = l;
  ad::Var visual = ad::matmul(t.param(*vis_w_), z);
  ad::Var linguistic = ad::matmul(t.param(*lin_w_), ctx.s_prev);
  if (sw_.cmg) {
    out.gate = gate(t, l, z, ctx.s_prev, ctx.sent.h);
    ad::Var g = out.gate;
    if (sw_.scalar_gate) g = ad::matmul(t.constant(ad::Mat::Ones(dims_.proj, 1)), g);
    visual = ad::cmul(g, visual);
    linguistic = ad::cmul(ad::one_minus(g), linguistic);
  }
  out.x = ad::vcat({visual, linguistic, l});
  out.sent = sent_lstm_.step(t, out.x, ctx.sent);
  return out;
}

FrameMemory Decoder::frame_memory(ad::Tape& t, const Matrix& frames_rows) {
  if (frames_rows.rows() < 1) throw ValidationError("frame_attention: no frames");
  if (frames_rows.cols() != dims_.frame_dim) throw ValidationError("frame_attention: frame width mismatch");
  FrameMemory m;
  m.frames = t.constant(frames_rows.transpose());
  m.projected = ad::matmul(t.param(*att_wf_), m.frames);
  return m;
}

FrameAttention Decoder::frame_attention(ad::Tape& t, ad::Var word_hidden, const FrameMemory& mem) {
  ad::Var query = ad::matmul(t.param(*att_wh_), word_hidden);              // attn x 1
  ad::Var energy = ad::matmul(t.param(*att_v_), ad::tanh(ad::add_bias(mem.projected, query)));  // 1 x T
  FrameAttention out;
  out.weights = ad::softmax_cols(ad::transpose(energy));  // T x 1
  out.context = ad::matmul(mem.frames, out.weights);
  return out;
}

Decoder::WordStep Decoder::word_step(ad::Tape& t, const LstmState& word, int prev_token, ad::Var sentence_h,
                                     const FrameMemory& mem) {
  if (prev_token < 0 || prev_token >= dims_.vocab)
    throw std::out_of_range("word_step: token id out of range: " + std::to_string(prev_token));
  WordStep out;
  out.attention = frame_attention(t, word.h, mem);
  ad::Var emb = ad::col(t.param(*embed_), prev_token);
  out.word = word_lstm_.step(t, ad::vcat({emb, out.attention.context, sentence_h}), word);
  out.logits = ad::affine(t, *out_w_, *out_b_, out.word.h);
  return out;
}

}  // namespace dvc::decoder
