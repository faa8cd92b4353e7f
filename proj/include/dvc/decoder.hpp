#pragma once

// Gated hierarchical recurrent decoder.
//
// A sentence-level LSTM runs once per event. Its input mixes the visual
// event feature z_i and the linguistic summary s_{i-1} (the last word-LSTM
// hidden of the previous sentence) through a sigmoid gate g_i computed from
// [l_i, z_i, s_{i-1}, h_{i-1}]; the span embedding l_i is appended ungated.
// A word-level LSTM then generates the sentence, attending over the frames
// inside the event at every step.

#include <string>
#include <vector>

#include "dvc/autodiff.hpp"
#include "dvc/corpus.hpp"

namespace dvc::decoder {

/// Gate pre-activations are clamped to +-kGateLimit.
inline constexpr double kGateLimit = 30.0;

struct Dims {
  int z_dim = 544;
  int frame_dim = 32;
  int hidden = 512;
  int embed = 512;
  int pos_hidden = 512;
  int pos_dim = 512;
  /// Width of the gated visual/linguistic channels.
  int proj = 512;
  int attn = 512;
  int vocab = 4;
};

struct Switches {
  bool cmg = true;
  bool sent_rnn = true;
  /// One gate value shared by all channels instead of one per channel.
  bool scalar_gate = false;
};

struct LstmState {
  ad::Var h;
  ad::Var c;
};

/// Single LSTM layer, gates stacked as (input, forget, output, cell).
class Lstm {
 public:
  Lstm(ad::ParamSet& params, const std::string& prefix, int input, int hidden);
  LstmState step(ad::Tape& t, ad::Var x, const LstmState& prev);
  LstmState zero_state(ad::Tape& t) const;
  int hidden() const { return hidden_; }

 private:
  int input_, hidden_;
  ad::Parameter* w_;
  ad::Parameter* b_;
};

/// Sentence-level recurrent context carried between events.
struct SentenceContext {
  LstmState sent;  // h_{i-1}, c_{i-1}
  ad::Var s_prev;  // s_{i-1}
};

struct SentenceStep {
  LstmState sent;  // h_i
  ad::Var gate;    // g_i (proj x 1, or 1 x 1 for a scalar gate); invalid when CMG is off
  ad::Var l;       // l_i
  ad::Var x;       // sentence-LSTM input
};

struct FrameAttention {
  ad::Var context;  // frame_dim x 1
  ad::Var weights;  // T x 1
};

/// Frames of the current event plus their cached projection.
struct FrameMemory {
  ad::Var frames;     // frame_dim x T
  ad::Var projected;  // attn x T
};

class Decoder {
 public:
  Decoder(ad::ParamSet& params, const Dims& dims, const Switches& sw, const std::string& prefix = "dec.");

  const Dims& dims() const { return dims_; }
  const Switches& switches() const { return sw_; }
  int gate_width() const { return sw_.scalar_gate ? 1 : dims_.proj; }

  /// l = W2 relu(W1 [start/duration, end/duration] + b1) + b2.
  ad::Var position_embed(ad::Tape& t, const Segment& span, double duration);
  /// g = sigmoid(clamp(Wg [l; z; s_prev; h_prev] + bg)).
  ad::Var gate(ad::Tape& t, ad::Var l, ad::Var z, ad::Var s_prev, ad::Var h_prev);
  SentenceContext initial_context(ad::Tape& t) const;
  SentenceStep sentence_step(ad::Tape& t, const SentenceContext& ctx, ad::Var l, ad::Var z);

  FrameMemory frame_memory(ad::Tape& t, const Matrix& frames_rows);
  /// e_k = w^T tanh(Wh word_hidden + Wf frame_k); softmax; weighted sum of frames.
  FrameAttention frame_attention(ad::Tape& t, ad::Var word_hidden, const FrameMemory& mem);

  struct WordStep {
    LstmState word;
    ad::Var logits;  // vocab x 1
    FrameAttention attention;
  };
  /// Input = embed(prev) (+) attention context (+) sentence hidden.
  WordStep word_step(ad::Tape& t, const LstmState& word, int prev_token, ad::Var sentence_h, const FrameMemory& mem);
  LstmState initial_word_state(ad::Tape& t) const { return word_lstm_.zero_state(t); }

  ad::Parameter& gate_b() { return *gate_b_; }
  ad::Parameter& gate_w() { return *gate_w_; }
  ad::Parameter& out_w() { return *out_w_; }
  ad::Parameter& out_b() { return *out_b_; }

 private:
  Dims dims_;
  Switches sw_;
  ad::Parameter* pos_w1_;
  ad::Parameter* pos_b1_;
  ad::Parameter* pos_w2_;
  ad::Parameter* pos_b2_;
  ad::Parameter* gate_w_;
  ad::Parameter* gate_b_;
  ad::Parameter* vis_w_;
  ad::Parameter* lin_w_;
  Lstm sent_lstm_;
  ad::Parameter* embed_;
  ad::Parameter* att_wh_;
  ad::Parameter* att_wf_;
  ad::Parameter* att_v_;
  Lstm word_lstm_;
  ad::Parameter* out_w_;
  ad::Parameter* out_b_;
};

/// Value-level view of the hierarchical state after a sentence step.
struct DecoderState {
  Vector h;
  Vector s;
  Vector g;
  Vector l;
};

}  // namespace dvc::decoder
