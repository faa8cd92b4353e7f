#pragma once

// The event captioning model: relation encoder + gated hierarchical
// decoder over one vocabulary, with the ablation switches that produce the
// five encoder/decoder variants.

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dvc/autodiff.hpp"
#include "dvc/config.hpp"
#include "dvc/decoder.hpp"
#include "dvc/proposals.hpp"
#include "dvc/tsrm.hpp"
#include "dvc/vocabulary.hpp"

namespace dvc {

struct ModelConfig {
  int feature_dim = 32;
  /// Default width for every recurrent and fully connected layer.
  int hidden = 512;
  int embed = 0;        // 0 = hidden
  int d_pos = 16;
  int d_k = 0;          // 0 = hidden
  int tsrm_hidden = 0;  // 0 = hidden
  int d_v = 0;          // 0 = hidden
  int proj = 0;         // 0 = hidden
  int attn = 0;         // 0 = hidden
  int pos_hidden = 0;   // 0 = hidden
  int pos_dim = 0;      // 0 = hidden
  bool use_tsrm = true;
  bool use_cmg = true;
  bool use_sent_rnn = true;
  bool scalar_gate = false;
  int max_len = 30;
  double init_scale = 0.08;

  int or_hidden(int v) const { return v > 0 ? v : hidden; }
  tsrm::Dims tsrm_dims() const;
  decoder::Dims decoder_dims(int vocab) const;
  int z_dim() const;

  static ModelConfig from_flat(const FlatConfig& f);
  FlatConfig to_flat() const;
  std::string hash() const;
};

enum class DecodeMode { kGreedy, kSample };

class CaptionModel {
 public:
  CaptionModel(const ModelConfig& cfg, Vocabulary vocab);
  CaptionModel(const CaptionModel&) = delete;
  CaptionModel& operator=(const CaptionModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ad::ParamSet& params() { return params_; }
  const ad::ParamSet& params() const { return params_; }
  tsrm::Tsrm* encoder() { return tsrm_.get(); }
  decoder::Decoder& dec() { return *dec_; }

  /// Uniform init plus forget-gate bias 1 on both LSTMs.
  void init(std::uint64_t seed);
  /// Rounds every parameter to float32 precision (the checkpoint format).
  void snap_to_float();

  /// z_dim x N event features for proposals given in decoding order.
  ad::Var event_features(ad::Tape& t, const VideoRecord& record, const std::vector<Proposal>& events);

  /// Frames of the record inside a span, one row per clip.
  static Matrix frames_within(const VideoRecord& record, const Segment& span);

  /// Step-wise decoding of one paragraph. Events must already be in
  /// decoding (start-time) order.
  class Session {
   public:
    Session(CaptionModel& m, ad::Tape& t, const VideoRecord& record, const std::vector<Proposal>& events);
    int num_events() const { return static_cast<int>(events_.size()); }
    /// Runs the sentence step for event i (must be called in order).
    const decoder::SentenceStep& begin_event(int i);
    /// Feeds prev_token and returns logits for the next token.
    ad::Var step(int prev_token);
    /// Marks the current word hidden as the sentence summary s_i.
    void end_event();
    decoder::DecoderState state() const;

   private:
    CaptionModel& m_;
    ad::Tape& t_;
    const VideoRecord& record_;
    std::vector<Proposal> events_;
    ad::Var z_;
    decoder::SentenceContext ctx_;
    decoder::SentenceStep sent_;
    decoder::FrameMemory frames_;
    decoder::LstmState word_;
    int current_ = -1;
  };

  struct TeacherForced {
    ad::Var nll_sum;  // 1 x 1 summed over non-PAD targets
    int tokens = 0;
    /// Logits and targets per padded position, event-major.
    std::vector<std::vector<ad::Var>> logits;
    std::vector<std::vector<TokenId>> targets;
  };
  /// Teacher forcing over ground-truth payloads (no BOS/EOS), padded per
  /// video to the longest sentence; PAD targets are masked.
  TeacherForced teacher_forced(ad::Tape& t, const VideoRecord& record, const std::vector<Proposal>& events,
                               const std::vector<std::vector<TokenId>>& payloads);

  struct Paragraph {
    std::vector<std::vector<TokenId>> sentences;
    /// Sum of log-probabilities of the emitted tokens (valid if the tape
    /// records gradients).
    ad::Var log_prob;
  };
  Paragraph generate(ad::Tape& t, const VideoRecord& record, const std::vector<Proposal>& events, DecodeMode mode,
                     std::mt19937_64* rng, int max_len);

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  ad::ParamSet params_;
  std::unique_ptr<tsrm::Tsrm> tsrm_;
  std::unique_ptr<decoder::Decoder> dec_;
};

/// Sum of -log p(target) over positions whose target is not PAD.
ad::Var masked_nll(ad::Tape& t, const std::vector<ad::Var>& logits, const std::vector<TokenId>& targets, int* counted);

/// Greedy (or sampled) paragraph for events in start order; no gradients.
std::vector<std::vector<TokenId>> generate_paragraph(CaptionModel& m, const VideoRecord& record,
                                                     const std::vector<Proposal>& events, DecodeMode mode,
                                                     std::mt19937_64* rng = nullptr, int max_len = 30);

/// Ground-truth events of a record as unit-score proposals in start order.
std::vector<Proposal> gt_proposals(const VideoRecord& record);
std::vector<std::vector<TokenId>> gt_payloads(const VideoRecord& record, const Vocabulary& vocab);

}  // namespace dvc
