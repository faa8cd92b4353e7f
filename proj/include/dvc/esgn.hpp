#pragma once

// Event sequence selection: a recurrent pointer network that picks an
// ordered subset of candidate proposals, terminated by an END token.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dvc/autodiff.hpp"
#include "dvc/decoder.hpp"
#include "dvc/proposals.hpp"

namespace dvc::esgn {

struct EventSequence {
  std::string video_id;
  /// Selection order.
  std::vector<Proposal> events;
  /// Candidate indices, parallel to events.
  std::vector<int> indices;

  /// Events ordered by start time (ties: earlier end first).
  std::vector<Proposal> by_start() const;
};

enum class Mode { kGreedy, kSample };

struct SelectorDims {
  int feature_dim = 32;
  int hidden = 512;
  int pointer = 512;
  int max_events = 10;
};

class Selector {
 public:
  Selector(const SelectorDims& dims, const std::string& prefix = "sel.");

  const SelectorDims& dims() const { return dims_; }
  ad::ParamSet& params() { return params_; }
  const ad::ParamSet& params() const { return params_; }
  ad::Parameter& end_embedding() { return *end_; }

  /// (D + 3) x K: pooled feature, start/duration, end/duration, score.
  ad::Mat candidate_inputs(const CandidateSet& candidates, const VideoRecord& record) const;

  /// Recurrent pointer state for one video.
  class Run {
   public:
    Run(Selector& sel, ad::Tape& t, const ad::Mat& inputs);
    int num_candidates() const { return num_; }
    /// Log-probabilities over candidates then END (index K), with already
    /// selected candidates masked out.
    ad::Var log_probs();
    /// Feeds the chosen candidate back into the recurrent cell.
    void advance(int choice);
    const std::vector<bool>& mask() const { return mask_; }

   private:
    Selector& sel_;
    ad::Tape& t_;
    int num_;
    ad::Var enc_;   // hidden x K
    ad::Var keys_;  // pointer x (K + 1)
    decoder::LstmState state_;
    std::vector<bool> mask_;
  };

 private:
  SelectorDims dims_;
  ad::ParamSet params_;
  ad::Parameter* enc_w_;
  ad::Parameter* enc_b_;
  ad::Parameter* init_w_;
  ad::Parameter* init_b_;
  ad::Parameter* start_;
  ad::Parameter* end_;
  ad::Parameter* ptr_wh_;
  ad::Parameter* ptr_bh_;
  ad::Parameter* ptr_wk_;
  decoder::Lstm lstm_;
};

EventSequence select_sequence(Selector& sel, const CandidateSet& candidates, const VideoRecord& record, Mode mode,
                              std::mt19937_64* rng = nullptr);

struct TeacherTargets {
  /// Candidate index per step, then the END index.
  std::vector<int> steps;
  /// Steps whose best candidate had tIoU 0 with its ground-truth event.
  int poor_matches = 0;
};

/// Ground-truth events in start order, each mapped to the unused candidate
/// of highest tIoU (ties: lower index), followed by END.
TeacherTargets teacher_targets(const CandidateSet& candidates, const std::vector<Segment>& gt_events);

struct SelectorStep {
  double loss = 0.0;
  int poor_matches = 0;
};

/// Mean pointer cross-entropy under teacher forcing; adds into parameter grads.
SelectorStep train_selector_step(Selector& sel, const CandidateSet& candidates, const VideoRecord& record);

/// Graph-level loss for a fixed target list (used by the gradient checks).
ad::Var selector_loss(Selector& sel, ad::Tape& t, const CandidateSet& candidates, const VideoRecord& record,
                      const std::vector<int>& targets);

struct SelectorTrainStats {
  int epochs = 0;
  double final_loss = 0.0;
  int poor_matches = 0;
};

SelectorTrainStats train_selector(Selector& sel, const std::vector<CandidateSet>& candidates,
                                  const std::vector<VideoRecord>& videos, int epochs, double lr, std::uint64_t seed);

std::string sequences_to_json(const std::vector<EventSequence>& seqs);

}  // namespace dvc::esgn
