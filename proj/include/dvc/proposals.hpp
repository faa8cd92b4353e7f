#pragma once

// Candidate event proposals: a scored multi-scale sliding-window generator
// with temporal NMS, plus the proposal precision/recall statistic.

#include <map>
#include <string>
#include <vector>

#include "dvc/autodiff.hpp"
#include "dvc/corpus.hpp"
#include "dvc/temporal.hpp"

namespace dvc {

struct Proposal {
  double start = 0.0;
  double end = 0.0;
  double score = 0.0;

  Segment span() const { return {start, end}; }
};

/// Sorted by score descending, at most K entries.
struct CandidateSet {
  std::string video_id;
  std::vector<Proposal> proposals;
};

/// Ordering used everywhere candidates are ranked: score desc, then wider
/// first, then earlier start.
bool proposal_rank_less(const Proposal& a, const Proposal& b);

struct ProposalParams {
  /// Window lengths as fractions of the video duration.
  std::vector<double> scales = {0.04, 0.06, 0.08, 0.1, 0.13, 0.16, 0.2, 0.25, 0.3, 0.35, 0.4, 0.5, 0.6, 0.8, 1.0};
  /// Window step as a fraction of the window length.
  double step_frac = 0.2;
  double nms_threshold = 0.8;
  int top_k = 100;
};

/// Two affine maps with a ReLU between, over
/// mean window feature (+) inside-start, inside-end, before and after clips.
class ProposalScorer {
 public:
  ProposalScorer(int feature_dim, int hidden);

  int feature_dim() const { return feature_dim_; }
  int input_dim() const { return 5 * feature_dim_; }
  ad::ParamSet& params() { return params_; }
  const ad::ParamSet& params() const { return params_; }

  /// Column k = descriptor of window k.
  ad::Mat window_inputs(const VideoRecord& record, const std::vector<Segment>& windows) const;
  /// 1 x W logits.
  ad::Var logits(ad::Tape& t, const ad::Mat& inputs);
  std::vector<double> scores(const VideoRecord& record, const std::vector<Segment>& windows);

 private:
  int feature_dim_;
  ad::ParamSet params_;
  ad::Parameter* w1_;
  ad::Parameter* b1_;
  ad::Parameter* w2_;
  ad::Parameter* b2_;
};

/// Multi-scale windows, in scale order then start order.
std::vector<Segment> sliding_windows(double duration, const ProposalParams& params);

/// Greedy temporal NMS in rank order; keeps at most `keep` proposals.
std::vector<Proposal> temporal_nms(std::vector<Proposal> proposals, double threshold, int keep);

CandidateSet generate_candidates(const VideoRecord& record, ProposalScorer& scorer, const ProposalParams& params);

struct ScorerTrainStats {
  int epochs = 0;
  double final_loss = 0.0;
};

/// Fits the scorer to each window's max tIoU against ground truth.
ScorerTrainStats train_proposal_scorer(ProposalScorer& scorer, const std::vector<VideoRecord>& videos,
                                       const ProposalParams& params, int epochs, double lr, std::uint64_t seed);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  std::vector<double> precision_at;
  std::vector<double> recall_at;
  bool empty_predictions = false;
  bool empty_ground_truth = false;
};

/// Threshold-membership matching: a prediction counts as correct at t if it
/// reaches tIoU >= t with any ground-truth segment, and vice versa.
PrecisionRecall proposal_precision_recall(const std::vector<Proposal>& pred, const std::vector<Segment>& gt,
                                          const std::vector<double>& thresholds);

/// Fraction of ground-truth events hit at tIoU >= threshold by any candidate.
double candidate_recall(const std::vector<CandidateSet>& sets, const std::vector<VideoRecord>& videos,
                        double threshold);

/// {video_id: [[start, end, score], ...]}
std::string candidates_to_json(const std::vector<CandidateSet>& sets);
std::vector<CandidateSet> candidates_from_json(const std::string& text);

}  // namespace dvc
