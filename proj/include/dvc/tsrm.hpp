#pragma once

// Temporal-semantic relation encoder.
//
// For the N events of one video it scores every ordered pair twice: a
// temporal branch over relative length/offset codes and a semantic branch
// of scaled dot products between pooled features. The two N x N score
// matrices are added, row-normalized with a softmax, and used to mix the
// projected pooled features of all events (self included). Each event's
// final feature is z_i = pooled_i (+) relational_i.

#include <string>
#include <vector>

#include "dvc/autodiff.hpp"
#include "dvc/corpus.hpp"
#include "dvc/proposals.hpp"

namespace dvc::tsrm {

/// Mean of the feature rows whose clips intersect the proposal.
Vector mean_pool(const VideoRecord& record, const Segment& span);
/// D x N matrix of mean-pooled features, one column per proposal.
Matrix pooled_matrix(const VideoRecord& record, const std::vector<Proposal>& proposals);

struct PairPositionCode {
  double relative_length = 0.0;
  double relative_distance = 0.0;
  /// sin/cos expansion of relative_length then relative_distance, 2 * d_pos entries.
  Vector code;
};

/// Multiplier applied to the ratios before the sinusoidal expansion.
inline constexpr double kPositionScale = 100.0;

/// Interleaved (sin, cos) pairs over d_pos/2 geometric frequencies.
Vector sinusoid(double x, int d_pos, double scale = kPositionScale);
PairPositionCode pair_position_code(const Segment& p_i, const Segment& p_j, int d_pos);

struct Dims {
  int feature_dim = 32;
  int d_pos = 16;
  int hidden = 512;
  int d_k = 64;
  int d_v = 512;
};

/// Parameters of the encoder, registered under `prefix` in a shared set.
class Tsrm {
 public:
  Tsrm(ad::ParamSet& params, const Dims& dims, const std::string& prefix = "tsrm.");

  const Dims& dims() const { return dims_; }
  int output_dim() const { return dims_.feature_dim + dims_.d_v; }

  ad::Parameter& pos_w0() { return *pos_w0_; }
  ad::Parameter& pos_b0() { return *pos_b0_; }
  ad::Parameter& pos_w1() { return *pos_w1_; }
  ad::Parameter& pos_b1() { return *pos_b1_; }
  ad::Parameter& wq() { return *wq_; }
  ad::Parameter& wk() { return *wk_; }
  ad::Parameter& wv() { return *wv_; }

  /// (2 d_pos) x N^2 codes; column i*N + j holds the code of pair (i, j).
  ad::Mat pair_codes(const std::vector<Proposal>& proposals) const;

  ad::Var temporal_scores(ad::Tape& t, const std::vector<Proposal>& proposals);
  ad::Var semantic_scores(ad::Tape& t, ad::Var pooled);

  struct Encoded {
    ad::Var temporal;    // N x N
    ad::Var semantic;    // N x N
    ad::Var fused;       // N x N
    ad::Var attention;   // N x N, rows sum to 1
    ad::Var relational;  // d_v x N
    ad::Var z;           // (D + d_v) x N
  };
  /// `pooled` is D x N (column per event, same order as proposals).
  Encoded encode(ad::Tape& t, const std::vector<Proposal>& proposals, ad::Var pooled);

 private:
  Dims dims_;
  ad::Parameter* pos_w0_;
  ad::Parameter* pos_b0_;
  ad::Parameter* pos_w1_;
  ad::Parameter* pos_b1_;
  ad::Parameter* wq_;
  ad::Parameter* wk_;
  ad::Parameter* wv_;
};

// Value-level conveniences over a no-grad tape.

struct RelationScores {
  Matrix temporal;
  Matrix semantic;
  Matrix fused;
  Matrix attention;
};

struct EventFeature {
  Vector pooled;
  Vector relational;
  Vector z;
};

Matrix temporal_scores(Tsrm& enc, const std::vector<Proposal>& proposals);
Matrix semantic_scores(Tsrm& enc, const std::vector<Vector>& pooled);
std::pair<RelationScores, std::vector<EventFeature>> encode_events(Tsrm& enc, const VideoRecord& record,
                                                                   const std::vector<Proposal>& proposals);

/// {"temporal": [[...]], "semantic": ..., "fused": ..., "attention": ...}
std::string relation_scores_to_json(const RelationScores& scores);

}  // namespace dvc::tsrm
