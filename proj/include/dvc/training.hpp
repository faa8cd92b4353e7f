#pragma once

// Cross-entropy training, self-critical fine-tuning over sampled event
// sequences, finite-difference gradient checks and seed ensembles.

#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dvc/esgn.hpp"
#include "dvc/metrics.hpp"
#include "dvc/model.hpp"

namespace dvc::training {

enum class Mode { kXe, kScst };
std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);

struct TrainConfig {
  Mode mode = Mode::kXe;
  /// 0 picks the mode default (1e-3 for xe, 1e-5 for scst).
  double lr = 0.0;
  int batch_size = 8;
  int epochs = 10;
  /// Stop after this many optimizer steps (0 = no limit).
  int max_steps = 0;
  std::uint64_t seed = 1;
  int scst_sequences_per_video = 24;
  metrics::Metric reward_metric = metrics::Metric::kMeteor;
  /// Score the whole paragraph at once instead of averaging sentences.
  bool paragraph_reward = false;
  double grad_clip = 5.0;
  int max_len = 30;
  /// Emit a log line every this many steps (the last step is always logged).
  int log_every = 1;

  double effective_lr() const;
  static TrainConfig from_flat(const FlatConfig& f);
  FlatConfig to_flat() const;
};

/// One video with its events in decoding order and encoded sentences.
struct XeExample {
  const VideoRecord* record = nullptr;
  std::vector<Proposal> events;
  std::vector<std::vector<TokenId>> payloads;
};
XeExample gt_example(const VideoRecord& record, const Vocabulary& vocab);

struct XeLoss {
  ad::Var loss;  // 1 x 1 mean NLL per non-PAD token
  int tokens = 0;
};
/// Teacher-forced mean negative log-likelihood per non-PAD token over all
/// events of the batch.
XeLoss xe_loss(CaptionModel& model, ad::Tape& t, const std::vector<XeExample>& batch);

/// Mean per-token loss over a corpus without touching gradients.
double corpus_xe_loss(CaptionModel& model, const std::vector<XeExample>& examples);

using LogSink = std::function<void(const std::string& json_line)>;

struct TrainResult {
  int steps = 0;  // last step number (continues from start_step)
  std::vector<double> losses;
  double final_loss = 0.0;  // corpus loss after training (float32 parameters)
  int skipped_videos = 0;
  double mean_reward = 0.0;
};

/// Minibatch xe training on ground-truth events. Parameters are rounded to
/// float32 at the end so a saved checkpoint reproduces final_loss.
TrainResult train_xe(CaptionModel& model, const std::vector<VideoRecord>& videos, const TrainConfig& cfg,
                     const LogSink& log = {}, int start_step = 0);

struct RewardRecord {
  std::string video_id;
  double r_sample = 0.0;
  double r_greedy = 0.0;
  double advantage = 0.0;
};

/// Scores predicted events against the sentence of their max-tIoU
/// ground-truth event (tIoU 0 scores 0).
double paragraph_reward(const std::vector<Proposal>& events, const std::vector<std::vector<std::string>>& sentences,
                        const VideoRecord& record, const TrainConfig& cfg,
                        const metrics::SentenceScorer& scorer = {});

struct ScstStep {
  double loss = 0.0;
  /// Means over the sampled sequences.
  RewardRecord stats;
  std::vector<RewardRecord> per_sequence;
  bool skipped = false;
};

/// Accumulates the self-critical gradient of one video into model grads.
ScstStep scst_step(CaptionModel& model, esgn::Selector& selector, const VideoRecord& record,
                   const CandidateSet& candidates, const TrainConfig& cfg, std::mt19937_64& rng,
                   const metrics::SentenceScorer& scorer = {});

/// SCST epochs over learnt candidate sets. Videos without ground truth are
/// skipped and counted.
TrainResult train_scst(CaptionModel& model, esgn::Selector& selector, const std::vector<VideoRecord>& videos,
                       const std::vector<CandidateSet>& candidates, const TrainConfig& cfg, const LogSink& log = {},
                       int start_step = 0);

// ------------------------------------------------------------ grad check

enum class Part { kTsrm, kCmg, kSentenceRnn, kWordRnn, kAttention, kSelector, kFull };
std::string part_name(Part p);
Part parse_part(const std::string& s);

struct GradCheckDims {
  int feature_dim = 8;
  int hidden = 16;
  int vocab = 20;
  int events = 3;
  int d_pos = 8;
  int frames = 12;
  int candidates = 6;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  std::uint64_t seed = 7;
  bool zero_init = false;
  /// Coordinates checked per tensor (0 = all).
  int max_coords = 0;
  /// Applied to the analytic gradients before comparison (negative controls).
  std::function<void(ad::ParamSet&)> corrupt;
};

struct GradCheckReport {
  std::string part;
  double max_rel_error = 0.0;
  std::string worst_param;
  bool passed = false;
  /// Name of the first failing tensor (empty on success).
  std::string failed_param;
  int coords_checked = 0;
  std::string to_string() const;
};

GradCheckReport grad_check(Part part, const GradCheckDims& dims = {}, const GradCheckOptions& opt = {});

// -------------------------------------------------------------- ensemble

/// Greedy decoding with per-step averaged softmax distributions. Each model
/// keeps its own state and consumes the jointly chosen token.
std::vector<std::vector<TokenId>> ensemble_decode(const std::vector<CaptionModel*>& models, const VideoRecord& record,
                                                  const std::vector<Proposal>& events, int max_len = 30);

}  // namespace dvc::training
