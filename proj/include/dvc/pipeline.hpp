#pragma once

// End-to-end pipeline (proposal scorer -> event selector -> captioner),
// corpus splits, checkpoints and the shared experiment drivers used by the
// command-line tool and the acceptance suite.

#include <memory>
#include <string>
#include <vector>

#include "dvc/esgn.hpp"
#include "dvc/metrics.hpp"
#include "dvc/model.hpp"
#include "dvc/proposals.hpp"
#include "dvc/training.hpp"

namespace dvc {

/// Keys of `f` starting with `prefix`, with the prefix removed.
FlatConfig flat_section(const FlatConfig& f, const std::string& prefix);

struct PipelineConfig {
  ModelConfig model;
  training::TrainConfig xe;
  training::TrainConfig scst{.mode = training::Mode::kScst};
  ProposalParams proposals;
  int scorer_hidden = 32;
  int scorer_epochs = 30;
  double scorer_lr = 3e-3;
  int selector_hidden = 0;  // 0 = model hidden
  int selector_epochs = 30;
  double selector_lr = 1e-3;
  int max_events = 10;
  int vocab_min_count = 5;
  std::uint64_t seed = 1;

  /// Model keys are unprefixed; the rest live under xe., scst., scorer.,
  /// selector. and proposals.
  static PipelineConfig from_flat(const FlatConfig& f);
  FlatConfig to_flat() const;
  /// Routes one seed into every random consumer.
  void apply_seed(std::uint64_t s);
  esgn::SelectorDims selector_dims() const;
};

/// Desk-scale defaults used by the experiments (hidden 64, short schedules).
PipelineConfig desk_config();

class Pipeline {
 public:
  Pipeline(const PipelineConfig& cfg, Vocabulary vocab);
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  const PipelineConfig& config() const { return cfg_; }
  CaptionModel& model() { return *model_; }
  esgn::Selector& selector() { return *selector_; }
  ProposalScorer& scorer() { return *scorer_; }
  void init();

 private:
  PipelineConfig cfg_;
  std::unique_ptr<CaptionModel> model_;
  std::unique_ptr<esgn::Selector> selector_;
  std::unique_ptr<ProposalScorer> scorer_;
};

struct PipelineTrainStats {
  double scorer_loss = 0.0;
  double selector_loss = 0.0;
  double candidate_recall = 0.0;
  training::TrainResult captioner;
};

/// Proposal scorer, then selector on its candidates, then xe captioning on
/// ground-truth events.
PipelineTrainStats train_pipeline(Pipeline& p, const std::vector<VideoRecord>& train,
                                  const training::LogSink& log = {});

std::vector<CandidateSet> learnt_candidates(Pipeline& p, const std::vector<VideoRecord>& videos);

enum class ProposalSource { kGt, kLearnt };
ProposalSource parse_proposal_source(const std::string& s);

/// Greedy captions for every video, over ground-truth spans or over the
/// greedily selected learnt event sequence.
ResultMap predict(Pipeline& p, const std::vector<VideoRecord>& videos, ProposalSource source);
/// Same with a seed ensemble over ground-truth or learnt events of the first
/// pipeline.
ResultMap predict_ensemble(const std::vector<Pipeline*>& members, const std::vector<VideoRecord>& videos,
                           ProposalSource source);

metrics::ScoreReport evaluate_results(const ResultMap& results, const std::vector<VideoRecord>& videos,
                                      const metrics::DenseEvalOptions& opt = {});
metrics::ScoreReport evaluate(Pipeline& p, const std::vector<VideoRecord>& videos, ProposalSource source,
                              const metrics::DenseEvalOptions& opt = {});

// --------------------------------------------------------------- corpus

struct CorpusSplits {
  std::vector<VideoRecord> train;
  std::vector<VideoRecord> val;
};
/// The first n - n_val videos train, the rest validate.
CorpusSplits split_corpus(const std::vector<VideoRecord>& videos, int n_val);
/// Writes {"train": [...], "val": [...]} of video ids.
void save_splits(const std::string& path, const CorpusSplits& s);
/// Loads a corpus directory and its splits.json (all videos train if absent).
CorpusSplits load_corpus_splits(const std::string& dir);

// ----------------------------------------------------------- checkpoint

struct CheckpointInfo {
  int step = 0;
  std::string mode;
  std::string config_hash;
  std::string vocab_hash;
};

/// manifest.json (config, hashes, step, tensor list) plus one float32
/// matrix file per tensor under tensors/.
void save_checkpoint(const std::string& dir, Pipeline& p, const CheckpointInfo& info);
std::unique_ptr<Pipeline> load_checkpoint(const std::string& dir, CheckpointInfo* info = nullptr);
bool checkpoint_exists(const std::string& dir);

// ----------------------------------------------------------- experiments

struct AblationRow {
  std::string label;  // e.g. "T-S": TSRM, CMG, sentence RNN
  bool tsrm = false;
  bool cmg = false;
  bool sent_rnn = false;
  std::map<std::string, double> scores;
};

/// The five encoder/decoder variants in table order: none, TSRM only,
/// sentence RNN only, CMG + sentence RNN, all three.
std::vector<AblationRow> ablation_variants();

/// Trains each variant with xe on ground-truth events and scores it on `val`
/// with ground-truth proposals. Every variant shares the seed.
std::vector<AblationRow> run_ablation(const PipelineConfig& base, const Vocabulary& vocab,
                                      const std::vector<VideoRecord>& train, const std::vector<VideoRecord>& val,
                                      const training::LogSink& log = {});
std::string ablation_table(const std::vector<AblationRow>& rows);
std::string ablation_json(const std::vector<AblationRow>& rows);

}  // namespace dvc
