#pragma once

// Caption metrics and the tIoU-matched dense captioning evaluation.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dvc/corpus.hpp"

namespace dvc::metrics {

using Tokens = std::vector<std::string>;

/// Geometric mean of clipped 1..4-gram precisions times the brevity
/// penalty (closest reference length). Any zero precision gives 0.
double bleu4(const Tokens& candidate, const std::vector<Tokens>& references);

struct Alignment {
  int matches = 0;
  int chunks = 0;
};

/// One-to-one exact-unigram alignment with the most matches, and among
/// those the fewest chunks.
Alignment align_exact(const Tokens& candidate, const Tokens& reference);

/// Exact-match METEOR: Fmean = 10PR/(R+9P), penalty 0.5 (chunks/m)^3,
/// maximized over references.
double meteor_lite(const Tokens& candidate, const std::vector<Tokens>& references);

enum class CiderVariant { kBase, kD };

/// Corpus CIDEr: mean over keys of the per-candidate score. Keys of the two
/// maps must coincide.
double cider(const std::map<std::string, Tokens>& candidates, const std::map<std::string, std::vector<Tokens>>& references,
             CiderVariant variant = CiderVariant::kBase);
/// Per-key scores in key order.
std::vector<double> cider_scores(const std::map<std::string, Tokens>& candidates,
                                 const std::map<std::string, std::vector<Tokens>>& references,
                                 CiderVariant variant = CiderVariant::kBase);

enum class Metric { kBleu4, kMeteor, kCider };
std::string metric_name(Metric m);
Metric parse_metric(const std::string& name);

/// Alternative sentence-level scorer (e.g. a wrapper around an official
/// tool). Replaces BLEU or METEOR-lite where supplied.
using SentenceScorer = std::function<double(const Tokens&, const std::vector<Tokens>&)>;

struct ScoreReport {
  std::vector<double> thresholds;
  /// Final score per metric name (mean over thresholds).
  std::map<std::string, double> scores;
  /// Per-metric, per-threshold scores.
  std::map<std::string, std::vector<double>> per_threshold;
  /// Predictions with at least one matched reference, per threshold.
  std::vector<int> matched;
  std::vector<int> unmatched;
  int num_predictions = 0;

  std::string to_json() const;
  std::string to_table() const;
};

struct DenseEvalOptions {
  std::vector<double> thresholds = {0.3, 0.5, 0.7, 0.9};
  std::vector<Metric> metrics = {Metric::kBleu4, Metric::kMeteor, Metric::kCider};
  CiderVariant cider_variant = CiderVariant::kBase;
  /// Overrides METEOR-lite when set.
  SentenceScorer meteor_override;
};

/// Each prediction is scored against the sentences of all ground-truth
/// events it overlaps at tIoU >= t (unmatched predictions score 0); per
/// threshold the mean over predictions; final the mean over thresholds.
ScoreReport dense_caption_eval(const AnnotationMap& predictions, const AnnotationMap& references,
                               const DenseEvalOptions& options = {});
/// Averages reports over several independent reference annotations.
ScoreReport dense_caption_eval(const AnnotationMap& predictions, const std::vector<AnnotationMap>& references,
                               const DenseEvalOptions& options = {});

}  // namespace dvc::metrics
