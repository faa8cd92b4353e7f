#include "dvc/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dvc/optim.hpp"
#include "json.hpp"

namespace dvc {

bool proposal_rank_less(const Proposal& a, const Proposal& b) {
  if (a.score != b.score) return a.score > b.score;
  const double la = a.end - a.start, lb = b.end - b.start;
  if (la != lb) return la > lb;
  if (a.start != b.start) return a.start < b.start;
  return a.end < b.end;
}

// ---------------------------------------------------------------- scorer

ProposalScorer::ProposalScorer(int feature_dim, int hidden) : feature_dim_(feature_dim) {
  if (feature_dim < 1 || hidden < 1) throw ValidationError("proposal scorer dims must be positive");
  w1_ = &params_.add("scorer.w1", hidden, 5 * feature_dim);
  b1_ = &params_.add("scorer.b1", hidden, 1);
  w2_ = &params_.add("scorer.w2", 1, hidden);
  b2_ = &params_.add("scorer.b2", 1, 1);
}

ad::Mat ProposalScorer::window_inputs(const VideoRecord& record, const std::vector<Segment>& windows) const {
  if (record.feature_dim() != feature_dim_) throw ValidationError(record.video_id + ": feature dim mismatch for scorer");
  const int D = feature_dim_;
  const int T = record.num_clips();
  // Prefix sums make every window mean O(D).
  ad::Mat prefix = ad::Mat::Zero(T + 1, D);
  for (int t = 0; t < T; ++t) prefix.row(t + 1) = prefix.row(t) + record.features.row(t);
  ad::Mat out(5 * D, static_cast<Eigen::Index>(windows.size()));
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto [first, last] = clip_rows(windows[k], record.duration, record.stride, T);
    const auto c = static_cast<Eigen::Index>(k);
    out.block(0, c, D, 1) = ((prefix.row(last + 1) - prefix.row(first)) / double(last - first + 1)).transpose();
    out.block(D, c, D, 1) = record.features.row(first).transpose();
    out.block(2 * D, c, D, 1) = record.features.row(last).transpose();
    out.block(3 * D, c, D, 1) = record.features.row(std::max(0, first - 1)).transpose();
    out.block(4 * D, c, D, 1) = record.features.row(std::min(T - 1, last + 1)).transpose();
  }
  return out;
}

ad::Var ProposalScorer::logits(ad::Tape& t, const ad::Mat& inputs) {
  ad::Var x = t.constant(inputs);
  ad::Var h = ad::relu(ad::affine(t, *w1_, *b1_, x));
  return ad::affine(t, *w2_, *b2_, h);
}

std::vector<double> ProposalScorer::scores(const VideoRecord& record, const std::vector<Segment>& windows) {
  if (windows.empty()) return {};
  ad::Tape t(false);
  const ad::Mat& z = logits(t, window_inputs(record, windows)).value();
  std::vector<double> out(windows.size());
  for (std::size_t k = 0; k < windows.size(); ++k) out[k] = ad::sigmoid(z(0, static_cast<Eigen::Index>(k)));
  return out;
}

// --------------------------------------------------------------- windows

std::vector<Segment> sliding_windows(double duration, const ProposalParams& params) {
  if (!(duration > 0.0)) throw ValidationError("sliding_windows: duration must be positive");
  if (!(params.step_frac > 0.0)) throw ValidationError("sliding_windows: step_frac must be positive");
  std::vector<Segment> out;
  for (double s : params.scales) {
    if (!(s > 0.0) || s > 1.0) throw ValidationError("sliding_windows: scales must lie in (0, 1]");
    const double len = s * duration;
    const double step = params.step_frac * len;
    const int n = static_cast<int>(std::floor((duration - len) / step + 1e-9)) + 1;
    for (int k = 0; k < n; ++k) out.push_back({k * step, std::min(duration, k * step + len)});
    // Anchor the last window at the end of the video.
    if (out.back().end < duration - 1e-9) out.push_back({duration - len, duration});
  }
  return out;
}

std::vector<Proposal> temporal_nms(std::vector<Proposal> proposals, double threshold, int keep) {
  std::sort(proposals.begin(), proposals.end(), proposal_rank_less);
  std::vector<Proposal> kept;
  for (const auto& p : proposals) {
    if (static_cast<int>(kept.size()) >= keep) break;
    bool suppressed = false;
    for (const auto& q : kept)
      if (tiou(p.span(), q.span()) > threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

CandidateSet generate_candidates(const VideoRecord& record, ProposalScorer& scorer, const ProposalParams& params) {
  if (params.top_k < 1) throw ValidationError("generate_candidates: K must be >= 1");
  if (record.num_clips() < 1) throw ValidationError(record.video_id + ": record has no clips");
  const auto windows = sliding_windows(record.duration, params);
  const auto scores = scorer.scores(record, windows);
  std::vector<Proposal> props;
  props.reserve(windows.size());
  for (std::size_t k = 0; k < windows.size(); ++k) props.push_back({windows[k].start, windows[k].end, scores[k]});
  return CandidateSet{record.video_id, temporal_nms(std::move(props), params.nms_threshold, params.top_k)};
}

ScorerTrainStats train_proposal_scorer(ProposalScorer& scorer, const std::vector<VideoRecord>& videos,
                                       const ProposalParams& params, int epochs, double lr, std::uint64_t seed) {
  struct Prepared {
    ad::Mat inputs;
    ad::Mat targets;
  };
  std::vector<Prepared> data;
  for (const auto& v : videos) {
    if (v.events.empty()) continue;
    const auto windows = sliding_windows(v.duration, params);
    ad::Mat y(1, static_cast<Eigen::Index>(windows.size()));
    for (std::size_t k = 0; k < windows.size(); ++k) {
      double best = 0.0;
      for (const auto& e : v.events) best = std::max(best, tiou(windows[k], e.span()));
      y(0, static_cast<Eigen::Index>(k)) = best;
    }
    data.push_back({scorer.window_inputs(v, windows), y});
  }
  ScorerTrainStats stats;
  if (data.empty()) return stats;
  std::mt19937_64 rng(seed);
  Adam opt(lr);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int ep = 0; ep < epochs; ++ep) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t i : order) {
      scorer.params().zero_grad();
      ad::Tape t;
      ad::Var loss = ad::bce_with_logits(scorer.logits(t, data[i].inputs), data[i].targets);
      t.backward(loss);
      opt.step(scorer.params());
      total += loss.scalar();
    }
    stats.epochs = ep + 1;
    stats.final_loss = total / static_cast<double>(data.size());
  }
  return stats;
}

// --------------------------------------------------------- precision/recall

PrecisionRecall proposal_precision_recall(const std::vector<Proposal>& pred, const std::vector<Segment>& gt,
                                          const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ValidationError("proposal_precision_recall: no thresholds");
  for (double t : thresholds)
    if (!(t > 0.0 && t <= 1.0)) throw ValidationError("proposal_precision_recall: thresholds must lie in (0, 1]");
  PrecisionRecall out;
  out.empty_predictions = pred.empty();
  out.empty_ground_truth = gt.empty();
  // Pairwise tIoU once; thresholds only re-read it.
  std::vector<std::vector<double>> iou(pred.size(), std::vector<double>(gt.size()));
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < gt.size(); ++j) iou[i][j] = tiou(pred[i].span(), gt[j]);
  for (double t : thresholds) {
    double p = 0.0, r = 0.0;
    if (!pred.empty()) {
      int hit = 0;
      for (std::size_t i = 0; i < pred.size(); ++i)
        if (std::any_of(iou[i].begin(), iou[i].end(), [t](double v) { return v >= t; })) ++hit;
      p = static_cast<double>(hit) / static_cast<double>(pred.size());
    }
    if (!gt.empty()) {
      int hit = 0;
      for (std::size_t j = 0; j < gt.size(); ++j) {
        bool any = false;
        for (std::size_t i = 0; i < pred.size() && !any; ++i) any = iou[i][j] >= t;
        if (any) ++hit;
      }
      r = static_cast<double>(hit) / static_cast<double>(gt.size());
    }
    out.precision_at.push_back(p);
    out.recall_at.push_back(r);
  }
  const double n = static_cast<double>(thresholds.size());
  out.precision = std::accumulate(out.precision_at.begin(), out.precision_at.end(), 0.0) / n;
  out.recall = std::accumulate(out.recall_at.begin(), out.recall_at.end(), 0.0) / n;
  return out;
}

double candidate_recall(const std::vector<CandidateSet>& sets, const std::vector<VideoRecord>& videos,
                        double threshold) {
  std::map<std::string, const CandidateSet*> by_id;
  for (const auto& s : sets) by_id[s.video_id] = &s;
  int total = 0, hit = 0;
  for (const auto& v : videos) {
    auto it = by_id.find(v.video_id);
    for (const auto& e : v.events) {
      ++total;
      if (it == by_id.end()) continue;
      for (const auto& p : it->second->proposals)
        if (tiou(p.span(), e.span()) >= threshold) {
          ++hit;
          break;
        }
    }
  }
  return total ? static_cast<double>(hit) / total : 0.0;
}

// -------------------------------------------------------------------- JSON

std::string candidates_to_json(const std::vector<CandidateSet>& sets) {
  nlohmann::json root = nlohmann::json::object();
  for (const auto& s : sets) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : s.proposals) arr.push_back({p.start, p.end, p.score});
    root[s.video_id] = arr;
  }
  return root.dump();
}

std::vector<CandidateSet> candidates_from_json(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("malformed candidate JSON: ") + e.what());
  }
  if (!root.is_object()) throw ValidationError("candidate JSON must be an object");
  std::vector<CandidateSet> out;
  for (const auto& [vid, arr] : root.items()) {
    CandidateSet s{vid, {}};
    for (const auto& item : arr) {
      if (!item.is_array() || item.size() != 3) throw ValidationError("video " + vid + ": candidate must be [start, end, score]");
      s.proposals.push_back({item[0].get<double>(), item[1].get<double>(), item[2].get<double>()});
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dvc
