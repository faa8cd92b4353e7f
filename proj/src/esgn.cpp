#include "dvc/esgn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dvc/optim.hpp"
#include "dvc/tsrm.hpp"
#include "json.hpp"

namespace dvc::esgn {

std::vector<Proposal> EventSequence::by_start() const {
  std::vector<Proposal> out = events;
  std::stable_sort(out.begin(), out.end(), [](const Proposal& a, const Proposal& b) {
    return a.start != b.start ? a.start < b.start : a.end < b.end;
  });
  return out;
}

Selector::Selector(const SelectorDims& d, const std::string& prefix)
    : dims_(d), lstm_(params_, prefix + "lstm.", d.hidden, d.hidden) {
  if (d.feature_dim < 1 || d.hidden < 1 || d.pointer < 1 || d.max_events < 1)
    throw ValidationError("selector dims must be positive");
  enc_w_ = &params_.add(prefix + "enc_w", d.hidden, d.feature_dim + 3);
  enc_b_ = &params_.add(prefix + "enc_b", d.hidden, 1);
  init_w_ = &params_.add(prefix + "init_w", d.hidden, d.hidden);
  init_b_ = &params_.add(prefix + "init_b", d.hidden, 1);
  start_ = &params_.add(prefix + "start", d.hidden, 1);
  end_ = &params_.add(prefix + "end", d.hidden, 1);
  ptr_wh_ = &params_.add(prefix + "ptr_wh", d.pointer, d.hidden);
  ptr_bh_ = &params_.add(prefix + "ptr_bh", d.pointer, 1);
  ptr_wk_ = &params_.add(prefix + "ptr_wk", d.pointer, d.hidden);
}

ad::Mat Selector::candidate_inputs(const CandidateSet& candidates, const VideoRecord& record) const {
  const int D = dims_.feature_dim;
  if (record.feature_dim() != D) throw ValidationError(record.video_id + ": feature dim mismatch for selector");
  ad::Mat out(D + 3, static_cast<Eigen::Index>(candidates.proposals.size()));
  for (std::size_t k = 0; k < candidates.proposals.size(); ++k) {
    const Proposal& p = candidates.proposals[k];
    const auto c = static_cast<Eigen::Index>(k);
    out.block(0, c, D, 1) = tsrm::mean_pool(record, p.span());
    out(D, c) = p.start / record.duration;
    out(D + 1, c) = p.end / record.duration;
    out(D + 2, c) = p.score;
  }
  return out;
}

Selector::Run::Run(Selector& sel, ad::Tape& t, const ad::Mat& inputs)
    : sel_(sel), t_(t), num_(static_cast<int>(inputs.cols())) {
  if (num_ < 1) throw ValidationError("select_sequence: no candidates");
  enc_ = ad::tanh(ad::affine(t, *sel.enc_w_, *sel.enc_b_, t.constant(inputs)));
  ad::Var all = ad::hcat(std::vector<ad::Var>{enc_, t.param(*sel.end_)});
  keys_ = ad::matmul(t.param(*sel.ptr_wk_), all);
  ad::Var mean = ad::scale(ad::matmul(enc_, t.constant(ad::Mat::Ones(num_, 1))), 1.0 / num_);
  ad::Var h0 = ad::tanh(ad::affine(t, *sel.init_w_, *sel.init_b_, mean));
  state_ = sel.lstm_.step(t, t.param(*sel.start_), {h0, t.constant(ad::Mat::Zero(sel.dims_.hidden, 1))});
  mask_.assign(num_ + 1, true);
}

ad::Var Selector::Run::log_probs() {
  ad::Var query = ad::tanh(ad::affine(t_, *sel_.ptr_wh_, *sel_.ptr_bh_, state_.h));
  ad::Var logits = ad::matmul(ad::transpose(keys_), query);  // (K + 1) x 1
  return ad::log_softmax(logits, &mask_);
}

void Selector::Run::advance(int choice) {
  if (choice < 0 || choice >= num_ || !mask_[choice]) throw std::invalid_argument("selector: invalid choice");
  mask_[choice] = false;
  state_ = sel_.lstm_.step(t_, ad::col(enc_, choice), state_);
}

namespace {

int sample_index(const ad::Mat& log_probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  int last = -1;
  for (Eigen::Index i = 0; i < log_probs.rows(); ++i) {
    const double p = std::exp(log_probs(i, 0));
    if (p <= 0.0) continue;
    last = static_cast<int>(i);
    if (r < p) return last;
    r -= p;
  }
  return last;
}

int argmax_index(const ad::Mat& log_probs) {
  int best = -1;
  for (Eigen::Index i = 0; i < log_probs.rows(); ++i)
    if (std::isfinite(log_probs(i, 0)) && (best < 0 || log_probs(i, 0) > log_probs(best, 0))) best = static_cast<int>(i);
  return best;
}

}  // namespace

EventSequence select_sequence(Selector& sel, const CandidateSet& candidates, const VideoRecord& record, Mode mode,
                              std::mt19937_64* rng) {
  if (candidates.proposals.empty()) throw ValidationError("select_sequence: empty candidate set");
  if (mode == Mode::kSample && !rng) throw std::invalid_argument("select_sequence: sampling needs an rng");
  ad::Tape t(false);
  Selector::Run run(sel, t, sel.candidate_inputs(candidates, record));
  EventSequence seq{candidates.video_id, {}, {}};
  const int end_index = run.num_candidates();
  while (static_cast<int>(seq.events.size()) < sel.dims().max_events) {
    const ad::Mat& lp = run.log_probs().value();
    const int choice = mode == Mode::kGreedy ? argmax_index(lp) : sample_index(lp, *rng);
    if (choice == end_index || choice < 0) break;
    seq.events.push_back(candidates.proposals[choice]);
    seq.indices.push_back(choice);
    run.advance(choice);
    if (static_cast<int>(seq.indices.size()) == end_index) break;
  }
  return seq;
}

TeacherTargets teacher_targets(const CandidateSet& candidates, const std::vector<Segment>& gt_events) {
  std::vector<Segment> gt = gt_events;
  std::stable_sort(gt.begin(), gt.end(), [](const Segment& a, const Segment& b) {
    return a.start != b.start ? a.start < b.start : a.end < b.end;
  });
  const int K = static_cast<int>(candidates.proposals.size());
  std::vector<bool> used(K, false);
  TeacherTargets out;
  for (const auto& g : gt) {
    int best = -1;
    double best_iou = -1.0;
    for (int k = 0; k < K; ++k) {
      if (used[k]) continue;
      const double v = tiou(candidates.proposals[k].span(), g);
      if (v > best_iou) {
        best_iou = v;
        best = k;
      }
    }
    if (best < 0) break;  // more events than candidates
    if (best_iou <= 0.0) ++out.poor_matches;
    used[best] = true;
    out.steps.push_back(best);
  }
  out.steps.push_back(K);
  return out;
}

ad::Var selector_loss(Selector& sel, ad::Tape& t, const CandidateSet& candidates, const VideoRecord& record,
                      const std::vector<int>& targets) {
  Selector::Run run(sel, t, sel.candidate_inputs(candidates, record));
  std::vector<ad::Var> terms;
  for (std::size_t s = 0; s < targets.size(); ++s) {
    ad::Var lp = run.log_probs();
    terms.push_back(ad::pick(lp, targets[s]));
    if (s + 1 < targets.size()) run.advance(targets[s]);
  }
  ad::Var total = ad::sum(ad::vcat(terms));
  return ad::scale(total, -1.0 / static_cast<double>(terms.size()));
}

SelectorStep train_selector_step(Selector& sel, const CandidateSet& candidates, const VideoRecord& record) {
  if (record.events.empty()) throw ValidationError("train_selector_step: video has no ground-truth events");
  std::vector<Segment> gt;
  for (const auto& e : record.events) gt.push_back(e.span());
  const TeacherTargets targets = teacher_targets(candidates, gt);
  ad::Tape t;
  ad::Var loss = selector_loss(sel, t, candidates, record, targets.steps);
  t.backward(loss);
  return {loss.scalar(), targets.poor_matches};
}

SelectorTrainStats train_selector(Selector& sel, const std::vector<CandidateSet>& candidates,
                                  const std::vector<VideoRecord>& videos, int epochs, double lr, std::uint64_t seed) {
  if (candidates.size() != videos.size()) throw ValidationError("train_selector: candidate/video count mismatch");
  std::mt19937_64 rng(seed);
  Adam opt(lr);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < videos.size(); ++i)
    if (!videos[i].events.empty() && !candidates[i].proposals.empty()) order.push_back(i);
  SelectorTrainStats stats;
  for (int ep = 0; ep < epochs; ++ep) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int poor = 0;
    for (std::size_t i : order) {
      sel.params().zero_grad();
      const SelectorStep st = train_selector_step(sel, candidates[i], videos[i]);
      sel.params().clip_grad_norm(5.0);
      opt.step(sel.params());
      total += st.loss;
      poor += st.poor_matches;
    }
    stats.epochs = ep + 1;
    stats.final_loss = order.empty() ? 0.0 : total / static_cast<double>(order.size());
    stats.poor_matches = poor;
  }
  return stats;
}

std::string sequences_to_json(const std::vector<EventSequence>& seqs) {
  nlohmann::json root = nlohmann::json::object();
  for (const auto& s : seqs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : s.events) arr.push_back({p.start, p.end, p.score});
    root[s.video_id] = arr;
  }
  return root.dump();
}

}  // namespace dvc::esgn
