#include "dvc/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include "dvc/optim.hpp"
#include "dvc/rng.hpp"
#include "json.hpp"

namespace dvc::training {

std::string mode_name(Mode m) { return m == Mode::kXe ? "xe" : "scst"; }

Mode parse_mode(const std::string& s) {
  if (s == "xe") return Mode::kXe;
  if (s == "scst") return Mode::kScst;
  throw ValidationError("unknown training mode: " + s);
}

double TrainConfig::effective_lr() const {
  if (lr > 0.0) return lr;
  return mode == Mode::kXe ? 1e-3 : 1e-5;
}

TrainConfig TrainConfig::from_flat(const FlatConfig& f) {
  TrainConfig c;
  c.mode = parse_mode(f.get_string("mode", mode_name(c.mode)));
  c.lr = f.get_double("lr", c.lr);
  c.batch_size = static_cast<int>(f.get_int("batch_size", c.batch_size));
  c.epochs = static_cast<int>(f.get_int("epochs", c.epochs));
  c.max_steps = static_cast<int>(f.get_int("max_steps", c.max_steps));
  c.seed = static_cast<std::uint64_t>(f.get_int("seed", static_cast<long long>(c.seed)));
  c.scst_sequences_per_video = static_cast<int>(f.get_int("scst_sequences_per_video", c.scst_sequences_per_video));
  const std::string metric = f.get_string("reward_metric", "meteor");
  c.reward_metric = metrics::parse_metric(metric);
  c.paragraph_reward = f.get_bool("paragraph_reward", c.paragraph_reward);
  c.grad_clip = f.get_double("grad_clip", c.grad_clip);
  c.max_len = static_cast<int>(f.get_int("max_len", c.max_len));
  c.log_every = static_cast<int>(f.get_int("log_every", c.log_every));
  if (c.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (c.epochs < 0 || c.max_steps < 0) throw ValidationError("epochs and max_steps must be >= 0");
  if (c.scst_sequences_per_video < 1) throw ValidationError("scst_sequences_per_video must be >= 1");
  if (c.lr < 0.0 || c.grad_clip < 0.0) throw ValidationError("lr and grad_clip must be >= 0");
  if (c.max_len < 1) throw ValidationError("max_len must be >= 1");
  if (c.log_every < 1) c.log_every = 1;
  return c;
}

FlatConfig TrainConfig::to_flat() const {
  FlatConfig f;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  f.set("mode", mode_name(mode));
  f.set("lr", num(lr));
  f.set("batch_size", std::to_string(batch_size));
  f.set("epochs", std::to_string(epochs));
  f.set("max_steps", std::to_string(max_steps));
  f.set("seed", std::to_string(seed));
  f.set("scst_sequences_per_video", std::to_string(scst_sequences_per_video));
  const std::string m = reward_metric == metrics::Metric::kMeteor  ? "meteor"
                        : reward_metric == metrics::Metric::kBleu4 ? "bleu4"
                                                                   : "cider";
  f.set("reward_metric", m);
  f.set("paragraph_reward", paragraph_reward ? "true" : "false");
  f.set("grad_clip", num(grad_clip));
  f.set("max_len", std::to_string(max_len));
  f.set("log_every", std::to_string(log_every));
  return f;
}

// -------------------------------------------------------------------- xe

XeExample gt_example(const VideoRecord& record, const Vocabulary& vocab) {
  return {&record, gt_proposals(record), gt_payloads(record, vocab)};
}

XeLoss xe_loss(CaptionModel& model, ad::Tape& t, const std::vector<XeExample>& batch) {
  if (batch.empty()) throw ValidationError("xe_loss: empty batch");
  std::vector<ad::Var> sums;
  XeLoss out;
  for (const auto& ex : batch) {
    if (!ex.record) throw std::invalid_argument("xe_loss: example without record");
    auto tf = model.teacher_forced(t, *ex.record, ex.events, ex.payloads);
    out.tokens += tf.tokens;
    sums.push_back(tf.nll_sum);
  }
  if (out.tokens == 0) throw ValidationError("xe_loss: batch has no target tokens");
  out.loss = ad::scale(ad::sum(ad::vcat(sums)), 1.0 / out.tokens);
  return out;
}

double corpus_xe_loss(CaptionModel& model, const std::vector<XeExample>& examples) {
  double total = 0.0;
  int tokens = 0;
  for (const auto& ex : examples) {
    ad::Tape t(false);
    auto tf = model.teacher_forced(t, *ex.record, ex.events, ex.payloads);
    total += tf.nll_sum.scalar();
    tokens += tf.tokens;
  }
  if (tokens == 0) throw ValidationError("corpus_xe_loss: no target tokens");
  return total / tokens;
}

namespace {

void emit(const LogSink& log, const nlohmann::json& j) {
  if (log) log(j.dump());
}

bool all_zero_grad(const ad::ParamSet& params) {
  for (const auto& p : params)
    if (!p->grad.isZero(0.0)) return false;
  return true;
}

}  // namespace

TrainResult train_xe(CaptionModel& model, const std::vector<VideoRecord>& videos, const TrainConfig& cfg,
                     const LogSink& log, int start_step) {
  std::vector<XeExample> examples;
  TrainResult res;
  for (const auto& v : videos) {
    if (v.events.empty()) {
      ++res.skipped_videos;
      continue;
    }
    examples.push_back(gt_example(v, model.vocab()));
  }
  if (examples.empty()) throw ValidationError("train_xe: no video with ground-truth events");

  std::mt19937_64 rng = make_rng({cfg.seed, 0x7e0ULL});
  Adam opt(cfg.effective_lr());
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int step = start_step;
  const int local_limit = cfg.max_steps > 0 ? cfg.max_steps : std::numeric_limits<int>::max();
  int local = 0;
  for (int ep = 0; ep < cfg.epochs && local < local_limit; ++ep) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size() && local < local_limit; b += cfg.batch_size) {
      std::vector<XeExample> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(examples[order[k]]);
      model.params().zero_grad();
      ad::Tape t;
      const XeLoss l = xe_loss(model, t, batch);
      t.backward(l.loss);
      const double norm = cfg.grad_clip > 0 ? model.params().clip_grad_norm(cfg.grad_clip) : model.params().grad_norm();
      opt.step(model.params());
      ++step;
      ++local;
      res.losses.push_back(l.loss.scalar());
      if (local % cfg.log_every == 0 || local == 1)
        emit(log, {{"mode", "xe"}, {"step", step}, {"epoch", ep}, {"loss", l.loss.scalar()}, {"tokens", l.tokens},
                   {"grad_norm", norm}});
    }
  }
  model.snap_to_float();
  res.steps = step;
  res.final_loss = corpus_xe_loss(model, examples);
  emit(log, {{"mode", "xe"}, {"event", "final"}, {"step", step}, {"final_loss", res.final_loss},
             {"skipped_videos", res.skipped_videos}});
  return res;
}

// ------------------------------------------------------------------ scst

namespace {

double sentence_score(const metrics::Tokens& cand, const metrics::Tokens& ref, const TrainConfig& cfg,
                      const metrics::SentenceScorer& scorer) {
  if (cand.empty()) return 0.0;
  if (scorer) return scorer(cand, {ref});
  switch (cfg.reward_metric) {
    case metrics::Metric::kMeteor:
      return metrics::meteor_lite(cand, {ref});
    case metrics::Metric::kBleu4:
      return metrics::bleu4(cand, {ref});
    case metrics::Metric::kCider:
      return metrics::cider({{"0", cand}}, {{"0", {ref}}});
  }
  return 0.0;
}

}  // namespace

double paragraph_reward(const std::vector<Proposal>& events, const std::vector<std::vector<std::string>>& sentences,
                        const VideoRecord& record, const TrainConfig& cfg, const metrics::SentenceScorer& scorer) {
  if (events.size() != sentences.size()) throw std::invalid_argument("paragraph_reward: events/sentences mismatch");
  if (events.empty() || record.events.empty()) return 0.0;
  if (cfg.paragraph_reward) {
    metrics::Tokens cand, ref;
    for (const auto& s : sentences) cand.insert(cand.end(), s.begin(), s.end());
    for (const auto& p : gt_proposals(record)) {
      for (const auto& e : record.events)
        if (e.start == p.start && e.end == p.end) {
          ref.insert(ref.end(), e.sentence.begin(), e.sentence.end());
          break;
        }
    }
    return sentence_score(cand, ref, cfg, scorer);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < record.events.size(); ++g) {
      const double v = tiou(events[i].span(), record.events[g].span());
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) total += sentence_score(sentences[i], record.events[best].sentence, cfg, scorer);
  }
  return total / static_cast<double>(events.size());
}

ScstStep scst_step(CaptionModel& model, esgn::Selector& selector, const VideoRecord& record,
                   const CandidateSet& candidates, const TrainConfig& cfg, std::mt19937_64& rng,
                   const metrics::SentenceScorer& scorer) {
  ScstStep out;
  out.stats.video_id = record.video_id;
  if (record.events.empty() || candidates.proposals.empty()) {
    out.skipped = true;
    return out;
  }
  const int S = cfg.scst_sequences_per_video;
  const Vocabulary& vocab = model.vocab();
  auto words = [&](const std::vector<std::vector<TokenId>>& para) {
    std::vector<std::vector<std::string>> s;
    for (const auto& ids : para) s.push_back(vocab.decode(ids));
    return s;
  };
  for (int k = 0; k < S; ++k) {
    const auto seq = esgn::select_sequence(selector, candidates, record, esgn::Mode::kSample, &rng);
    const std::vector<Proposal> events = seq.by_start();
    RewardRecord rr{record.video_id, 0.0, 0.0, 0.0};
    if (!events.empty()) {
      const auto greedy = generate_paragraph(model, record, events, DecodeMode::kGreedy, nullptr, cfg.max_len);
      ad::Tape t;
      auto sampled = model.generate(t, record, events, DecodeMode::kSample, &rng, cfg.max_len);
      rr.r_sample = paragraph_reward(events, words(sampled.sentences), record, cfg, scorer);
      rr.r_greedy = paragraph_reward(events, words(greedy), record, cfg, scorer);
      rr.advantage = rr.r_sample - rr.r_greedy;
      if (rr.advantage != 0.0) {
        t.backward(sampled.log_prob, -rr.advantage / S);
        out.loss += -rr.advantage * sampled.log_prob.scalar() / S;
      }
    }
    out.stats.r_sample += rr.r_sample / S;
    out.stats.r_greedy += rr.r_greedy / S;
    out.stats.advantage += rr.advantage / S;
    out.per_sequence.push_back(rr);
  }
  return out;
}

TrainResult train_scst(CaptionModel& model, esgn::Selector& selector, const std::vector<VideoRecord>& videos,
                       const std::vector<CandidateSet>& candidates, const TrainConfig& cfg, const LogSink& log,
                       int start_step) {
  if (videos.size() != candidates.size()) throw ValidationError("train_scst: candidate/video count mismatch");
  TrainResult res;
  std::vector<std::size_t> order;
  std::vector<XeExample> examples;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    if (videos[i].events.empty()) {
      ++res.skipped_videos;
      continue;
    }
    order.push_back(i);
    examples.push_back(gt_example(videos[i], model.vocab()));
  }
  if (order.empty()) throw ValidationError("train_scst: no video with ground-truth events");
  std::mt19937_64 rng = make_rng({cfg.seed, 0x5c57ULL});
  Adam opt(cfg.effective_lr());
  int step = start_step, local = 0;
  const int local_limit = cfg.max_steps > 0 ? cfg.max_steps : std::numeric_limits<int>::max();
  double reward_sum = 0.0;
  int reward_count = 0;
  for (int ep = 0; ep < cfg.epochs && local < local_limit; ++ep) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size() && local < local_limit; b += cfg.batch_size) {
      model.params().zero_grad();
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - b);
      double loss = 0.0, rs = 0.0, rg = 0.0;
      for (std::size_t k = b; k < end; ++k) {
        const std::size_t i = order[k];
        const ScstStep st = scst_step(model, selector, videos[i], candidates[i], cfg, rng);
        loss += st.loss * inv;
        rs += st.stats.r_sample * inv;
        rg += st.stats.r_greedy * inv;
      }
      for (auto& p : model.params()) p->grad *= inv;
      // All-zero advantages leave the parameters exactly unchanged.
      const bool zero = all_zero_grad(model.params());
      double norm = 0.0;
      if (!zero) {
        norm = cfg.grad_clip > 0 ? model.params().clip_grad_norm(cfg.grad_clip) : model.params().grad_norm();
        opt.step(model.params());
      }
      ++step;
      ++local;
      res.losses.push_back(loss);
      reward_sum += rs;
      ++reward_count;
      if (local % cfg.log_every == 0 || local == 1)
        emit(log, {{"mode", "scst"}, {"step", step}, {"epoch", ep}, {"loss", loss}, {"r_sample", rs}, {"r_greedy", rg},
                   {"advantage", rs - rg}, {"grad_norm", norm}, {"skipped_update", zero}});
    }
  }
  model.snap_to_float();
  res.steps = step;
  res.mean_reward = reward_count ? reward_sum / reward_count : 0.0;
  res.final_loss = corpus_xe_loss(model, examples);
  emit(log, {{"mode", "scst"}, {"event", "final"}, {"step", step}, {"final_loss", res.final_loss},
             {"mean_reward", res.mean_reward}, {"skipped_videos", res.skipped_videos}});
  return res;
}

// ------------------------------------------------------------ grad check

std::string part_name(Part p) {
  switch (p) {
    case Part::kTsrm:
      return "tsrm";
    case Part::kCmg:
      return "cmg";
    case Part::kSentenceRnn:
      return "sentence_rnn";
    case Part::kWordRnn:
      return "word_rnn";
    case Part::kAttention:
      return "attention";
    case Part::kSelector:
      return "selector";
    case Part::kFull:
      return "full";
  }
  return "?";
}

Part parse_part(const std::string& s) {
  for (Part p : {Part::kTsrm, Part::kCmg, Part::kSentenceRnn, Part::kWordRnn, Part::kAttention, Part::kSelector,
                 Part::kFull})
    if (part_name(p) == s) return p;
  throw ValidationError("unknown model part: " + s);
}

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  os << part << ": max_rel_error=" << std::scientific << std::setprecision(3) << max_rel_error << " at " << worst_param
     << " (" << coords_checked << " coords) " << (passed ? "ok" : "FAILED at " + failed_param);
  return os.str();
}

namespace {

struct GradFixture {
  std::mt19937_64 rng;
  VideoRecord record;
  std::vector<Proposal> events;
  std::vector<std::vector<TokenId>> payloads;

  ad::Mat random(int r, int c) {
    std::normal_distribution<double> n(0.0, 1.0);
    ad::Mat m(r, c);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) m(i, j) = n(rng);
    return m;
  }
};

GradFixture make_fixture(const GradCheckDims& d, std::uint64_t seed) {
  GradFixture f{make_rng({seed, 0x9c4ULL}), {}, {}, {}};
  f.record.video_id = "gradcheck";
  f.record.stride = 0.5;
  f.record.duration = d.frames * 0.5;
  f.record.features = f.random(d.frames, d.feature_dim);
  // Distinct, partially overlapping spans in start order.
  for (int i = 0; i < d.events; ++i) {
    const double start = f.record.duration * (0.1 + 0.6 * i / std::max(1, d.events));
    const double end = std::min(f.record.duration, start + f.record.duration * (0.25 + 0.05 * i));
    f.events.push_back({start, end, 1.0});
  }
  std::uniform_int_distribution<int> tok(Vocabulary::kNumSpecials, d.vocab - 1);
  std::uniform_int_distribution<int> len(2, 5);
  for (int i = 0; i < d.events; ++i) {
    std::vector<TokenId> p(len(f.rng));
    for (auto& x : p) x = static_cast<TokenId>(tok(f.rng));
    f.payloads.push_back(p);
  }
  return f;
}

Vocabulary synthetic_vocab(int size) {
  std::vector<std::string> toks = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (int i = static_cast<int>(toks.size()); i < size; ++i) toks.push_back("w" + std::to_string(i));
  return Vocabulary::from_tokens(toks, 1, 30);
}

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-5}); }

GradCheckReport run_check(const std::string& name, ad::ParamSet& params, const std::function<ad::Var(ad::Tape&)>& loss,
                          const GradCheckOptions& opt) {
  GradCheckReport rep;
  rep.part = name;
  params.zero_grad();
  {
    ad::Tape t;
    ad::Var l = loss(t);
    t.backward(l);
  }
  if (opt.corrupt) opt.corrupt(params);
  auto eval = [&]() {
    ad::Tape t(false);
    return loss(t).scalar();
  };
  for (auto& p : params) {
    const Eigen::Index n = p->value.size();
    Eigen::Index stride = 1;
    if (opt.max_coords > 0 && n > opt.max_coords) stride = (n + opt.max_coords - 1) / opt.max_coords;
    bool failed_here = false;
    for (Eigen::Index k = 0; k < n; k += stride) {
      double& x = p->value.data()[k];
      const double saved = x;
      x = saved + opt.step;
      const double up = eval();
      x = saved - opt.step;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = p->grad.data()[k];
      ++rep.coords_checked;
      double err = rel_error(analytic, numeric);
      if (!std::isfinite(analytic) || !std::isfinite(numeric)) err = std::numeric_limits<double>::infinity();
      if (err > rep.max_rel_error || rep.worst_param.empty()) {
        rep.max_rel_error = err;
        rep.worst_param = p->name;
      }
      if (!(err < opt.tolerance)) failed_here = true;
    }
    if (failed_here && rep.failed_param.empty()) rep.failed_param = p->name;
  }
  rep.passed = rep.failed_param.empty();
  return rep;
}

}  // namespace

GradCheckReport grad_check(Part part, const GradCheckDims& dims, const GradCheckOptions& opt) {
  if (dims.feature_dim < 1 || dims.hidden < 1 || dims.events < 1 || dims.vocab <= Vocabulary::kNumSpecials)
    throw ValidationError("grad_check: invalid dims");
  GradFixture f = make_fixture(dims, opt.seed);

  if (part == Part::kSelector) {
    esgn::Selector sel({dims.feature_dim, dims.hidden, dims.hidden, 10});
    std::mt19937_64 init = make_rng({opt.seed, 0x5e1ULL});
    if (opt.zero_init)
      sel.params().set_zero();
    else
      sel.params().init_uniform(init, 0.3);
    CandidateSet cands{"gradcheck", {}};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < dims.candidates; ++k) {
      const double a = u(f.rng) * f.record.duration * 0.7;
      cands.proposals.push_back({a, a + f.record.duration * (0.1 + 0.2 * u(f.rng)), u(f.rng)});
    }
    std::vector<int> targets;
    for (int k = 0; k < std::min(3, dims.candidates); ++k) targets.push_back((2 * k + 1) % dims.candidates);
    targets.push_back(dims.candidates);
    return run_check(part_name(part), sel.params(),
                     [&](ad::Tape& t) { return esgn::selector_loss(sel, t, cands, f.record, targets); }, opt);
  }

  ModelConfig mc;
  mc.feature_dim = dims.feature_dim;
  mc.hidden = dims.hidden;
  mc.d_pos = dims.d_pos;
  mc.init_scale = 0.3;
  CaptionModel model(mc, synthetic_vocab(dims.vocab));
  if (opt.zero_init)
    model.params().set_zero();
  else
    model.init(opt.seed);
  decoder::Decoder& dec = model.dec();
  const int H = dims.hidden;
  const int Z = mc.z_dim();

  std::function<ad::Var(ad::Tape&)> loss;
  switch (part) {
    case Part::kTsrm: {
      const ad::Mat pooled = tsrm::pooled_matrix(f.record, f.events);
      const ad::Mat w = f.random(Z, dims.events);
      const ad::Mat wa = f.random(dims.events, dims.events);
      loss = [&, pooled, w, wa](ad::Tape& t) {
        auto enc = model.encoder()->encode(t, f.events, t.constant(pooled));
        return ad::add(ad::sum(ad::cmul(enc.z, t.constant(w))), ad::sum(ad::cmul(enc.attention, t.constant(wa))));
      };
      break;
    }
    case Part::kCmg: {
      const ad::Mat z = f.random(Z, 1), s = f.random(H, 1), h = f.random(H, 1);
      const ad::Mat wg = f.random(dec.gate_width(), 1);
      const ad::Mat wx = f.random(dec.dims().proj * 2 + dec.dims().pos_dim, 1);
      loss = [&, z, s, h, wg, wx](ad::Tape& t) {
        ad::Var l = dec.position_embed(t, f.events[0].span(), f.record.duration);
        decoder::SentenceContext ctx = dec.initial_context(t);
        ctx.s_prev = t.constant(s);
        ctx.sent.h = t.constant(h);
        auto st = dec.sentence_step(t, ctx, l, t.constant(z));
        return ad::add(ad::sum(ad::cmul(st.gate, t.constant(wg))), ad::sum(ad::cmul(st.x, t.constant(wx))));
      };
      break;
    }
    case Part::kSentenceRnn: {
      const ad::Mat z = f.random(Z, dims.events), s = f.random(H, dims.events), w = f.random(H, dims.events);
      loss = [&, z, s, w](ad::Tape& t) {
        decoder::SentenceContext ctx = dec.initial_context(t);
        std::vector<ad::Var> terms;
        for (int i = 0; i < dims.events; ++i) {
          ad::Var l = dec.position_embed(t, f.events[i].span(), f.record.duration);
          auto st = dec.sentence_step(t, ctx, l, t.constant(z.col(i)));
          terms.push_back(ad::sum(ad::cmul(st.sent.h, t.constant(w.col(i)))));
          ctx = {st.sent, t.constant(s.col(i))};
        }
        return ad::sum(ad::vcat(terms));
      };
      break;
    }
    case Part::kWordRnn: {
      const Matrix frames = CaptionModel::frames_within(f.record, f.events[0].span());
      const ad::Mat sent = f.random(H, 1);
      const auto& pay = f.payloads[0];
      loss = [&, frames, sent, pay](ad::Tape& t) {
        auto mem = dec.frame_memory(t, frames);
        auto word = dec.initial_word_state(t);
        std::vector<ad::Var> logits;
        std::vector<TokenId> targets;
        TokenId prev = Vocabulary::kBos;
        for (std::size_t k = 0; k <= pay.size(); ++k) {
          auto ws = dec.word_step(t, word, prev, t.constant(sent), mem);
          word = ws.word;
          logits.push_back(ws.logits);
          targets.push_back(k < pay.size() ? pay[k] : Vocabulary::kEos);
          if (k < pay.size()) prev = pay[k];
        }
        return masked_nll(t, logits, targets, nullptr);
      };
      break;
    }
    case Part::kAttention: {
      const Matrix frames = CaptionModel::frames_within(f.record, f.events[1 % dims.events].span());
      const ad::Mat h = f.random(H, 1);
      const ad::Mat wc = f.random(dims.feature_dim, 1);
      const ad::Mat ww = f.random(frames.rows(), 1);
      loss = [&, frames, h, wc, ww](ad::Tape& t) {
        auto mem = dec.frame_memory(t, frames);
        auto att = dec.frame_attention(t, t.constant(h), mem);
        return ad::add(ad::sum(ad::cmul(att.context, t.constant(wc))), ad::sum(ad::cmul(att.weights, t.constant(ww))));
      };
      break;
    }
    case Part::kFull:
      loss = [&](ad::Tape& t) {
        auto tf = model.teacher_forced(t, f.record, f.events, f.payloads);
        return ad::scale(tf.nll_sum, 1.0 / tf.tokens);
      };
      break;
    case Part::kSelector:
      break;
  }
  return run_check(part_name(part), model.params(), loss, opt);
}

// -------------------------------------------------------------- ensemble

std::vector<std::vector<TokenId>> ensemble_decode(const std::vector<CaptionModel*>& models, const VideoRecord& record,
                                                  const std::vector<Proposal>& events, int max_len) {
  if (models.empty()) throw ValidationError("ensemble_decode: no models");
  const std::string vh = models.front()->vocab().hash();
  for (const auto* m : models) {
    if (m->vocab().hash() != vh) throw ValidationError("ensemble_decode: models use different vocabularies");
  }
  std::vector<std::unique_ptr<ad::Tape>> tapes;
  std::vector<std::unique_ptr<CaptionModel::Session>> sessions;
  for (auto* m : models) {
    tapes.push_back(std::make_unique<ad::Tape>(false));
    sessions.push_back(std::make_unique<CaptionModel::Session>(*m, *tapes.back(), record, events));
  }
  std::vector<std::vector<TokenId>> out;
  for (int i = 0; i < static_cast<int>(events.size()); ++i) {
    for (auto& s : sessions) s->begin_event(i);
    std::vector<TokenId> sentence;
    TokenId prev = Vocabulary::kBos;
    for (int k = 0; k < max_len; ++k) {
      ad::Vec probs;
      ad::Mat single;
      for (auto& s : sessions) {
        const ad::Mat& logits = s->step(prev).value();
        if (sessions.size() == 1) {
          single = logits;
          break;
        }
        const ad::Vec p = ad::softmax(logits.col(0));
        if (probs.size() == 0)
          probs = p;
        else
          probs += p;
      }
      Eigen::Index arg = 0;
      // A single member decodes by its logits, exactly like greedy decoding.
      if (sessions.size() == 1)
        single.col(0).maxCoeff(&arg);
      else
        (probs / static_cast<double>(sessions.size())).maxCoeff(&arg);
      const auto tok = static_cast<TokenId>(arg);
      if (tok == Vocabulary::kEos) break;
      sentence.push_back(tok);
      prev = tok;
    }
    for (auto& s : sessions) s->end_event();
    out.push_back(std::move(sentence));
  }
  return out;
}

}  // namespace dvc::training
