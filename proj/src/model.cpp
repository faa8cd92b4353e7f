#include "dvc/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dvc/rng.hpp"

namespace dvc {

// ------------------------------------------------------------ ModelConfig

tsrm::Dims ModelConfig::tsrm_dims() const {
  return tsrm::Dims{feature_dim, d_pos, or_hidden(tsrm_hidden), or_hidden(d_k), or_hidden(d_v)};
}

int ModelConfig::z_dim() const { return use_tsrm ? feature_dim + or_hidden(d_v) : feature_dim; }

decoder::Dims ModelConfig::decoder_dims(int vocab) const {
  decoder::Dims d;
  d.z_dim = z_dim();
  d.frame_dim = feature_dim;
  d.hidden = hidden;
  d.embed = or_hidden(embed);
  d.pos_hidden = or_hidden(pos_hidden);
  d.pos_dim = or_hidden(pos_dim);
  d.proj = or_hidden(proj);
  d.attn = or_hidden(attn);
  d.vocab = vocab;
  return d;
}

ModelConfig ModelConfig::from_flat(const FlatConfig& f) {
  ModelConfig c;
  auto geti = [&](const char* k, int fallback) { return static_cast<int>(f.get_int(k, fallback)); };
  c.feature_dim = geti("feature_dim", c.feature_dim);
  c.hidden = geti("hidden", c.hidden);
  c.embed = geti("embed", c.embed);
  c.d_pos = geti("d_pos", c.d_pos);
  c.d_k = geti("d_k", c.d_k);
  c.tsrm_hidden = geti("tsrm_hidden", c.tsrm_hidden);
  c.d_v = geti("d_v", c.d_v);
  c.proj = geti("proj", c.proj);
  c.attn = geti("attn", c.attn);
  c.pos_hidden = geti("pos_hidden", c.pos_hidden);
  c.pos_dim = geti("pos_dim", c.pos_dim);
  c.use_tsrm = f.get_bool("use_tsrm", c.use_tsrm);
  c.use_cmg = f.get_bool("use_cmg", c.use_cmg);
  c.use_sent_rnn = f.get_bool("use_sent_rnn", c.use_sent_rnn);
  c.scalar_gate = f.get_bool("scalar_gate", c.scalar_gate);
  c.max_len = geti("max_len", c.max_len);
  c.init_scale = f.get_double("init_scale", c.init_scale);
  if (c.hidden < 1 || c.feature_dim < 1 || c.max_len < 1) throw ValidationError("model dims must be positive");
  return c;
}

FlatConfig ModelConfig::to_flat() const {
  FlatConfig f;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  f.set("feature_dim", std::to_string(feature_dim));
  f.set("hidden", std::to_string(hidden));
  f.set("embed", std::to_string(embed));
  f.set("d_pos", std::to_string(d_pos));
  f.set("d_k", std::to_string(d_k));
  f.set("tsrm_hidden", std::to_string(tsrm_hidden));
  f.set("d_v", std::to_string(d_v));
  f.set("proj", std::to_string(proj));
  f.set("attn", std::to_string(attn));
  f.set("pos_hidden", std::to_string(pos_hidden));
  f.set("pos_dim", std::to_string(pos_dim));
  f.set("use_tsrm", b(use_tsrm));
  f.set("use_cmg", b(use_cmg));
  f.set("use_sent_rnn", b(use_sent_rnn));
  f.set("scalar_gate", b(scalar_gate));
  f.set("max_len", std::to_string(max_len));
  std::ostringstream os;
  os.precision(17);
  os << init_scale;
  f.set("init_scale", os.str());
  return f;
}

std::string ModelConfig::hash() const { return hex64(fnv1a64(to_flat().to_string())); }

// ----------------------------------------------------------- CaptionModel

CaptionModel::CaptionModel(const ModelConfig& cfg, Vocabulary vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
  if (cfg_.use_tsrm) tsrm_ = std::make_unique<tsrm::Tsrm>(params_, cfg_.tsrm_dims());
  dec_ = std::make_unique<decoder::Decoder>(params_, cfg_.decoder_dims(vocab_.size()),
                                            decoder::Switches{cfg_.use_cmg, cfg_.use_sent_rnn, cfg_.scalar_gate});
}

void CaptionModel::init(std::uint64_t seed) {
  std::mt19937_64 rng = make_rng({seed, 0x1417ULL});
  params_.init_uniform(rng, cfg_.init_scale);
  for (const char* name : {"dec.sent_lstm.b", "dec.word_lstm.b"}) {
    ad::Parameter& b = params_.at(name);
    const int H = static_cast<int>(b.value.rows()) / 4;
    b.value.setZero();
    b.value.middleRows(H, H).setOnes();
  }
}

void CaptionModel::snap_to_float() {
  for (auto& p : params_) p->value = p->value.cast<float>().cast<double>();
}

Matrix CaptionModel::frames_within(const VideoRecord& record, const Segment& span) {
  const auto [first, last] = clip_rows(span, record.duration, record.stride, record.num_clips());
  return record.features.middleRows(first, last - first + 1);
}

ad::Var CaptionModel::event_features(ad::Tape& t, const VideoRecord& record, const std::vector<Proposal>& events) {
  ad::Var pooled = t.constant(tsrm::pooled_matrix(record, events));
  if (!tsrm_) return pooled;
  return tsrm_->encode(t, events, pooled).z;
}

// ----------------------------------------------------------------- Session

CaptionModel::Session::Session(CaptionModel& m, ad::Tape& t, const VideoRecord& record,
                               const std::vector<Proposal>& events)
    : m_(m), t_(t), record_(record), events_(events) {
  if (!events_.empty()) z_ = m.event_features(t, record, events_);
  ctx_ = m.dec().initial_context(t);
}

const decoder::SentenceStep& CaptionModel::Session::begin_event(int i) {
  if (i != current_ + 1 || i >= num_events()) throw std::logic_error("session: events must be decoded in order");
  current_ = i;
  if (!m_.cfg_.use_sent_rnn) ctx_ = m_.dec().initial_context(t_);
  ad::Var l = m_.dec().position_embed(t_, events_[i].span(), record_.duration);
  sent_ = m_.dec().sentence_step(t_, ctx_, l, ad::col(z_, i));
  frames_ = m_.dec().frame_memory(t_, frames_within(record_, events_[i].span()));
  word_ = m_.dec().initial_word_state(t_);
  return sent_;
}

ad::Var CaptionModel::Session::step(int prev_token) {
  auto ws = m_.dec().word_step(t_, word_, prev_token, sent_.sent.h, frames_);
  word_ = ws.word;
  return ws.logits;
}

void CaptionModel::Session::end_event() { ctx_ = {sent_.sent, word_.h}; }

decoder::DecoderState CaptionModel::Session::state() const {
  decoder::DecoderState s;
  s.h = sent_.sent.h.valid() ? Vector(sent_.sent.h.value()) : Vector();
  s.s = word_.h.valid() ? Vector(word_.h.value()) : Vector();
  s.g = sent_.gate.valid() ? Vector(sent_.gate.value()) : Vector();
  s.l = sent_.l.valid() ? Vector(sent_.l.value()) : Vector();
  return s;
}

// ---------------------------------------------------------------- losses

ad::Var masked_nll(ad::Tape& t, const std::vector<ad::Var>& logits, const std::vector<TokenId>& targets, int* counted) {
  if (logits.size() != targets.size()) throw std::invalid_argument("masked_nll: logits/targets length mismatch");
  std::vector<ad::Var> terms;
  for (std::size_t k = 0; k < targets.size(); ++k)
    if (targets[k] != Vocabulary::kPad) terms.push_back(ad::cross_entropy(logits[k], targets[k]));
  if (counted) *counted = static_cast<int>(terms.size());
  if (terms.empty()) return t.constant(ad::Mat::Zero(1, 1));
  return ad::sum(ad::vcat(terms));
}

CaptionModel::TeacherForced CaptionModel::teacher_forced(ad::Tape& t, const VideoRecord& record,
                                                         const std::vector<Proposal>& events,
                                                         const std::vector<std::vector<TokenId>>& payloads) {
  if (events.size() != payloads.size()) throw std::invalid_argument("teacher_forced: events/sentences mismatch");
  TeacherForced out;
  if (events.empty()) {
    out.nll_sum = t.constant(ad::Mat::Zero(1, 1));
    return out;
  }
  std::size_t longest = 0;
  for (const auto& p : payloads) longest = std::max(longest, p.size());
  const std::size_t positions = longest + 1;
  Session s(*this, t, record, events);
  std::vector<ad::Var> sums;
  for (std::size_t i = 0; i < events.size(); ++i) {
    s.begin_event(static_cast<int>(i));
    const auto& pay = payloads[i];
    std::vector<ad::Var> logits;
    std::vector<TokenId> targets;
    for (std::size_t k = 0; k < positions; ++k) {
      const TokenId in = k == 0 ? Vocabulary::kBos : (k - 1 < pay.size() ? pay[k - 1] : Vocabulary::kPad);
      const TokenId target = k < pay.size() ? pay[k] : (k == pay.size() ? Vocabulary::kEos : Vocabulary::kPad);
      logits.push_back(s.step(in));
      targets.push_back(target);
      // The hidden that predicts EOS summarizes the sentence.
      if (k == pay.size()) s.end_event();
    }
    int counted = 0;
    sums.push_back(masked_nll(t, logits, targets, &counted));
    out.tokens += counted;
    out.logits.push_back(std::move(logits));
    out.targets.push_back(std::move(targets));
  }
  out.nll_sum = ad::sum(ad::vcat(sums));
  return out;
}

CaptionModel::Paragraph CaptionModel::generate(ad::Tape& t, const VideoRecord& record,
                                               const std::vector<Proposal>& events, DecodeMode mode,
                                               std::mt19937_64* rng, int max_len) {
  if (mode == DecodeMode::kSample && !rng) throw std::invalid_argument("generate: sampling needs an rng");
  Paragraph out;
  std::vector<ad::Var> lps;
  Session s(*this, t, record, events);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < s.num_events(); ++i) {
    s.begin_event(i);
    std::vector<TokenId> sentence;
    TokenId prev = Vocabulary::kBos;
    for (int k = 0; k < max_len; ++k) {
      ad::Var logits = s.step(prev);
      TokenId tok = 0;
      if (mode == DecodeMode::kGreedy) {
        Eigen::Index arg = 0;
        logits.value().col(0).maxCoeff(&arg);
        tok = static_cast<TokenId>(arg);
      } else {
        const ad::Vec p = ad::softmax(logits.value().col(0));
        double r = u(*rng);
        tok = static_cast<TokenId>(p.size() - 1);
        for (Eigen::Index j = 0; j < p.size(); ++j) {
          if (r < p[j]) {
            tok = static_cast<TokenId>(j);
            break;
          }
          r -= p[j];
        }
      }
      if (t.grad_enabled()) lps.push_back(ad::pick(ad::log_softmax(logits), tok));
      if (tok == Vocabulary::kEos) break;
      sentence.push_back(tok);
      prev = tok;
    }
    s.end_event();
    out.sentences.push_back(std::move(sentence));
  }
  out.log_prob = lps.empty() ? t.constant(ad::Mat::Zero(1, 1)) : ad::sum(ad::vcat(lps));
  return out;
}

std::vector<std::vector<TokenId>> generate_paragraph(CaptionModel& m, const VideoRecord& record,
                                                     const std::vector<Proposal>& events, DecodeMode mode,
                                                     std::mt19937_64* rng, int max_len) {
  ad::Tape t(false);
  return m.generate(t, record, events, mode, rng, max_len).sentences;
}

namespace {

std::vector<std::size_t> start_order(const VideoRecord& record) {
  std::vector<std::size_t> idx(record.events.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = record.events[a];
    const auto& y = record.events[b];
    return x.start != y.start ? x.start < y.start : x.end < y.end;
  });
  return idx;
}

}  // namespace

std::vector<Proposal> gt_proposals(const VideoRecord& record) {
  std::vector<Proposal> out;
  for (std::size_t i : start_order(record)) out.push_back({record.events[i].start, record.events[i].end, 1.0});
  return out;
}

std::vector<std::vector<TokenId>> gt_payloads(const VideoRecord& record, const Vocabulary& vocab) {
  std::vector<std::vector<TokenId>> out;
  for (std::size_t i : start_order(record)) out.push_back(vocab.encode_payload(record.events[i].sentence));
  return out;
}

}  // namespace dvc
