#include "dvc/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "dvc/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace dvc {

FlatConfig flat_section(const FlatConfig& f, const std::string& prefix) {
  FlatConfig out;
  for (const auto& [k, v] : f.values())
    if (k.size() > prefix.size() && k.compare(0, prefix.size(), prefix) == 0) out.set(k.substr(prefix.size()), v);
  return out;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void merge(FlatConfig& into, const FlatConfig& from, const std::string& prefix) {
  for (const auto& [k, v] : from.values()) into.set(prefix + k, v);
}

}  // namespace

PipelineConfig PipelineConfig::from_flat(const FlatConfig& f) {
  PipelineConfig c;
  c.model = ModelConfig::from_flat(f);
  FlatConfig xe = flat_section(f, "xe.");
  xe.set("mode", "xe");
  c.xe = training::TrainConfig::from_flat(xe);
  FlatConfig scst = flat_section(f, "scst.");
  scst.set("mode", "scst");
  c.scst = training::TrainConfig::from_flat(scst);
  c.proposals.scales = f.get_doubles("proposals.scales", c.proposals.scales);
  c.proposals.step_frac = f.get_double("proposals.step_frac", c.proposals.step_frac);
  c.proposals.nms_threshold = f.get_double("proposals.nms_threshold", c.proposals.nms_threshold);
  c.proposals.top_k = static_cast<int>(f.get_int("proposals.top_k", c.proposals.top_k));
  c.scorer_hidden = static_cast<int>(f.get_int("scorer.hidden", c.scorer_hidden));
  c.scorer_epochs = static_cast<int>(f.get_int("scorer.epochs", c.scorer_epochs));
  c.scorer_lr = f.get_double("scorer.lr", c.scorer_lr);
  c.selector_hidden = static_cast<int>(f.get_int("selector.hidden", c.selector_hidden));
  c.selector_epochs = static_cast<int>(f.get_int("selector.epochs", c.selector_epochs));
  c.selector_lr = f.get_double("selector.lr", c.selector_lr);
  c.max_events = static_cast<int>(f.get_int("selector.max_events", c.max_events));
  c.vocab_min_count = static_cast<int>(f.get_int("vocab_min_count", c.vocab_min_count));
  c.apply_seed(static_cast<std::uint64_t>(f.get_int("seed", static_cast<long long>(c.seed))));
  if (c.proposals.top_k < 1) throw ValidationError("proposals.top_k must be >= 1");
  if (c.scorer_hidden < 1 || c.selector_hidden < 0 || c.max_events < 1)
    throw ValidationError("scorer/selector dims must be positive");
  if (c.scorer_epochs < 0 || c.selector_epochs < 0) throw ValidationError("epochs must be >= 0");
  return c;
}

FlatConfig PipelineConfig::to_flat() const {
  FlatConfig f = model.to_flat();
  FlatConfig x = xe.to_flat(), s = scst.to_flat();
  merge(f, x, "xe.");
  merge(f, s, "scst.");
  std::string scales;
  for (std::size_t i = 0; i < proposals.scales.size(); ++i) scales += (i ? "," : "") + num(proposals.scales[i]);
  f.set("proposals.scales", scales);
  f.set("proposals.step_frac", num(proposals.step_frac));
  f.set("proposals.nms_threshold", num(proposals.nms_threshold));
  f.set("proposals.top_k", std::to_string(proposals.top_k));
  f.set("scorer.hidden", std::to_string(scorer_hidden));
  f.set("scorer.epochs", std::to_string(scorer_epochs));
  f.set("scorer.lr", num(scorer_lr));
  f.set("selector.hidden", std::to_string(selector_hidden));
  f.set("selector.epochs", std::to_string(selector_epochs));
  f.set("selector.lr", num(selector_lr));
  f.set("selector.max_events", std::to_string(max_events));
  f.set("vocab_min_count", std::to_string(vocab_min_count));
  f.set("seed", std::to_string(seed));
  return f;
}

void PipelineConfig::apply_seed(std::uint64_t s) {
  seed = s;
  xe.seed = s;
  scst.seed = s;
}

esgn::SelectorDims PipelineConfig::selector_dims() const {
  const int h = selector_hidden > 0 ? selector_hidden : model.hidden;
  return {model.feature_dim, h, h, max_events};
}

PipelineConfig desk_config() {
  PipelineConfig c;
  c.model.hidden = 64;
  c.model.feature_dim = 32;
  c.xe.epochs = 40;
  c.xe.lr = 3e-3;
  c.xe.batch_size = 8;
  c.scst.epochs = 5;
  c.scst.batch_size = 8;
  c.scorer_epochs = 30;
  c.selector_epochs = 30;
  return c;
}

// ----------------------------------------------------------------- pipeline

Pipeline::Pipeline(const PipelineConfig& cfg, Vocabulary vocab) : cfg_(cfg) {
  model_ = std::make_unique<CaptionModel>(cfg_.model, std::move(vocab));
  selector_ = std::make_unique<esgn::Selector>(cfg_.selector_dims());
  scorer_ = std::make_unique<ProposalScorer>(cfg_.model.feature_dim, cfg_.scorer_hidden);
}

void Pipeline::init() {
  model_->init(cfg_.seed);
  std::mt19937_64 rs = make_rng({cfg_.seed, 0x5e1ULL});
  selector_->params().init_uniform(rs, cfg_.model.init_scale);
  std::mt19937_64 rp = make_rng({cfg_.seed, 0x5c0ULL});
  scorer_->params().init_uniform(rp, 0.1);
}

PipelineTrainStats train_pipeline(Pipeline& p, const std::vector<VideoRecord>& train, const training::LogSink& log) {
  const PipelineConfig& c = p.config();
  PipelineTrainStats st;
  const auto sc = train_proposal_scorer(p.scorer(), train, c.proposals, c.scorer_epochs, c.scorer_lr, c.seed);
  st.scorer_loss = sc.final_loss;
  const auto cands = learnt_candidates(p, train);
  st.candidate_recall = candidate_recall(cands, train, 0.5);
  const auto sel = esgn::train_selector(p.selector(), cands, train, c.selector_epochs, c.selector_lr, c.seed);
  st.selector_loss = sel.final_loss;
  if (log) {
    nlohmann::json j = {{"stage", "proposals"},
                        {"scorer_loss", st.scorer_loss},
                        {"candidate_recall_at_0.5", st.candidate_recall},
                        {"selector_loss", st.selector_loss},
                        {"selector_poor_matches", sel.poor_matches}};
    log(j.dump());
  }
  st.captioner = training::train_xe(p.model(), train, c.xe, log);
  return st;
}

std::vector<CandidateSet> learnt_candidates(Pipeline& p, const std::vector<VideoRecord>& videos) {
  std::vector<CandidateSet> out;
  out.reserve(videos.size());
  for (const auto& v : videos) out.push_back(generate_candidates(v, p.scorer(), p.config().proposals));
  return out;
}

ProposalSource parse_proposal_source(const std::string& s) {
  if (s == "gt") return ProposalSource::kGt;
  if (s == "learnt") return ProposalSource::kLearnt;
  throw ValidationError("unknown proposal source: " + s);
}

namespace {

std::vector<Proposal> events_for(Pipeline& p, const VideoRecord& v, ProposalSource source) {
  if (source == ProposalSource::kGt) return gt_proposals(v);
  const CandidateSet cands = generate_candidates(v, p.scorer(), p.config().proposals);
  if (cands.proposals.empty()) return {};
  return esgn::select_sequence(p.selector(), cands, v, esgn::Mode::kGreedy).by_start();
}

std::vector<PredictedEvent> to_predictions(const Vocabulary& vocab, const std::vector<Proposal>& events,
                                           const std::vector<std::vector<TokenId>>& sentences) {
  std::vector<PredictedEvent> out;
  for (std::size_t i = 0; i < events.size(); ++i)
    out.push_back({events[i].start, events[i].end, join_tokens(vocab.decode(sentences[i]))});
  return out;
}

}  // namespace

ResultMap predict(Pipeline& p, const std::vector<VideoRecord>& videos, ProposalSource source) {
  ResultMap out;
  for (const auto& v : videos) {
    const auto events = events_for(p, v, source);
    const auto sentences = generate_paragraph(p.model(), v, events, DecodeMode::kGreedy, nullptr, p.config().model.max_len);
    out[v.video_id] = to_predictions(p.model().vocab(), events, sentences);
  }
  return out;
}

ResultMap predict_ensemble(const std::vector<Pipeline*>& members, const std::vector<VideoRecord>& videos,
                           ProposalSource source) {
  if (members.empty()) throw ValidationError("predict_ensemble: no members");
  std::vector<CaptionModel*> models;
  for (auto* m : members) models.push_back(&m->model());
  ResultMap out;
  for (const auto& v : videos) {
    const auto events = events_for(*members.front(), v, source);
    const auto sentences = training::ensemble_decode(models, v, events, members.front()->config().model.max_len);
    out[v.video_id] = to_predictions(models.front()->vocab(), events, sentences);
  }
  return out;
}

metrics::ScoreReport evaluate_results(const ResultMap& results, const std::vector<VideoRecord>& videos,
                                      const metrics::DenseEvalOptions& opt) {
  const AnnotationMap refs = annotations_of(videos);
  return metrics::dense_caption_eval(results_as_annotations(results, refs), refs, opt);
}

metrics::ScoreReport evaluate(Pipeline& p, const std::vector<VideoRecord>& videos, ProposalSource source,
                              const metrics::DenseEvalOptions& opt) {
  if (videos.empty()) throw ValidationError("evaluate: empty corpus");
  return evaluate_results(predict(p, videos, source), videos, opt);
}

// ------------------------------------------------------------------- corpus

CorpusSplits split_corpus(const std::vector<VideoRecord>& videos, int n_val) {
  if (n_val < 0 || n_val >= static_cast<int>(videos.size()))
    throw ValidationError("validation split must leave at least one training video");
  CorpusSplits s;
  const std::size_t cut = videos.size() - static_cast<std::size_t>(n_val);
  s.train.assign(videos.begin(), videos.begin() + static_cast<std::ptrdiff_t>(cut));
  s.val.assign(videos.begin() + static_cast<std::ptrdiff_t>(cut), videos.end());
  return s;
}

void save_splits(const std::string& path, const CorpusSplits& s) {
  nlohmann::json j = {{"train", nlohmann::json::array()}, {"val", nlohmann::json::array()}};
  for (const auto& v : s.train) j["train"].push_back(v.video_id);
  for (const auto& v : s.val) j["val"].push_back(v.video_id);
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write " + path);
  os << j.dump(1) << "\n";
}

CorpusSplits load_corpus_splits(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "annotations.json")) throw ValidationError("no corpus at " + dir);
  std::vector<VideoRecord> all = load_corpus(dir);
  if (all.empty()) throw ValidationError("corpus at " + dir + " is empty");
  const fs::path sp = fs::path(dir) / "splits.json";
  CorpusSplits s;
  if (!fs::exists(sp)) {
    s.train = std::move(all);
    return s;
  }
  std::ifstream is(sp);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(sp.string() + ": " + e.what());
  }
  std::map<std::string, const VideoRecord*> by_id;
  for (const auto& v : all) by_id[v.video_id] = &v;
  auto take = [&](const char* key, std::vector<VideoRecord>& into) {
    if (!j.contains(key)) return;
    for (const auto& id : j[key]) {
      auto it = by_id.find(id.get<std::string>());
      if (it == by_id.end()) throw ValidationError(sp.string() + ": unknown video " + id.get<std::string>());
      into.push_back(*it->second);
    }
  };
  take("train", s.train);
  take("val", s.val);
  return s;
}

// --------------------------------------------------------------- checkpoint

namespace {

std::vector<ad::ParamSet*> param_sets(Pipeline& p) {
  return {&p.model().params(), &p.selector().params(), &p.scorer().params()};
}

}  // namespace

void save_checkpoint(const std::string& dir, Pipeline& p, const CheckpointInfo& info) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "tensors", ec);
  if (ec) throw ValidationError("cannot create " + dir + ": " + ec.message());
  nlohmann::json manifest;
  manifest["format"] = 1;
  manifest["step"] = info.step;
  manifest["mode"] = info.mode;
  manifest["config"] = p.config().to_flat().values();
  manifest["config_hash"] = p.config().model.hash();
  manifest["vocab_hash"] = p.model().vocab().hash();
  manifest["vocabulary"] = nlohmann::json::parse(p.model().vocab().to_json());
  nlohmann::json tensors = nlohmann::json::array();
  for (auto* set : param_sets(p)) {
    for (const auto& param : *set) {
      const std::string file = "tensors/" + param->name + ".dvcf";
      write_feature_file((fs::path(dir) / file).string(), param->value);
      tensors.push_back({{"name", param->name}, {"rows", param->value.rows()}, {"cols", param->value.cols()},
                         {"file", file}});
    }
  }
  manifest["tensors"] = tensors;
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw ValidationError("cannot write checkpoint manifest in " + dir);
  os << manifest.dump(1) << "\n";
}

bool checkpoint_exists(const std::string& dir) { return fs::exists(fs::path(dir) / "manifest.json"); }

std::unique_ptr<Pipeline> load_checkpoint(const std::string& dir, CheckpointInfo* info) {
  const fs::path mp = fs::path(dir) / "manifest.json";
  if (!fs::exists(mp)) throw ValidationError("no checkpoint at " + dir);
  nlohmann::json m;
  try {
    std::ifstream is(mp);
    m = nlohmann::json::parse(is);
    FlatConfig flat;
    for (const auto& [k, v] : m.at("config").items()) flat.set(k, v.get<std::string>());
    const PipelineConfig cfg = PipelineConfig::from_flat(flat);
    Vocabulary vocab = Vocabulary::from_json(m.at("vocabulary").dump());
    if (cfg.model.hash() != m.at("config_hash").get<std::string>())
      throw ValidationError(dir + ": config hash does not match manifest");
    if (vocab.hash() != m.at("vocab_hash").get<std::string>())
      throw ValidationError(dir + ": vocabulary hash does not match manifest");
    auto p = std::make_unique<Pipeline>(cfg, std::move(vocab));
    std::set<std::string> seen;
    for (const auto& t : m.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      ad::Parameter* param = nullptr;
      for (auto* set : param_sets(*p))
        if ((param = set->find(name))) break;
      if (!param) throw ValidationError(dir + ": unknown tensor " + name);
      Matrix v = read_feature_file((fs::path(dir) / t.at("file").get<std::string>()).string());
      if (v.rows() != param->value.rows() || v.cols() != param->value.cols())
        throw ValidationError(dir + ": shape mismatch for tensor " + name);
      param->value = v;
      seen.insert(name);
    }
    for (auto* set : param_sets(*p))
      for (const auto& param : *set)
        if (!seen.count(param->name)) throw ValidationError(dir + ": missing tensor " + param->name);
    if (info) {
      info->step = m.at("step").get<int>();
      info->mode = m.at("mode").get<std::string>();
      info->config_hash = m.at("config_hash").get<std::string>();
      info->vocab_hash = m.at("vocab_hash").get<std::string>();
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(mp.string() + ": " + e.what());
  }
}

// -------------------------------------------------------------- experiments

std::vector<AblationRow> ablation_variants() {
  return {{"---", false, false, false, {}},
          {"T--", true, false, false, {}},
          {"--S", false, false, true, {}},
          {"-CS", false, true, true, {}},
          {"TCS", true, true, true, {}}};
}

std::vector<AblationRow> run_ablation(const PipelineConfig& base, const Vocabulary& vocab,
                                      const std::vector<VideoRecord>& train, const std::vector<VideoRecord>& val,
                                      const training::LogSink& log) {
  if (train.empty() || val.empty()) throw ValidationError("ablation needs non-empty train and val splits");
  std::vector<AblationRow> rows = ablation_variants();
  for (auto& row : rows) {
    PipelineConfig c = base;
    c.model.use_tsrm = row.tsrm;
    c.model.use_cmg = row.cmg;
    c.model.use_sent_rnn = row.sent_rnn;
    CaptionModel m(c.model, vocab);
    m.init(c.seed);
    training::LogSink tagged;
    if (log)
      tagged = [&](const std::string& line) {
        auto j = nlohmann::json::parse(line);
        j["variant"] = row.label;
        log(j.dump());
      };
    training::train_xe(m, train, c.xe, tagged);
    ResultMap res;
    for (const auto& v : val) {
      const auto events = gt_proposals(v);
      const auto sentences = generate_paragraph(m, v, events, DecodeMode::kGreedy, nullptr, c.model.max_len);
      auto& out = res[v.video_id];
      for (std::size_t i = 0; i < events.size(); ++i)
        out.push_back({events[i].start, events[i].end, join_tokens(vocab.decode(sentences[i]))});
    }
    row.scores = evaluate_results(res, val).scores;
    if (log) {
      nlohmann::json j = {{"variant", row.label}, {"event", "scores"}, {"scores", row.scores}};
      log(j.dump());
    }
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "TSRM" << std::setw(6) << "CMG" << std::setw(10) << "sentRNN" << std::right
     << std::setw(10) << "Bleu_4" << std::setw(10) << "METEOR" << std::setw(10) << "CIDEr" << "\n";
  auto mark = [](bool b) { return b ? "x" : "-"; };
  for (const auto& r : rows) {
    os << std::left << std::setw(6) << mark(r.tsrm) << std::setw(6) << mark(r.cmg) << std::setw(10) << mark(r.sent_rnn)
       << std::right << std::fixed << std::setprecision(2);
    for (const char* k : {"Bleu_4", "METEOR", "CIDEr"}) {
      auto it = r.scores.find(k);
      os << std::setw(10) << (it == r.scores.end() ? 0.0 : 100.0 * it->second);
    }
    os << "\n";
  }
  return os.str();
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"variant", r.label}, {"tsrm", r.tsrm}, {"cmg", r.cmg}, {"sent_rnn", r.sent_rnn}, {"scores", r.scores}});
  return arr.dump(1);
}

}  // namespace dvc
