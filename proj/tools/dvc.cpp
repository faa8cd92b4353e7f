// Command-line entry point: corpus synthesis, training, evaluation and the
// ablation grid. Logs are line-delimited JSON on stdout.
//
// Exit codes: 0 ok, 1 validation error, 2 runtime error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "dvc/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dvc;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string corpus;
  std::string checkpoint;
  std::string proposals = "gt";
  std::string mode = "xe";
  std::string metric = "all";
  std::string split = "val";
  bool resume = false;
};

void log_line(const std::string& line) { std::cout << line << std::endl; }

void log_json(const nlohmann::json& j) { log_line(j.dump()); }

FlatConfig load_flat(const std::string& path) { return path.empty() ? FlatConfig{} : FlatConfig::load(path); }

// Desk-scale defaults overlaid with the keys of the config file.
FlatConfig load_pipeline_flat(const std::string& path) {
  FlatConfig flat = desk_config().to_flat();
  const FlatConfig given = load_flat(path);
  for (const auto& [k, v] : given.values()) flat.set(k, v);
  return flat;
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw ValidationError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create " + dir + ": " + ec.message());
  const fs::path probe = fs::path(dir) / ".write_probe";
  std::ofstream os(probe);
  if (!os) throw ValidationError(dir + " is not writable");
  os.close();
  fs::remove(probe, ec);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write " + path.string());
  os << text;
}

std::vector<metrics::Metric> selected_metrics(const std::string& name) {
  if (name == "all") return {metrics::Metric::kBleu4, metrics::Metric::kMeteor, metrics::Metric::kCider};
  return {metrics::parse_metric(name)};
}

Vocabulary corpus_vocabulary(const std::string& corpus, const CorpusSplits& s, int min_count) {
  const fs::path vp = fs::path(corpus) / "vocabulary.json";
  if (fs::exists(vp)) return Vocabulary::load(vp.string());
  return Vocabulary::build(s.train, min_count);
}

// ---------------------------------------------------------------- synth

int cmd_synth(const Options& o) {
  FlatConfig flat = load_flat(o.config);
  if (o.seed) flat.set("seed", std::to_string(*o.seed));
  const SynthConfig cfg = SynthConfig::from_flat(flat);
  const int n_val = static_cast<int>(flat.get_int("n_val", cfg.n_videos / 5));
  const int min_count = static_cast<int>(flat.get_int("vocab_min_count", 5));
  ensure_dir(o.out);
  const auto videos = generate_corpus(cfg);
  const CorpusSplits s = split_corpus(videos, n_val);
  save_corpus(o.out, videos);
  save_splits((fs::path(o.out) / "splits.json").string(), s);
  const Vocabulary vocab = Vocabulary::build(s.train, min_count);
  vocab.save((fs::path(o.out) / "vocabulary.json").string());
  FlatConfig used = cfg.to_flat();
  used.set("n_val", std::to_string(n_val));
  used.set("vocab_min_count", std::to_string(min_count));
  write_text(fs::path(o.out) / "synth.cfg", used.to_string());
  std::size_t events = 0;
  for (const auto& v : videos) events += v.events.size();
  log_json({{"command", "synth"}, {"videos", videos.size()}, {"train", s.train.size()}, {"val", s.val.size()},
            {"events", events}, {"vocab", vocab.size()}, {"out", o.out}});
  return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(const Options& o) {
  if (o.corpus.empty()) throw ValidationError("--corpus is required");
  const training::Mode mode = training::parse_mode(o.mode);
  const CorpusSplits s = load_corpus_splits(o.corpus);
  if (s.train.empty()) throw ValidationError("corpus has no training videos");
  FlatConfig flat = load_pipeline_flat(o.config);
  if (o.seed) flat.set("seed", std::to_string(*o.seed));
  ensure_dir(o.out);
  std::ofstream log_file(fs::path(o.out) / "train_log.jsonl", std::ios::app);
  auto sink = [&](const std::string& line) {
    log_line(line);
    log_file << line << "\n";
  };

  std::unique_ptr<Pipeline> p;
  CheckpointInfo info;
  const bool from_checkpoint = mode == training::Mode::kScst || o.resume;
  if (from_checkpoint) {
    const std::string src = o.checkpoint.empty() ? o.out : o.checkpoint;
    if (!checkpoint_exists(src)) {
      throw ValidationError(mode == training::Mode::kScst ? "scst training requires an existing xe checkpoint (--checkpoint)"
                                                          : "nothing to resume at " + src);
    }
    p = load_checkpoint(src, &info);
    if (!o.config.empty()) {
      const PipelineConfig given = PipelineConfig::from_flat(flat);
      if (given.model.hash() != info.config_hash)
        throw ValidationError("config hash mismatch: checkpoint " + info.config_hash + " vs config " +
                              given.model.hash());
    }
  } else {
    const PipelineConfig cfg = PipelineConfig::from_flat(flat);
    p = std::make_unique<Pipeline>(cfg, corpus_vocabulary(o.corpus, s, cfg.vocab_min_count));
    p->init();
  }
  const Vocabulary corpus_vocab = corpus_vocabulary(o.corpus, s, p->config().vocab_min_count);
  if (corpus_vocab.hash() != p->model().vocab().hash())
    throw ValidationError("vocabulary hash mismatch between checkpoint and corpus");

  // Training-schedule keys of the given config apply on top of a checkpoint.
  PipelineConfig run_cfg = p->config();
  if (from_checkpoint && !o.config.empty()) {
    const PipelineConfig given = PipelineConfig::from_flat(flat);
    run_cfg.xe = given.xe;
    run_cfg.scst = given.scst;
  }
  if (o.seed) run_cfg.apply_seed(*o.seed);
  if (o.metric != "all") run_cfg.scst.reward_metric = metrics::parse_metric(o.metric);

  training::TrainResult res;
  if (mode == training::Mode::kXe) {
    if (o.resume) {
      res = training::train_xe(p->model(), s.train, run_cfg.xe, sink, info.step);
    } else {
      res = train_pipeline(*p, s.train, sink).captioner;
    }
  } else {
    const auto cands = learnt_candidates(*p, s.train);
    res = training::train_scst(p->model(), p->selector(), s.train, cands, run_cfg.scst, sink, info.step);
  }
  save_checkpoint(o.out, *p, {res.steps, training::mode_name(mode), p->config().model.hash(), p->model().vocab().hash()});
  sink(nlohmann::json({{"command", "train"}, {"mode", training::mode_name(mode)}, {"step", res.steps},
                       {"final_loss", res.final_loss}, {"checkpoint", o.out}})
           .dump());
  return 0;
}

// ----------------------------------------------------------------- eval

int cmd_eval(const Options& o) {
  if (o.checkpoint.empty()) throw ValidationError("--checkpoint is required");
  if (o.corpus.empty()) throw ValidationError("--corpus is required");
  const ProposalSource source = parse_proposal_source(o.proposals);
  CheckpointInfo info;
  auto p = load_checkpoint(o.checkpoint, &info);
  const CorpusSplits s = load_corpus_splits(o.corpus);
  const fs::path vp = fs::path(o.corpus) / "vocabulary.json";
  if (fs::exists(vp) && Vocabulary::load(vp.string()).hash() != p->model().vocab().hash())
    throw ValidationError("vocabulary mismatch between checkpoint and corpus");
  std::vector<VideoRecord> videos;
  if (o.split == "train") {
    videos = s.train;
  } else if (o.split == "val") {
    videos = s.val.empty() ? s.train : s.val;
  } else if (o.split == "all") {
    videos = s.train;
    videos.insert(videos.end(), s.val.begin(), s.val.end());
  } else {
    throw ValidationError("unknown split: " + o.split);
  }
  if (videos.empty()) throw ValidationError("empty corpus");
  metrics::DenseEvalOptions opt;
  opt.metrics = selected_metrics(o.metric);
  const ResultMap results = predict(*p, videos, source);
  const metrics::ScoreReport rep = evaluate_results(results, videos, opt);
  if (!o.out.empty()) {
    ensure_dir(o.out);
    save_results((fs::path(o.out) / "results.json").string(), results);
    write_text(fs::path(o.out) / "report.json", rep.to_json() + "\n");
    write_text(fs::path(o.out) / "report.txt", rep.to_table());
  }
  std::cerr << rep.to_table();
  log_json({{"command", "eval"}, {"proposals", o.proposals}, {"videos", videos.size()}, {"scores", rep.scores},
            {"step", info.step}});
  return 0;
}

// --------------------------------------------------------------- ablate

int cmd_ablate(const Options& o) {
  if (o.corpus.empty()) throw ValidationError("--corpus is required");
  const CorpusSplits s = load_corpus_splits(o.corpus);
  if (s.val.empty()) throw ValidationError("ablation needs a validation split");
  FlatConfig flat = load_pipeline_flat(o.config);
  if (o.seed) flat.set("seed", std::to_string(*o.seed));
  const PipelineConfig cfg = PipelineConfig::from_flat(flat);
  const Vocabulary vocab = corpus_vocabulary(o.corpus, s, cfg.vocab_min_count);
  const auto rows = run_ablation(cfg, vocab, s.train, s.val, log_line);
  const std::string table = ablation_table(rows);
  if (!o.out.empty()) {
    ensure_dir(o.out);
    write_text(fs::path(o.out) / "ablation.txt", table);
    write_text(fs::path(o.out) / "ablation.json", ablation_json(rows) + "\n");
  }
  std::cerr << table;
  log_json({{"command", "ablate"}, {"rows", nlohmann::json::parse(ablation_json(rows))}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense video captioning toolkit"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "flat key=value config file");
    sub->add_option("--seed", seed, "seed for every random consumer")->each([&](const std::string&) { o.seed = seed; });
    sub->add_option("--out", o.out, "output directory");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  add_common(synth);
  synth->get_option("--out")->required();

  auto* train = app.add_subcommand("train", "train a pipeline (xe) or fine-tune it (scst)");
  add_common(train);
  train->get_option("--out")->required();
  train->add_option("--corpus", o.corpus, "corpus directory")->required();
  train->add_option("--mode", o.mode, "xe or scst")->check(CLI::IsMember({"xe", "scst"}));
  train->add_option("--checkpoint", o.checkpoint, "input checkpoint (scst or resume)");
  train->add_flag("--resume", o.resume, "continue xe training from a checkpoint");
  train->add_option("--metric", o.metric, "scst reward metric")->check(CLI::IsMember({"bleu4", "meteor", "cider", "all"}));

  auto* eval = app.add_subcommand("eval", "caption a corpus and score it");
  add_common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
  eval->add_option("--corpus", o.corpus, "corpus directory")->required();
  eval->add_option("--proposals", o.proposals, "gt or learnt")->check(CLI::IsMember({"gt", "learnt"}));
  eval->add_option("--metric", o.metric, "metric")->check(CLI::IsMember({"bleu4", "meteor", "cider", "all"}));
  eval->add_option("--split", o.split, "train, val or all")->check(CLI::IsMember({"train", "val", "all"}));

  auto* ablate = app.add_subcommand("ablate", "train and score the five encoder/decoder variants");
  add_common(ablate);
  ablate->add_option("--corpus", o.corpus, "corpus directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (ablate->parsed()) return cmd_ablate(o);
  } catch (const ValidationError& e) {
    log_json({{"error", e.what()}, {"kind", "validation"}});
    return 1;
  } catch (const std::exception& e) {
    log_json({{"error", e.what()}, {"kind", "runtime"}});
    return 2;
  }
  return 0;
}
