#include "dvc/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "dvc/rng.hpp"
#include "dvc/temporal.hpp"
#include "json.hpp"

namespace dvc {

namespace fs = std::filesystem;
using json = nlohmann::json;

int clip_count(double duration, double stride) {
  if (!(duration > 0.0) || !(stride > 0.0)) throw ValidationError("duration and stride must be positive");
  // Guard against 10.0/0.5 landing a hair above 20.
  const double q = duration / stride;
  const double r = std::round(q);
  if (std::abs(q - r) < 1e-9) return static_cast<int>(r);
  return static_cast<int>(std::ceil(q));
}

void validate_record(const VideoRecord& r) {
  if (!(r.duration > 0.0)) throw ValidationError(r.video_id + ": duration must be positive");
  if (r.num_clips() != clip_count(r.duration, r.stride))
    throw ValidationError(r.video_id + ": feature rows do not match ceil(duration / stride)");
  if (!r.features.allFinite()) throw ValidationError(r.video_id + ": non-finite feature entries");
  for (const auto& e : r.events) {
    if (!(0.0 <= e.start && e.start < e.end && e.end <= r.duration + 1e-9))
      throw ValidationError(r.video_id + ": event outside [0, duration] or empty");
    if (e.sentence.empty()) throw ValidationError(r.video_id + ": event with empty sentence");
  }
}

// ------------------------------------------------------------ SynthConfig

void SynthConfig::validate() const {
  if (n_videos < 1) throw ValidationError("n_videos must be >= 1");
  if (!(min_duration > 0.0) || !(max_duration >= min_duration))
    throw ValidationError("durations must be positive with min_duration <= max_duration");
  if (!(stride > 0.0)) throw ValidationError("stride must be positive");
  if (d_rgb < 1 || d_flow < 1) throw ValidationError("feature dims must be positive");
  if (num_activities < 2) throw ValidationError("num_activities must be >= 2");
  if (num_activities > 16) throw ValidationError("num_activities must be <= 16 (grammar size)");
  if (mean_events < 1.0) throw ValidationError("mean_events must be >= 1");
  if (max_events < 1) throw ValidationError("max_events must be >= 1");
  if (noise < 0.0) throw ValidationError("noise must be non-negative");
  if (!(min_event_frac > 0.0) || max_event_frac < min_event_frac || max_event_frac > 1.0)
    throw ValidationError("event length fractions must satisfy 0 < min <= max <= 1");
  if (max_pair_tiou < 0.0 || max_pair_tiou > 1.0) throw ValidationError("max_pair_tiou must be in [0, 1]");
}

SynthConfig SynthConfig::from_flat(const FlatConfig& f) {
  SynthConfig c;
  c.n_videos = static_cast<int>(f.get_int("n_videos", c.n_videos));
  c.min_duration = f.get_double("min_duration", c.min_duration);
  c.max_duration = f.get_double("max_duration", c.max_duration);
  c.stride = f.get_double("stride", c.stride);
  c.mean_events = f.get_double("mean_events", c.mean_events);
  c.max_events = static_cast<int>(f.get_int("max_events", c.max_events));
  c.num_activities = static_cast<int>(f.get_int("num_activities", c.num_activities));
  c.d_rgb = static_cast<int>(f.get_int("d_rgb", c.d_rgb));
  c.d_flow = static_cast<int>(f.get_int("d_flow", c.d_flow));
  c.noise = f.get_double("noise", c.noise);
  c.actor_weight = f.get_double("actor_weight", c.actor_weight);
  c.variant_weight = f.get_double("variant_weight", c.variant_weight);
  c.min_event_frac = f.get_double("min_event_frac", c.min_event_frac);
  c.max_event_frac = f.get_double("max_event_frac", c.max_event_frac);
  c.max_pair_tiou = f.get_double("max_pair_tiou", c.max_pair_tiou);
  c.seed = static_cast<std::uint64_t>(f.get_int("seed", static_cast<long long>(c.seed)));
  c.validate();
  return c;
}

FlatConfig SynthConfig::to_flat() const {
  FlatConfig f;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  f.set("n_videos", std::to_string(n_videos));
  f.set("min_duration", num(min_duration));
  f.set("max_duration", num(max_duration));
  f.set("stride", num(stride));
  f.set("mean_events", num(mean_events));
  f.set("max_events", std::to_string(max_events));
  f.set("num_activities", std::to_string(num_activities));
  f.set("d_rgb", std::to_string(d_rgb));
  f.set("d_flow", std::to_string(d_flow));
  f.set("noise", num(noise));
  f.set("actor_weight", num(actor_weight));
  f.set("variant_weight", num(variant_weight));
  f.set("min_event_frac", num(min_event_frac));
  f.set("max_event_frac", num(max_event_frac));
  f.set("max_pair_tiou", num(max_pair_tiou));
  f.set("seed", std::to_string(seed));
  return f;
}

// ---------------------------------------------------------------- grammar

namespace {

struct ActivityGrammar {
  const char* verbs[2];
  const char* objects[2];
};

constexpr ActivityGrammar kGrammar[16] = {
    {{"rides", "pedals"}, {"a bike", "a bicycle"}},
    {{"plays", "strums"}, {"a guitar", "an acoustic guitar"}},
    {{"kicks", "passes"}, {"a ball", "a soccer ball"}},
    {{"swims", "paddles"}, {"in a pool", "across the lake"}},
    {{"stirs", "mixes"}, {"a pot", "some soup"}},
    {{"dances", "spins"}, {"on a stage", "with a partner"}},
    {{"paints", "colors"}, {"a wall", "a fence"}},
    {{"lifts", "raises"}, {"a barbell", "heavy weights"}},
    {{"climbs", "scales"}, {"a rock wall", "a ladder"}},
    {{"washes", "scrubs"}, {"a car", "the dishes"}},
    {{"throws", "tosses"}, {"a frisbee", "a javelin"}},
    {{"skates", "glides"}, {"on a ramp", "along the street"}},
    {{"cuts", "trims"}, {"the grass", "a hedge"}},
    {{"jumps", "leaps"}, {"over a bar", "into the sand"}},
    {{"brushes", "combs"}, {"a dog", "a horse"}},
    {{"drinks", "sips"}, {"a coffee", "some water"}},
};

constexpr const char* kActors[6] = {"man", "woman", "boy", "girl", "player", "child"};
constexpr int kVariants = 4;

struct PlannedEvent {
  double start;
  double end;
  int activity;
  int variant;
};

Vector random_unit(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v / v.norm();
}

std::vector<std::string> compose_caption(const std::vector<PlannedEvent>& plan, std::size_t idx, int actor) {
  const PlannedEvent& e = plan[idx];
  std::string text = (idx == 0 ? "a " : "the ");
  text += kActors[actor];
  text += " ";
  text += kGrammar[e.activity].verbs[e.variant % 2];
  text += " ";
  text += kGrammar[e.activity].objects[e.variant / 2];
  bool repeated = false;
  for (std::size_t j = 0; j < idx; ++j) repeated = repeated || plan[j].activity == e.activity;
  if (repeated) {
    text += " again";
  } else if (plan.size() >= 2) {
    bool longest = true;
    for (std::size_t j = 0; j < plan.size(); ++j)
      if (j != idx && plan[j].end - plan[j].start >= e.end - e.start) longest = false;
    if (longest) text += " for a long time";
  }
  return tokenize(text);
}

int sample_event_count(std::mt19937_64& rng, const SynthConfig& cfg) {
  if (cfg.mean_events <= 1.0) return 1;
  std::poisson_distribution<int> extra(cfg.mean_events - 1.0);
  return std::min(1 + extra(rng), cfg.max_events);
}

std::vector<PlannedEvent> plan_events(std::mt19937_64& rng, const SynthConfig& cfg, double duration) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> pick_activity(0, cfg.num_activities - 1);
  std::uniform_int_distribution<int> pick_variant(0, kVariants - 1);
  const int n = sample_event_count(rng, cfg);
  std::vector<PlannedEvent> plan;
  for (int k = 0; k < n; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double frac = cfg.min_event_frac + (cfg.max_event_frac - cfg.min_event_frac) * u01(rng);
      const double len = std::max(frac * duration, std::min(2.0 * cfg.stride, duration));
      const double start = (duration - len) * u01(rng);
      const Segment s{start, std::min(duration, start + len)};
      bool ok = true;
      for (const auto& p : plan) ok = ok && tiou(s, Segment{p.start, p.end}) <= cfg.max_pair_tiou;
      if (!ok) continue;
      plan.push_back({s.start, s.end, pick_activity(rng), pick_variant(rng)});
      break;
    }
  }
  std::sort(plan.begin(), plan.end(), [](const PlannedEvent& a, const PlannedEvent& b) {
    return a.start != b.start ? a.start < b.start : a.end < b.end;
  });
  return plan;
}

bool activities_identifiable(const VideoRecord& r, const std::vector<PlannedEvent>& plan, const Matrix& acts) {
  for (const auto& e : plan) {
    const auto [first, last] = clip_rows(Segment{e.start, e.end}, r.duration, r.stride, r.num_clips());
    Vector mean_cos = Vector::Zero(acts.rows());
    for (int t = first; t <= last; ++t) {
      const double n = r.features.row(t).norm();
      if (n == 0.0) return false;
      mean_cos += acts * r.features.row(t).transpose() / n;
    }
    for (int a = 0; a < acts.rows(); ++a)
      if (a != e.activity && !(mean_cos[e.activity] > mean_cos[a])) return false;
  }
  return true;
}

VideoRecord synthesize_video(const SynthConfig& cfg, int index, const Matrix& acts,
                             const std::vector<std::vector<Vector>>& variants, const std::vector<Vector>& actors) {
  std::mt19937_64 rng = make_rng({cfg.seed, static_cast<std::uint64_t>(index), 0x5eedULL});
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> pick_actor(0, 5);

  std::ostringstream id;
  id << "v_" << std::setw(5) << std::setfill('0') << index;

  for (int attempt = 0; attempt < 100; ++attempt) {
    VideoRecord r;
    r.video_id = id.str();
    r.stride = cfg.stride;
    r.duration = cfg.min_duration + (cfg.max_duration - cfg.min_duration) * u01(rng);
    r.duration = std::round(r.duration * 100.0) / 100.0;
    const int actor = pick_actor(rng);
    const auto plan = plan_events(rng, cfg, r.duration);
    const int T = clip_count(r.duration, r.stride);
    const int D = cfg.feature_dim();
    r.features = Matrix::Zero(T, D);
    for (int t = 0; t < T; ++t) {
      Vector row = cfg.actor_weight * actors[actor];
      const Segment clip{t * r.stride, (t + 1) * r.stride};
      // Covering events weighted: the shortest covering event is in front.
      int front = -1;
      for (std::size_t k = 0; k < plan.size(); ++k) {
        if (!(clip.start < plan[k].end && clip.end > plan[k].start)) continue;
        if (front < 0 || plan[k].end - plan[k].start < plan[front].end - plan[front].start) front = static_cast<int>(k);
      }
      for (std::size_t k = 0; k < plan.size(); ++k) {
        if (!(clip.start < plan[k].end && clip.end > plan[k].start)) continue;
        const double w = static_cast<int>(k) == front ? 1.0 : 0.5;
        row += w * (acts.row(plan[k].activity).transpose() + cfg.variant_weight * variants[plan[k].activity][plan[k].variant]);
      }
      for (int d = 0; d < D; ++d) row[d] += cfg.noise * gauss(rng);
      r.features.row(t) = row.transpose();
    }
    // Stored at float32 precision so records survive a round trip through disk.
    r.features = r.features.cast<float>().cast<double>();
    for (std::size_t k = 0; k < plan.size(); ++k) {
      EventAnnotation e;
      e.start = std::round(plan[k].start * 100.0) / 100.0;
      e.end = std::min(r.duration, std::round(plan[k].end * 100.0) / 100.0);
      e.sentence = compose_caption(plan, k, actor);
      e.activity = plan[k].activity;
      r.events.push_back(std::move(e));
    }
    if (activities_identifiable(r, plan, acts)) return r;
  }
  throw ValidationError("could not synthesize " + id.str() + " with identifiable activities; lower the noise");
}

}  // namespace

std::vector<VideoRecord> generate_corpus(const SynthConfig& cfg, SynthLatents* latents) {
  cfg.validate();
  std::mt19937_64 rng = make_rng({cfg.seed, 0xac71ULL});
  const int D = cfg.feature_dim();
  Matrix acts(cfg.num_activities, D);
  std::vector<std::vector<Vector>> variants(cfg.num_activities);
  for (int a = 0; a < cfg.num_activities; ++a) {
    acts.row(a) = random_unit(rng, D).transpose();
    for (int v = 0; v < kVariants; ++v) variants[a].push_back(random_unit(rng, D));
  }
  std::vector<Vector> actors;
  for (int k = 0; k < 6; ++k) actors.push_back(random_unit(rng, D));
  if (latents) latents->activity_vectors = acts;

  std::vector<VideoRecord> out;
  out.reserve(cfg.n_videos);
  for (int i = 0; i < cfg.n_videos; ++i) out.push_back(synthesize_video(cfg, i, acts, variants, actors));
  return out;
}

// ----------------------------------------------------------- tokenization

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ------------------------------------------------------------ annotations

namespace {

json parse_json_or_throw(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed ") + what + " JSON: " + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path);
  f << data;
  if (!f) throw ValidationError("write failed: " + path);
}

double as_number(const json& j, const std::string& vid, const std::string& field) {
  if (!j.is_number()) throw ValidationError("video " + vid + ": field '" + field + "' must be a number");
  return j.get<double>();
}

}  // namespace

AnnotationMap parse_annotations(const std::string& json_text) {
  const json root = parse_json_or_throw(json_text, "annotation");
  if (!root.is_object()) throw ValidationError("annotation JSON must be an object keyed by video id");
  AnnotationMap out;
  for (const auto& [vid, entry] : root.items()) {
    if (!entry.is_object()) throw ValidationError("video " + vid + ": entry must be an object");
    for (const char* field : {"duration", "timestamps", "sentences"})
      if (!entry.contains(field)) throw ValidationError("video " + vid + ": missing required field '" + field + "'");
    VideoAnnotation va;
    va.duration = as_number(entry["duration"], vid, "duration");
    const json& ts = entry["timestamps"];
    const json& ss = entry["sentences"];
    if (!ts.is_array() || !ss.is_array()) throw ValidationError("video " + vid + ": timestamps and sentences must be arrays");
    if (ts.size() != ss.size())
      throw ValidationError("video " + vid + ": " + std::to_string(ts.size()) + " timestamps but " +
                            std::to_string(ss.size()) + " sentences");
    for (std::size_t k = 0; k < ts.size(); ++k) {
      if (!ts[k].is_array() || ts[k].size() != 2) throw ValidationError("video " + vid + ": timestamp must be [start, end]");
      if (!ss[k].is_string()) throw ValidationError("video " + vid + ": sentence must be a string");
      EventAnnotation e;
      e.start = as_number(ts[k][0], vid, "timestamps");
      e.end = as_number(ts[k][1], vid, "timestamps");
      if (!(e.start < e.end))
        throw ValidationError("video " + vid + ": timestamp " + std::to_string(k) + " has start >= end");
      e.sentence = tokenize(ss[k].get<std::string>());
      va.events.push_back(std::move(e));
    }
    out.emplace(vid, std::move(va));
  }
  return out;
}

AnnotationMap load_annotations(const std::string& path) { return parse_annotations(read_file(path)); }

std::string annotations_to_json(const AnnotationMap& annotations) {
  json root = json::object();
  for (const auto& [vid, va] : annotations) {
    json ts = json::array(), ss = json::array();
    for (const auto& e : va.events) {
      ts.push_back({e.start, e.end});
      ss.push_back(join_tokens(e.sentence));
    }
    root[vid] = {{"duration", va.duration}, {"timestamps", ts}, {"sentences", ss}};
  }
  return root.dump(1);
}

void save_annotations(const std::string& path, const AnnotationMap& annotations) {
  write_file(path, annotations_to_json(annotations));
}

std::string results_to_json(const ResultMap& results) {
  json res = json::object();
  for (const auto& [vid, events] : results) {
    json arr = json::array();
    for (const auto& e : events) arr.push_back({{"sentence", e.sentence}, {"timestamp", {e.start, e.end}}});
    res[vid] = arr;
  }
  json root = {{"version", "VERSION 1.0"},
               {"results", res},
               {"external_data", {{"used", false}, {"details", "synthetic features"}}}};
  return root.dump(1);
}

void save_results(const std::string& path, const ResultMap& results) { write_file(path, results_to_json(results)); }

ResultMap parse_results(const std::string& json_text) {
  const json root = parse_json_or_throw(json_text, "results");
  if (!root.is_object() || !root.contains("results") || !root["results"].is_object())
    throw ValidationError("results JSON must contain a 'results' object");
  ResultMap out;
  for (const auto& [vid, arr] : root["results"].items()) {
    if (!arr.is_array()) throw ValidationError("video " + vid + ": results entry must be an array");
    std::vector<PredictedEvent> events;
    for (const auto& item : arr) {
      if (!item.contains("sentence") || !item.contains("timestamp"))
        throw ValidationError("video " + vid + ": prediction needs 'sentence' and 'timestamp'");
      const json& ts = item["timestamp"];
      if (!ts.is_array() || ts.size() != 2) throw ValidationError("video " + vid + ": timestamp must be [start, end]");
      PredictedEvent e;
      e.start = as_number(ts[0], vid, "timestamp");
      e.end = as_number(ts[1], vid, "timestamp");
      if (!(e.start < e.end)) throw ValidationError("video " + vid + ": prediction with start >= end");
      e.sentence = item["sentence"].get<std::string>();
      events.push_back(std::move(e));
    }
    out.emplace(vid, std::move(events));
  }
  return out;
}

ResultMap load_results(const std::string& path) { return parse_results(read_file(path)); }

AnnotationMap results_as_annotations(const ResultMap& results, const AnnotationMap& reference) {
  AnnotationMap out;
  for (const auto& [vid, events] : results) {
    VideoAnnotation va;
    auto it = reference.find(vid);
    double dur = 0.0;
    for (const auto& e : events) {
      va.events.push_back(EventAnnotation{e.start, e.end, tokenize(e.sentence), -1});
      dur = std::max(dur, e.end);
    }
    va.duration = it != reference.end() ? it->second.duration : dur;
    out.emplace(vid, std::move(va));
  }
  return out;
}

// ----------------------------------------------------------- feature files

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_feature_bytes(const Matrix& features) {
  std::string out = "DVCF";
  put_u32(out, static_cast<std::uint32_t>(features.rows()));
  put_u32(out, static_cast<std::uint32_t>(features.cols()));
  out.reserve(out.size() + 4 * features.size());
  for (Eigen::Index r = 0; r < features.rows(); ++r)
    for (Eigen::Index c = 0; c < features.cols(); ++c)
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(features(r, c))));
  return out;
}

Matrix decode_feature_bytes(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "DVCF") != 0) throw ValidationError(origin + ": not a DVCF feature file");
  const std::uint32_t T = get_u32(bytes, 4), D = get_u32(bytes, 8);
  if (bytes.size() != 12 + 4ull * T * D) throw ValidationError(origin + ": truncated or oversized DVCF payload");
  Matrix m(T, D);
  std::size_t off = 12;
  for (std::uint32_t r = 0; r < T; ++r)
    for (std::uint32_t c = 0; c < D; ++c, off += 4) m(r, c) = std::bit_cast<float>(get_u32(bytes, off));
  return m;
}

void write_feature_file(const std::string& path, const Matrix& features) {
  write_file(path, encode_feature_bytes(features));
}

Matrix read_feature_file(const std::string& path) { return decode_feature_bytes(read_file(path), path); }

// -------------------------------------------------------------- corpus dir

AnnotationMap annotations_of(const std::vector<VideoRecord>& videos) {
  AnnotationMap out;
  for (const auto& v : videos) out[v.video_id] = VideoAnnotation{v.duration, v.events};
  return out;
}

void save_corpus(const std::string& dir, const std::vector<VideoRecord>& videos) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "features", ec);
  if (ec) throw ValidationError("cannot create " + dir + ": " + ec.message());
  save_annotations((fs::path(dir) / "annotations.json").string(), annotations_of(videos));
  for (const auto& v : videos) write_feature_file((fs::path(dir) / "features" / (v.video_id + ".dvcf")).string(), v.features);
}

std::vector<VideoRecord> load_corpus(const std::string& dir, double stride) {
  const AnnotationMap ann = load_annotations((fs::path(dir) / "annotations.json").string());
  std::vector<VideoRecord> out;
  for (const auto& [vid, va] : ann) {
    VideoRecord r;
    r.video_id = vid;
    r.duration = va.duration;
    r.stride = stride;
    r.events = va.events;
    r.features = read_feature_file((fs::path(dir) / "features" / (vid + ".dvcf")).string());
    validate_record(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dvc
