#pragma once

// Video records, the synthetic corpus generator, tokenization and the
// on-disk formats (annotation/result JSON, binary feature files).

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dvc/config.hpp"

namespace dvc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A time span in seconds.
struct Segment {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  double center() const { return 0.5 * (start + end); }
  bool valid() const { return start < end; }
  bool operator==(const Segment&) const = default;
};

struct EventAnnotation {
  double start = 0.0;
  double end = 0.0;
  std::vector<std::string> sentence;
  /// Latent activity id for synthetic videos, -1 when unknown.
  int activity = -1;

  Segment span() const { return {start, end}; }
};

/// Frame-level features plus timed, captioned events for one video.
/// features is T x D with T = ceil(duration / stride).
struct VideoRecord {
  std::string video_id;
  double duration = 0.0;
  double stride = 0.5;
  Matrix features;
  std::vector<EventAnnotation> events;

  int num_clips() const { return static_cast<int>(features.rows()); }
  int feature_dim() const { return static_cast<int>(features.cols()); }
};

/// Number of clips for a duration at the given stride.
int clip_count(double duration, double stride);

/// Throws ValidationError if a record breaks its invariants.
void validate_record(const VideoRecord& r);

struct SynthConfig {
  int n_videos = 200;
  double min_duration = 20.0;
  double max_duration = 60.0;
  double stride = 0.5;
  double mean_events = 3.7;
  int max_events = 10;
  int num_activities = 12;
  int d_rgb = 16;
  int d_flow = 16;
  /// Per-entry Gaussian noise standard deviation.
  double noise = 0.1;
  /// Weight of the per-video actor vector added to every row.
  double actor_weight = 0.4;
  /// Weight of the per-event variant vector added to event rows.
  double variant_weight = 0.5;
  double min_event_frac = 0.08;
  double max_event_frac = 0.45;
  double max_pair_tiou = 0.5;
  std::uint64_t seed = 1;

  int feature_dim() const { return d_rgb + d_flow; }
  void validate() const;
  static SynthConfig from_flat(const FlatConfig& cfg);
  FlatConfig to_flat() const;
};

/// The latent structure a generator run plants in the features.
struct SynthLatents {
  Matrix activity_vectors;  // A x D, unit rows
};

/// Deterministic for a fixed config (including seed).
std::vector<VideoRecord> generate_corpus(const SynthConfig& cfg, SynthLatents* latents = nullptr);

/// Lowercase, drop punctuation, split on whitespace.
std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

// ------------------------------------------------------------ annotations

struct VideoAnnotation {
  double duration = 0.0;
  std::vector<EventAnnotation> events;
};

using AnnotationMap = std::map<std::string, VideoAnnotation>;

/// {video_id: {duration, timestamps: [[s,e],...], sentences: [...]}}
AnnotationMap parse_annotations(const std::string& json_text);
AnnotationMap load_annotations(const std::string& path);
std::string annotations_to_json(const AnnotationMap& annotations);
void save_annotations(const std::string& path, const AnnotationMap& annotations);

struct PredictedEvent {
  double start = 0.0;
  double end = 0.0;
  std::string sentence;
};

using ResultMap = std::map<std::string, std::vector<PredictedEvent>>;

/// {version, results: {video_id: [{sentence, timestamp: [s,e]}]}, external_data}
std::string results_to_json(const ResultMap& results);
void save_results(const std::string& path, const ResultMap& results);
ResultMap parse_results(const std::string& json_text);
ResultMap load_results(const std::string& path);

/// Converts predictions into an annotation-shaped map (durations taken from
/// `reference`, or the max end time if the video is unknown there).
AnnotationMap results_as_annotations(const ResultMap& results, const AnnotationMap& reference);

// ----------------------------------------------------------- feature files

/// Little-endian "DVCF", u32 T, u32 D, then T*D float32 row-major.
void write_feature_file(const std::string& path, const Matrix& features);
Matrix read_feature_file(const std::string& path);
std::string encode_feature_bytes(const Matrix& features);
Matrix decode_feature_bytes(const std::string& bytes, const std::string& origin = "<memory>");

// -------------------------------------------------------------- corpus dir

/// Writes annotations.json, features/<id>.dvcf into dir.
void save_corpus(const std::string& dir, const std::vector<VideoRecord>& videos);
/// Reads a corpus directory written by save_corpus.
std::vector<VideoRecord> load_corpus(const std::string& dir, double stride = 0.5);
AnnotationMap annotations_of(const std::vector<VideoRecord>& videos);

}  // namespace dvc
