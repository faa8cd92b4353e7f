#include "dvc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "dvc/temporal.hpp"
#include "json.hpp"

namespace dvc::metrics {

namespace {

using NgramCounts = std::map<std::string, int>;

NgramCounts ngram_counts(const Tokens& tokens, int n) {
  NgramCounts out;
  if (static_cast<int>(tokens.size()) < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int k = 1; k < n; ++k) {
      key += '\x1f';
      key += tokens[i + k];
    }
    ++out[key];
  }
  return out;
}

void require_references(const std::vector<Tokens>& references, const char* who) {
  if (references.empty()) throw ValidationError(std::string(who) + ": empty reference list");
}

}  // namespace

// ------------------------------------------------------------------ BLEU

double bleu4(const Tokens& candidate, const std::vector<Tokens>& references) {
  require_references(references, "bleu4");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const NgramCounts cand = ngram_counts(candidate, n);
    NgramCounts max_ref;
    for (const auto& r : references)
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    int clipped = 0, total = 0;
    for (const auto& [g, c] : cand) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(c, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / total);
  }
  const double c = static_cast<double>(candidate.size());
  // Closest reference length, ties to the shorter one.
  double r = static_cast<double>(references.front().size());
  for (const auto& ref : references) {
    const double len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / 4.0);
}

// ---------------------------------------------------------------- METEOR

namespace {

class ChunkSearch {
 public:
  ChunkSearch(const Tokens& cand, const Tokens& ref) : n_(static_cast<int>(cand.size())) {
    std::unordered_map<std::string, int> type_of;
    for (const auto& w : cand) type_of.emplace(w, static_cast<int>(type_of.size()));
    types_.resize(cand.size());
    std::vector<int> cand_count(type_of.size(), 0), ref_count(type_of.size(), 0);
    for (int i = 0; i < n_; ++i) {
      types_[i] = type_of[cand[i]];
      ++cand_count[types_[i]];
    }
    options_.resize(cand.size());
    for (int j = 0; j < static_cast<int>(ref.size()); ++j) {
      auto it = type_of.find(ref[j]);
      if (it == type_of.end()) continue;
      ++ref_count[it->second];
      for (int i = 0; i < n_; ++i)
        if (types_[i] == it->second) options_[i].push_back(j);
    }
    need_.resize(type_of.size());
    remaining_ = cand_count;
    for (std::size_t w = 0; w < need_.size(); ++w) {
      need_[w] = std::min(cand_count[w], ref_count[w]);
      total_ += need_[w];
    }
    used_.assign(ref.size(), false);
  }

  Alignment solve() {
    if (total_ == 0) return {0, 0};
    best_ = greedy_chunks();
    dfs(0, -2, 0);
    return {total_, best_};
  }

 private:
  // Left-to-right first fit that prefers extending the current chunk.
  int greedy_chunks() {
    std::vector<bool> used(used_.size(), false);
    std::vector<int> got(need_.size(), 0);
    int chunks = 0, prev = -2;
    for (int i = 0; i < n_; ++i) {
      const int w = types_[i];
      int pick = -1;
      if (got[w] < need_[w]) {
        for (int j : options_[i])
          if (!used[j] && j == prev + 1) pick = j;
        if (pick < 0)
          for (int j : options_[i])
            if (!used[j]) {
              pick = j;
              break;
            }
      }
      if (pick >= 0) {
        used[pick] = true;
        ++got[w];
        if (pick != prev + 1) ++chunks;
        prev = pick;
      } else {
        prev = -2;
      }
    }
    return chunks;
  }

  void dfs(int i, int prev, int chunks) {
    if (chunks >= best_) return;
    if (i == n_) {
      best_ = chunks;
      return;
    }
    const int w = types_[i];
    --remaining_[w];
    if (need_[w] > 0) {
      for (int j : options_[i]) {
        if (used_[j]) continue;
        used_[j] = true;
        --need_[w];
        dfs(i + 1, j, chunks + (j == prev + 1 ? 0 : 1));
        ++need_[w];
        used_[j] = false;
      }
    }
    // Skipping i is allowed only if the later occurrences can still reach
    // the maximum match count for this word.
    if (need_[w] <= remaining_[w]) dfs(i + 1, -2, chunks);
    ++remaining_[w];
  }

  int n_;
  int total_ = 0;
  int best_ = std::numeric_limits<int>::max();
  std::vector<int> types_;
  std::vector<std::vector<int>> options_;
  std::vector<int> need_;
  std::vector<int> remaining_;
  std::vector<bool> used_;
};

}  // namespace

Alignment align_exact(const Tokens& candidate, const Tokens& reference) {
  return ChunkSearch(candidate, reference).solve();
}

double meteor_lite(const Tokens& candidate, const std::vector<Tokens>& references) {
  require_references(references, "meteor_lite");
  if (candidate.empty()) return 0.0;
  double best = 0.0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    const Alignment a = align_exact(candidate, ref);
    if (a.matches == 0) continue;
    const double m = a.matches;
    const double p = m / static_cast<double>(candidate.size());
    const double r = m / static_cast<double>(ref.size());
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(a.chunks) / m;
    const double penalty = 0.5 * frag * frag * frag;
    best = std::max(best, fmean * (1.0 - penalty));
  }
  return best;
}

// ----------------------------------------------------------------- CIDEr

std::vector<double> cider_scores(const std::map<std::string, Tokens>& candidates,
                                 const std::map<std::string, std::vector<Tokens>>& references, CiderVariant variant) {
  if (candidates.empty()) throw ValidationError("cider: empty corpus");
  if (candidates.size() != references.size()) throw ValidationError("cider: candidate and reference keys differ");
  for (const auto& [k, v] : candidates) {
    auto it = references.find(k);
    if (it == references.end()) throw ValidationError("cider: no references for key " + k);
    require_references(it->second, "cider");
  }
  const double N = static_cast<double>(candidates.size());
  std::vector<double> out(candidates.size(), 0.0);
  for (int n = 1; n <= 4; ++n) {
    std::map<std::string, int> df;
    for (const auto& [k, refs] : references) {
      std::map<std::string, bool> seen;
      for (const auto& r : refs)
        for (const auto& [g, c] : ngram_counts(r, n)) seen[g] = true;
      for (const auto& [g, b] : seen) ++df[g];
    }
    auto idf = [&](const std::string& g) {
      // A one-document corpus has idf 0 for every n-gram; weight uniformly.
      if (candidates.size() == 1) return 1.0;
      auto it = df.find(g);
      const double d = it == df.end() ? 1.0 : std::max(1, it->second);
      return std::log(N / d);
    };
    auto weigh = [&](const Tokens& s) {
      std::map<std::string, double> v;
      for (const auto& [g, c] : ngram_counts(s, n)) v[g] = c * idf(g);
      return v;
    };
    auto norm = [](const std::map<std::string, double>& v) {
      double s = 0.0;
      for (const auto& [g, x] : v) s += x * x;
      return std::sqrt(s);
    };
    std::size_t idx = 0;
    for (const auto& [k, cand] : candidates) {
      const auto& refs = references.at(k);
      const auto vc = weigh(cand);
      const double nc = norm(vc);
      double acc = 0.0;
      for (const auto& r : refs) {
        const auto vr = weigh(r);
        const double nr = norm(vr);
        if (nc == 0.0 || nr == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, x] : vc) {
          auto it = vr.find(g);
          if (it == vr.end()) continue;
          dot += variant == CiderVariant::kD ? std::min(x, it->second) * it->second : x * it->second;
        }
        double sim = dot / (nc * nr);
        if (variant == CiderVariant::kD) {
          const double delta = static_cast<double>(cand.size()) - static_cast<double>(r.size());
          sim *= std::exp(-(delta * delta) / (2.0 * 36.0));
        }
        acc += sim;
      }
      out[idx++] += 10.0 * acc / static_cast<double>(refs.size()) / 4.0;
    }
  }
  return out;
}

double cider(const std::map<std::string, Tokens>& candidates, const std::map<std::string, std::vector<Tokens>>& references,
             CiderVariant variant) {
  const auto s = cider_scores(candidates, references, variant);
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

// ------------------------------------------------------------ dense eval

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::kBleu4:
      return "Bleu_4";
    case Metric::kMeteor:
      return "METEOR";
    case Metric::kCider:
      return "CIDEr";
  }
  return "?";
}

Metric parse_metric(const std::string& name) {
  if (name == "bleu4" || name == "Bleu_4") return Metric::kBleu4;
  if (name == "meteor" || name == "METEOR") return Metric::kMeteor;
  if (name == "cider" || name == "CIDEr") return Metric::kCider;
  throw ValidationError("unknown metric: " + name);
}

ScoreReport dense_caption_eval(const AnnotationMap& predictions, const AnnotationMap& references,
                               const DenseEvalOptions& options) {
  if (options.thresholds.empty()) throw ValidationError("dense_caption_eval: no thresholds");
  for (const auto& [vid, va] : predictions)
    if (!references.count(vid)) throw ValidationError("dense_caption_eval: video " + vid + " has no reference annotation");

  ScoreReport rep;
  rep.thresholds = options.thresholds;
  for (const auto& [vid, va] : predictions) rep.num_predictions += static_cast<int>(va.events.size());

  for (double t : options.thresholds) {
    // (prediction, matched references), in deterministic video/event order.
    std::vector<std::pair<Tokens, std::vector<Tokens>>> matched;
    int unmatched = 0;
    for (const auto& [vid, va] : predictions) {
      const auto& ref = references.at(vid);
      for (const auto& p : va.events) {
        std::vector<Tokens> refs;
        for (const auto& g : ref.events)
          if (tiou(p.span(), g.span()) >= t) refs.push_back(g.sentence);
        if (refs.empty())
          ++unmatched;
        else
          matched.emplace_back(p.sentence, std::move(refs));
      }
    }
    rep.matched.push_back(static_cast<int>(matched.size()));
    rep.unmatched.push_back(unmatched);
    const double denom = static_cast<double>(rep.num_predictions);
    for (Metric m : options.metrics) {
      double total = 0.0;
      if (m == Metric::kCider) {
        if (!matched.empty()) {
          std::map<std::string, Tokens> cands;
          std::map<std::string, std::vector<Tokens>> refs;
          for (std::size_t k = 0; k < matched.size(); ++k) {
            std::ostringstream key;
            key << std::setw(9) << std::setfill('0') << k;
            cands[key.str()] = matched[k].first;
            refs[key.str()] = matched[k].second;
          }
          for (double s : cider_scores(cands, refs, options.cider_variant)) total += s;
        }
      } else {
        for (const auto& [cand, refs] : matched) {
          if (m == Metric::kBleu4)
            total += bleu4(cand, refs);
          else
            total += options.meteor_override ? options.meteor_override(cand, refs) : meteor_lite(cand, refs);
        }
      }
      rep.per_threshold[metric_name(m)].push_back(denom > 0 ? total / denom : 0.0);
    }
  }
  for (const auto& [name, vals] : rep.per_threshold)
    rep.scores[name] = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
  return rep;
}

ScoreReport dense_caption_eval(const AnnotationMap& predictions, const std::vector<AnnotationMap>& references,
                               const DenseEvalOptions& options) {
  if (references.empty()) throw ValidationError("dense_caption_eval: no reference annotations");
  std::vector<ScoreReport> reports;
  for (const auto& r : references) reports.push_back(dense_caption_eval(predictions, r, options));
  ScoreReport out = reports.front();
  const double n = static_cast<double>(reports.size());
  for (auto& [name, v] : out.scores) {
    v = 0.0;
    for (const auto& r : reports) v += r.scores.at(name) / n;
  }
  for (auto& [name, vals] : out.per_threshold)
    for (std::size_t k = 0; k < vals.size(); ++k) {
      vals[k] = 0.0;
      for (const auto& r : reports) vals[k] += r.per_threshold.at(name)[k] / n;
    }
  return out;
}

std::string ScoreReport::to_json() const {
  nlohmann::json j = {{"thresholds", thresholds}, {"scores", scores},         {"per_threshold", per_threshold},
                      {"matched", matched},       {"unmatched", unmatched}, {"num_predictions", num_predictions}};
  return j.dump(1);
}

std::string ScoreReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(10) << "metric";
  for (double t : thresholds) os << std::right << std::setw(10) << ("tIoU" + std::to_string(t).substr(0, 3));
  os << std::setw(10) << "mean" << "\n";
  for (const auto& [name, vals] : per_threshold) {
    os << std::left << std::setw(10) << name << std::right << std::fixed << std::setprecision(4);
    for (double v : vals) os << std::setw(10) << v;
    os << std::setw(10) << scores.at(name) << "\n";
  }
  return os.str();
}

}  // namespace dvc::metrics
