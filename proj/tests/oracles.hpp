#pragma once

// Independent reference implementations used as test oracles. They follow
// the textbook definitions with plain loops and share no code with the
// library beyond basic types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Tokens = std::vector<std::string>;

// Interval overlap by counting unit cells on an integer grid. Exact for
// integer endpoints.
inline double tiou_cells(int a0, int a1, int b0, int b1) {
  int inter = 0, uni = 0;
  const int lo = std::min(a0, b0), hi = std::max(a1, b1);
  for (int x = lo; x < hi; ++x) {
    const bool in_a = x >= a0 && x < a1;
    const bool in_b = x >= b0 && x < b1;
    inter += in_a && in_b;
    uni += in_a || in_b;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

struct Span {
  int start, end;
};

inline std::pair<double, double> precision_recall(const std::vector<Span>& pred, const std::vector<Span>& gt,
                                                  const std::vector<double>& thresholds) {
  double p = 0.0, r = 0.0;
  for (double t : thresholds) {
    int hit_p = 0, hit_r = 0;
    for (const auto& a : pred) {
      bool ok = false;
      for (const auto& b : gt) ok = ok || tiou_cells(a.start, a.end, b.start, b.end) >= t;
      hit_p += ok;
    }
    for (const auto& b : gt) {
      bool ok = false;
      for (const auto& a : pred) ok = ok || tiou_cells(a.start, a.end, b.start, b.end) >= t;
      hit_r += ok;
    }
    p += pred.empty() ? 0.0 : static_cast<double>(hit_p) / pred.size();
    r += gt.empty() ? 0.0 : static_cast<double>(hit_r) / gt.size();
  }
  return {p / thresholds.size(), r / thresholds.size()};
}

inline std::vector<Tokens> ngrams(const Tokens& s, int n) {
  std::vector<Tokens> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) out.emplace_back(s.begin() + i, s.begin() + i + n);
  return out;
}

inline int count_of(const std::vector<Tokens>& list, const Tokens& g) {
  return static_cast<int>(std::count(list.begin(), list.end(), g));
}

inline double bleu4(const Tokens& cand, const std::vector<Tokens>& refs) {
  if (cand.empty()) return 0.0;
  double prod = 1.0;
  for (int n = 1; n <= 4; ++n) {
    const auto cg = ngrams(cand, n);
    if (cg.empty()) return 0.0;
    // Distinct candidate n-grams.
    std::vector<Tokens> uniq;
    for (const auto& g : cg)
      if (std::find(uniq.begin(), uniq.end(), g) == uniq.end()) uniq.push_back(g);
    int clipped = 0;
    for (const auto& g : uniq) {
      int max_ref = 0;
      for (const auto& r : refs) max_ref = std::max(max_ref, count_of(ngrams(r, n), g));
      clipped += std::min(count_of(cg, g), max_ref);
    }
    if (clipped == 0) return 0.0;
    prod *= static_cast<double>(clipped) / cg.size();
  }
  const int c = static_cast<int>(cand.size());
  int best = -1;
  for (const auto& r : refs) {
    const int len = static_cast<int>(r.size());
    if (best < 0 || std::abs(len - c) < std::abs(best - c) || (std::abs(len - c) == std::abs(best - c) && len < best))
      best = len;
  }
  const double bp = c < best ? std::exp(1.0 - static_cast<double>(best) / c) : 1.0;
  return bp * std::pow(prod, 0.25);
}

// Exhaustive search over all one-to-one exact alignments.
inline std::pair<int, int> best_alignment(const Tokens& cand, const Tokens& ref) {
  const int n = static_cast<int>(cand.size());
  std::vector<int> link(n, -1);
  std::vector<bool> used(ref.size(), false);
  int best_m = 0, best_c = 0;
  std::function<void(int)> rec = [&](int i) {
    if (i == n) {
      int m = 0, chunks = 0;
      for (int k = 0; k < n; ++k) {
        if (link[k] < 0) continue;
        ++m;
        if (k == 0 || link[k - 1] < 0 || link[k - 1] + 1 != link[k]) ++chunks;
      }
      if (m > best_m || (m == best_m && chunks < best_c)) {
        best_m = m;
        best_c = chunks;
      }
      return;
    }
    link[i] = -1;
    rec(i + 1);
    for (int j = 0; j < static_cast<int>(ref.size()); ++j) {
      if (used[j] || ref[j] != cand[i]) continue;
      used[j] = true;
      link[i] = j;
      rec(i + 1);
      link[i] = -1;
      used[j] = false;
    }
  };
  rec(0);
  return {best_m, best_c};
}

inline double meteor(const Tokens& cand, const std::vector<Tokens>& refs) {
  double best = 0.0;
  for (const auto& r : refs) {
    if (cand.empty() || r.empty()) continue;
    const auto [m, chunks] = best_alignment(cand, r);
    if (m == 0) continue;
    const double P = static_cast<double>(m) / cand.size();
    const double R = static_cast<double>(m) / r.size();
    const double f = 10 * P * R / (R + 9 * P);
    const double frag = static_cast<double>(chunks) / m;
    best = std::max(best, f * (1 - 0.5 * frag * frag * frag));
  }
  return best;
}

// Corpus CIDEr (base form) with explicit tf-idf vectors. A one-document
// corpus uses unit idf.
inline double cider(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs) {
  const std::size_t N = cands.size();
  double total = 0.0;
  for (std::size_t v = 0; v < N; ++v) {
    double score = 0.0;
    for (int n = 1; n <= 4; ++n) {
      auto idf = [&](const Tokens& g) {
        if (N == 1) return 1.0;
        int df = 0;
        for (const auto& rs : refs) {
          bool any = false;
          for (const auto& r : rs) any = any || count_of(ngrams(r, n), g) > 0;
          df += any;
        }
        return std::log(static_cast<double>(N) / std::max(1, df));
      };
      auto vec = [&](const Tokens& s) {
        std::vector<std::pair<Tokens, double>> out;
        const auto gs = ngrams(s, n);
        for (const auto& g : gs) {
          bool seen = false;
          for (const auto& e : out) seen = seen || e.first == g;
          if (!seen) out.push_back({g, count_of(gs, g) * idf(g)});
        }
        return out;
      };
      auto norm = [](const std::vector<std::pair<Tokens, double>>& x) {
        double s = 0;
        for (const auto& e : x) s += e.second * e.second;
        return std::sqrt(s);
      };
      const auto vc = vec(cands[v]);
      double sum = 0.0;
      for (const auto& r : refs[v]) {
        const auto vr = vec(r);
        double dot = 0.0;
        for (const auto& a : vc)
          for (const auto& b : vr)
            if (a.first == b.first) dot += a.second * b.second;
        const double d = norm(vc) * norm(vr);
        sum += d > 0 ? dot / d : 0.0;
      }
      score += 10.0 * sum / refs[v].size();
    }
    total += score / 4.0;
  }
  return total / N;
}

// Random sentences over a small vocabulary so overlaps are common.
inline Tokens random_sentence(std::mt19937_64& rng, int min_len, int max_len, int vocab) {
  std::uniform_int_distribution<int> len(min_len, max_len), tok(0, vocab - 1);
  Tokens s(len(rng));
  for (auto& w : s) w = "t" + std::to_string(tok(rng));
  return s;
}

// Relation encoder written out element by element.
struct TsrmWeights {
  Eigen::MatrixXd w0, b0, w1, b1, wq, wk, wv;
  int d_pos = 0;
};

inline Eigen::VectorXd sinusoid(double x, int d_pos) {
  Eigen::VectorXd v(d_pos);
  for (int k = 0; k < d_pos / 2; ++k) {
    const double omega = 100.0 / std::pow(1e4, 2.0 * k / d_pos);
    v[2 * k] = std::sin(omega * x);
    v[2 * k + 1] = std::cos(omega * x);
  }
  return v;
}

struct TsrmOut {
  Eigen::MatrixXd attention, relational;
};

inline TsrmOut tsrm(const TsrmWeights& w, const std::vector<std::pair<double, double>>& spans,
                    const Eigen::MatrixXd& pooled) {
  const int N = static_cast<int>(spans.size());
  Eigen::MatrixXd fused(N, N);
  const double dk = static_cast<double>(w.wq.rows());
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      const double li = spans[i].second - spans[i].first, lj = spans[j].second - spans[j].first;
      const double ci = 0.5 * (spans[i].first + spans[i].second), cj = 0.5 * (spans[j].first + spans[j].second);
      Eigen::VectorXd code(2 * w.d_pos);
      code << sinusoid(std::log(lj / li), w.d_pos), sinusoid((cj - ci) / li, w.d_pos);
      double t = w.b1(0, 0);
      for (int h = 0; h < w.w0.rows(); ++h) {
        double a = w.b0(h, 0);
        for (int k = 0; k < code.size(); ++k) a += w.w0(h, k) * code[k];
        t += w.w1(0, h) * std::max(0.0, a);
      }
      double s = 0.0;
      for (int r = 0; r < w.wq.rows(); ++r) {
        double q = 0.0, k = 0.0;
        for (int c = 0; c < pooled.rows(); ++c) {
          q += w.wq(r, c) * pooled(c, i);
          k += w.wk(r, c) * pooled(c, j);
        }
        s += q * k;
      }
      fused(i, j) = t + s / std::sqrt(dk);
    }
  }
  TsrmOut out;
  out.attention.resize(N, N);
  for (int i = 0; i < N; ++i) {
    double mx = fused.row(i).maxCoeff(), z = 0.0;
    for (int j = 0; j < N; ++j) z += std::exp(fused(i, j) - mx);
    for (int j = 0; j < N; ++j) out.attention(i, j) = std::exp(fused(i, j) - mx) / z;
  }
  out.relational = Eigen::MatrixXd::Zero(w.wv.rows(), N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int r = 0; r < w.wv.rows(); ++r) {
        double v = 0.0;
        for (int c = 0; c < pooled.rows(); ++c) v += w.wv(r, c) * pooled(c, j);
        out.relational(r, i) += out.attention(i, j) * v;
      }
  return out;
}

// Additive frame attention, element by element. frames: D x T.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> frame_attention(const Eigen::MatrixXd& wh, const Eigen::MatrixXd& wf,
                                                                   const Eigen::MatrixXd& v, const Eigen::VectorXd& h,
                                                                   const Eigen::MatrixXd& frames) {
  const int T = static_cast<int>(frames.cols());
  Eigen::VectorXd e(T);
  for (int t = 0; t < T; ++t) {
    double s = 0.0;
    for (int a = 0; a < wh.rows(); ++a) {
      double x = 0.0;
      for (int k = 0; k < h.size(); ++k) x += wh(a, k) * h[k];
      for (int k = 0; k < frames.rows(); ++k) x += wf(a, k) * frames(k, t);
      s += v(0, a) * std::tanh(x);
    }
    e[t] = s;
  }
  const double mx = e.maxCoeff();
  Eigen::VectorXd w(T);
  double z = 0.0;
  for (int t = 0; t < T; ++t) z += std::exp(e[t] - mx);
  for (int t = 0; t < T; ++t) w[t] = std::exp(e[t] - mx) / z;
  Eigen::VectorXd ctx = Eigen::VectorXd::Zero(frames.rows());
  for (int t = 0; t < T; ++t) ctx += w[t] * frames.col(t);
  return {ctx, w};
}

}  // namespace oracle
