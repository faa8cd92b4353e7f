#include "dvc/tsrm.hpp"

#include <cmath>

#include "json.hpp"

namespace dvc::tsrm {

Vector mean_pool(const VideoRecord& record, const Segment& span) {
  const auto [first, last] = clip_rows(span, record.duration, record.stride, record.num_clips());
  return record.features.middleRows(first, last - first + 1).colwise().mean().transpose();
}

Matrix pooled_matrix(const VideoRecord& record, const std::vector<Proposal>& proposals) {
  Matrix out(record.feature_dim(), static_cast<Eigen::Index>(proposals.size()));
  for (std::size_t i = 0; i < proposals.size(); ++i)
    out.col(static_cast<Eigen::Index>(i)) = mean_pool(record, proposals[i].span());
  return out;
}

Vector sinusoid(double x, int d_pos, double scale) {
  if (d_pos < 2 || d_pos % 2 != 0) throw ValidationError("sinusoid: d_pos must be even and >= 2");
  Vector out(d_pos);
  const int pairs = d_pos / 2;
  for (int k = 0; k < pairs; ++k) {
    // Wavelength grows geometrically from 1 to 1e4 across the pairs.
    const double wavelength = std::pow(10000.0, static_cast<double>(2 * k) / d_pos);
    const double a = scale * x / wavelength;
    out[2 * k] = std::sin(a);
    out[2 * k + 1] = std::cos(a);
  }
  return out;
}

PairPositionCode pair_position_code(const Segment& p_i, const Segment& p_j, int d_pos) {
  if (!p_i.valid() || !p_j.valid()) throw ValidationError("pair_position_code: zero-length proposal");
  PairPositionCode c;
  c.relative_length = std::log(p_j.length() / p_i.length());
  c.relative_distance = (p_j.center() - p_i.center()) / p_i.length();
  c.code.resize(2 * d_pos);
  c.code << sinusoid(c.relative_length, d_pos), sinusoid(c.relative_distance, d_pos);
  return c;
}

Tsrm::Tsrm(ad::ParamSet& params, const Dims& dims, const std::string& prefix) : dims_(dims) {
  if (dims.feature_dim < 1 || dims.hidden < 1 || dims.d_k < 1 || dims.d_v < 1)
    throw ValidationError("tsrm dims must be positive");
  if (dims.d_pos < 2 || dims.d_pos % 2) throw ValidationError("tsrm d_pos must be even and >= 2");
  pos_w0_ = &params.add(prefix + "pos_w0", dims.hidden, 2 * dims.d_pos);
  pos_b0_ = &params.add(prefix + "pos_b0", dims.hidden, 1);
  pos_w1_ = &params.add(prefix + "pos_w1", 1, dims.hidden);
  pos_b1_ = &params.add(prefix + "pos_b1", 1, 1);
  wq_ = &params.add(prefix + "wq", dims.d_k, dims.feature_dim);
  wk_ = &params.add(prefix + "wk", dims.d_k, dims.feature_dim);
  wv_ = &params.add(prefix + "wv", dims.d_v, dims.feature_dim);
}

ad::Mat Tsrm::pair_codes(const std::vector<Proposal>& proposals) const {
  const auto n = static_cast<Eigen::Index>(proposals.size());
  ad::Mat out(2 * dims_.d_pos, n * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      out.col(i * n + j) = pair_position_code(proposals[i].span(), proposals[j].span(), dims_.d_pos).code;
  return out;
}

ad::Var Tsrm::temporal_scores(ad::Tape& t, const std::vector<Proposal>& proposals) {
  if (proposals.empty()) throw ValidationError("temporal_scores: no proposals");
  const int n = static_cast<int>(proposals.size());
  ad::Var codes = t.constant(pair_codes(proposals));
  ad::Var hidden = ad::relu(ad::affine(t, *pos_w0_, *pos_b0_, codes));
  ad::Var flat = ad::affine(t, *pos_w1_, *pos_b1_, hidden);  // 1 x N^2
  return ad::reshape_rowmajor(flat, n, n);
}

ad::Var Tsrm::semantic_scores(ad::Tape& t, ad::Var pooled) {
  ad::Var q = ad::matmul(t.param(*wq_), pooled);
  ad::Var k = ad::matmul(t.param(*wk_), pooled);
  return ad::scale(ad::matmul(ad::transpose(q), k), 1.0 / std::sqrt(static_cast<double>(dims_.d_k)));
}

Tsrm::Encoded Tsrm::encode(ad::Tape& t, const std::vector<Proposal>& proposals, ad::Var pooled) {
  if (proposals.empty()) throw ValidationError("encode_events: no proposals");
  if (pooled.cols() != static_cast<int>(proposals.size()) || pooled.rows() != dims_.feature_dim)
    throw ValidationError("encode_events: pooled features do not match proposals");
  Encoded e;
  e.temporal = temporal_scores(t, proposals);
  e.semantic = semantic_scores(t, pooled);
  e.fused = ad::add(e.temporal, e.semantic);
  e.attention = ad::softmax_rows(e.fused);
  ad::Var values = ad::matmul(t.param(*wv_), pooled);             // d_v x N
  e.relational = ad::matmul(values, ad::transpose(e.attention));  // column i = sum_j A_ij v_j
  e.z = ad::vcat({pooled, e.relational});
  return e;
}

Matrix temporal_scores(Tsrm& enc, const std::vector<Proposal>& proposals) {
  ad::Tape t(false);
  return enc.temporal_scores(t, proposals).value();
}

Matrix semantic_scores(Tsrm& enc, const std::vector<Vector>& pooled) {
  if (pooled.empty()) throw ValidationError("semantic_scores: no vectors");
  Matrix p(pooled.front().size(), static_cast<Eigen::Index>(pooled.size()));
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    if (pooled[i].size() != p.rows()) throw ValidationError("semantic_scores: dimension mismatch");
    p.col(static_cast<Eigen::Index>(i)) = pooled[i];
  }
  ad::Tape t(false);
  return enc.semantic_scores(t, t.constant(p)).value();
}

std::pair<RelationScores, std::vector<EventFeature>> encode_events(Tsrm& enc, const VideoRecord& record,
                                                                   const std::vector<Proposal>& proposals) {
  ad::Tape t(false);
  const Matrix pooled = pooled_matrix(record, proposals);
  const auto e = enc.encode(t, proposals, t.constant(pooled));
  RelationScores rs{e.temporal.value(), e.semantic.value(), e.fused.value(), e.attention.value()};
  std::vector<EventFeature> feats;
  for (Eigen::Index i = 0; i < pooled.cols(); ++i)
    feats.push_back({pooled.col(i), e.relational.value().col(i), e.z.value().col(i)});
  return {std::move(rs), std::move(feats)};
}

std::string relation_scores_to_json(const RelationScores& scores) {
  auto rows_of = [](const Matrix& m) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<double> row(m.cols());
      for (Eigen::Index j = 0; j < m.cols(); ++j) row[j] = m(i, j);
      arr.push_back(row);
    }
    return arr;
  };
  nlohmann::json j = {{"temporal", rows_of(scores.temporal)},
                      {"semantic", rows_of(scores.semantic)},
                      {"fused", rows_of(scores.fused)},
                      {"attention", rows_of(scores.attention)}};
  return j.dump();
}

}  // namespace dvc::tsrm
