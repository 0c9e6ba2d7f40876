#include "mrhd/refine.hpp"

#include <cmath>

#include "mrhd/error.hpp"

namespace mrhd {

RefineParams::RefineParams(std::size_t d, Rng& rng)
    : sim_visual(d, d, rng),
      sim_text(d, d, rng),
      fuse(5 * d, d, rng),
      query(d, d, rng),
      key(d, d, rng),
      value(d, d, rng),
      fusion_norm(d) {}

void RefineParams::collect(const std::string& prefix, NamedParams& out) const {
  sim_visual.collect(prefix + ".sim_visual", out);
  sim_text.collect(prefix + ".sim_text", out);
  fuse.collect(prefix + ".fuse", out);
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  fusion_norm.collect(prefix + ".fusion_norm", out);
}

CrossSimilarity cross_similarity(const ProjectedFeatures& p, const RefineParams& params) {
  const double d = static_cast<double>(p.v_hat.dim(1));
  CrossSimilarity cs;
  cs.a = scale(matmul(params.sim_visual(p.v_hat), transpose(params.sim_text(p.t_hat))),
               1.0 / std::sqrt(d));
  cs.a_row = softmax(cs.a, 1);
  cs.a_col = softmax(cs.a, 0);
  return cs;
}

AttendedFeatures bidirectional_attend(const CrossSimilarity& cs, const ProjectedFeatures& p) {
  AttendedFeatures out;
  out.v2q = matmul(cs.a_row, p.t_hat);
  out.q2v = matmul(matmul(cs.a_row, transpose(cs.a_col)), p.v_hat);
  return out;
}

Tensor fuse(const ProjectedFeatures& p, const AttendedFeatures& att, const RefineParams& params) {
  const std::size_t L = p.v_hat.dim(0);
  const Tensor text_global = broadcast_rows(mean(p.t_hat, 0), L);
  const Tensor cat =
      concat({p.v_hat, att.v2q, p.v_hat * att.v2q, p.v_hat * att.q2v, text_global}, 1);
  return params.fuse(cat);
}

JointFeatures cross_attention_fusion(const Tensor& refined, const Tensor& t_hat,
                                     const RefineParams& params, bool raw) {
  const Tensor q = params.query(refined);
  const Tensor k = params.key(t_hat);
  const Tensor v = params.value(t_hat);
  JointFeatures out;
  out.attention = softmax(
      scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.dim(1)))), 1);
  const Tensor attended = matmul(out.attention, v);
  out.z = raw ? attended : params.fusion_norm(attended + refined);
  return out;
}

ProjectedFeatures with_positions(const ProjectedFeatures& p) {
  return {p.v_hat + sinusoidal_positions(p.v_hat.dim(0), p.v_hat.dim(1)), p.t_hat};
}

JointFeatures refine(const ProjectedFeatures& p, const RefineParams& params, bool raw) {
  const ProjectedFeatures positioned = with_positions(p);
  const CrossSimilarity cs = cross_similarity(positioned, params);
  const AttendedFeatures att = bidirectional_attend(cs, positioned);
  return cross_attention_fusion(fuse(positioned, att, params), p.t_hat, params, raw);
}

}  // namespace mrhd
