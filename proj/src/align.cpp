#include "mrhd/align.hpp"

#include <algorithm>

#include "mrhd/error.hpp"

namespace mrhd {

AlignParams::AlignParams(std::size_t visual_dim, std::size_t text_dim, std::size_t d, Rng& rng)
    : visual_mlp(visual_dim, d, rng), text_mlp(text_dim, d, rng) {}

void AlignParams::collect(const std::string& prefix, NamedParams& out) const {
  visual_mlp.collect(prefix + ".visual_mlp", out);
  text_mlp.collect(prefix + ".text_mlp", out);
}

ProjectedFeatures project(const Tensor& visual, const Tensor& text, const AlignParams& params) {
  if (visual.rank() != 2 || visual.dim(1) != params.visual_mlp.l0.in_features())
    throw DimensionError("project: visual features " + shape_str(visual.shape()) +
                         " do not match projection input width " +
                         std::to_string(params.visual_mlp.l0.in_features()));
  if (text.rank() != 2 || text.dim(1) != params.text_mlp.l0.in_features())
    throw DimensionError("project: text features " + shape_str(text.shape()) +
                         " do not match projection input width " +
                         std::to_string(params.text_mlp.l0.in_features()));
  return {params.visual_mlp(visual), params.text_mlp(text)};
}

ProjectedFeatures project(const FeatureBundle& bundle, const AlignParams& params) {
  return project(bundle.effective_visual(), bundle.text, params);
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  auto unit_rows = [](const Tensor& x) {
    // The inner offset keeps d sqrt finite on all-zero rows.
    const Tensor norms = add_scalar(sqrt(add_scalar(sum(x * x, 1), 1e-24)), 1e-8);
    return scale_rows(x, div(Tensor::full(norms.shape(), 1.0), norms));
  };
  return matmul(unit_rows(a), transpose(unit_rows(b)));
}

LocalSimilarity local_similarity(const ProjectedFeatures& p) {
  LocalSimilarity out;
  out.s_loc = sigmoid(cosine_matrix(p.v_hat, p.t_hat));
  out.s_hat = mean(out.s_loc, 1);
  return out;
}

Tensor binary_cross_entropy(const Tensor& probs, const std::vector<double>& targets) {
  if (targets.size() != probs.numel())
    throw DimensionError("binary_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + shape_str(probs.shape()));
  const Tensor p = clamp(probs, 1e-12, 1.0 - 1e-12);
  const Tensor c = Tensor::from(probs.shape(), targets);
  std::vector<double> complement(targets.size());
  std::transform(targets.begin(), targets.end(), complement.begin(),
                 [](double t) { return 1.0 - t; });
  const Tensor not_c = Tensor::from(probs.shape(), std::move(complement));
  return neg(c * log(p) + not_c * log(add_scalar(neg(p), 1.0)));
}

Tensor local_loss(const Tensor& s_hat, const std::vector<int>& labels) {
  return sum(binary_cross_entropy(s_hat, std::vector<double>(labels.begin(), labels.end())));
}

Tensor global_loss(const Tensor& v_globals, const Tensor& t_globals, double temperature) {
  if (v_globals.rank() != 2 || v_globals.shape() != t_globals.shape() || v_globals.dim(0) == 0)
    throw DimensionError("global_loss: mismatched batch features " +
                         shape_str(v_globals.shape()) + " vs " + shape_str(t_globals.shape()));
  if (!(temperature > 0.0)) throw ConfigError("global_loss: temperature must be positive");
  const std::size_t B = v_globals.dim(0);
  const Tensor logits = scale(matmul(v_globals, transpose(t_globals)), 1.0 / temperature);
  const auto lv = logits.data();
  const double shift = *std::max_element(lv.begin(), lv.end());
  const Tensor log_norm = add_scalar(log(sum(exp(add_scalar(logits, -shift)))), shift);
  const Tensor diag = sum(logits * Tensor::identity(B), 1);
  return log_norm - mean(diag);
}

}  // namespace mrhd
