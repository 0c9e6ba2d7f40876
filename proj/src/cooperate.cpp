#include "mrhd/cooperate.hpp"

#include <algorithm>
#include <cmath>

#include "mrhd/align.hpp"
#include "mrhd/error.hpp"

namespace mrhd {

DecoderLayer::DecoderLayer(std::size_t d, std::size_t heads, Rng& rng)
    : norm1(d), cross(d, heads, rng), norm2(d), ff(d, 2 * d, rng) {}

void DecoderLayer::collect(const std::string& prefix, NamedParams& out) const {
  norm1.collect(prefix + ".norm1", out);
  cross.collect(prefix + ".cross", out);
  norm2.collect(prefix + ".norm2", out);
  ff.collect(prefix + ".ff", out);
}

MomentDecoder::MomentDecoder(std::size_t d, std::size_t num_queries, std::size_t num_layers,
                             std::size_t heads, Rng& rng)
    : out_norm(d), span_head(d, 2, rng), class_head(d, 1, rng) {
  if (num_queries == 0) throw ConfigError("decoder needs at least one query");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> q(num_queries * d);
  for (double& v : q) v = gauss(rng);
  queries = Tensor::from({num_queries, d}, std::move(q), true);
  for (std::size_t i = 0; i < num_layers; ++i) layers.emplace_back(d, heads, rng);
}

void MomentDecoder::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".queries", queries);
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(prefix + ".layers." + std::to_string(i), out);
  out_norm.collect(prefix + ".out_norm", out);
  span_head.collect(prefix + ".span_head", out);
  class_head.collect(prefix + ".class_head", out);
}

GruParams::GruParams(std::size_t input, std::size_t hidden, Rng& rng)
    : w_update(xavier(input, hidden, rng)),
      u_update(xavier(hidden, hidden, rng)),
      b_update(Tensor::zeros({hidden}, true)),
      w_reset(xavier(input, hidden, rng)),
      u_reset(xavier(hidden, hidden, rng)),
      b_reset(Tensor::zeros({hidden}, true)),
      w_cand(xavier(input, hidden, rng)),
      u_cand(xavier(hidden, hidden, rng)),
      b_cand(Tensor::zeros({hidden}, true)) {}

void GruParams::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".w_update", w_update);
  out.emplace_back(prefix + ".u_update", u_update);
  out.emplace_back(prefix + ".b_update", b_update);
  out.emplace_back(prefix + ".w_reset", w_reset);
  out.emplace_back(prefix + ".u_reset", u_reset);
  out.emplace_back(prefix + ".b_reset", b_reset);
  out.emplace_back(prefix + ".w_cand", w_cand);
  out.emplace_back(prefix + ".u_cand", u_cand);
  out.emplace_back(prefix + ".b_cand", b_cand);
}

CooperateParams::CooperateParams(std::size_t d, std::size_t num_queries,
                                 std::size_t decoder_layers, std::size_t heads, Rng& rng)
    : shared_attn(d, heads, rng),
      highlight(d, 1, rng),
      decoder(d, num_queries, decoder_layers, heads, rng),
      gru(d, d, rng),
      refined_highlight(d, 1, rng) {}

void CooperateParams::collect(const std::string& prefix, NamedParams& out) const {
  shared_attn.collect(prefix + ".shared_attn", out);
  highlight.collect(prefix + ".highlight", out);
  decoder.collect(prefix + ".decoder", out);
  gru.collect(prefix + ".gru", out);
  refined_highlight.collect(prefix + ".refined_highlight", out);
}

Tensor highlight_head(const Tensor& z, const SelfAttentionBlock& shared, const Linear& head) {
  return reshape(head(shared(z)), {z.dim(0)});
}

Tensor hd2mr(const Tensor& z, const Tensor& h, const SelfAttentionBlock& shared) {
  if (h.shape() != Shape{z.dim(0)})
    throw DimensionError("hd2mr: highlight scores " + shape_str(h.shape()) + " for features " +
                         shape_str(z.shape()));
  const Tensor z_bar = scale_rows(z, softmax(h, 0));
  return shared(z + z_bar);
}

DecoderOutput moment_decoder(const Tensor& z_hat, const MomentDecoder& decoder) {
  const Tensor keys = z_hat + sinusoidal_positions(z_hat.dim(0), z_hat.dim(1));
  Tensor tgt = decoder.queries;
  for (const auto& layer : decoder.layers) {
    tgt = tgt + layer.cross(layer.norm1(tgt), keys, z_hat);
    tgt = tgt + layer.ff(layer.norm2(tgt));
  }
  const Tensor hidden = decoder.out_norm(tgt);
  DecoderOutput out;
  out.spans = sigmoid(decoder.span_head(hidden));
  out.scores = reshape(sigmoid(decoder.class_head(hidden)), {decoder.num_queries()});
  return out;
}

Span span_from_center_width(double center, double width, double score, double duration) {
  Span s;
  s.start = std::clamp((center - 0.5 * width) * duration, 0.0, duration);
  s.end = std::clamp((center + 0.5 * width) * duration, 0.0, duration);
  s.score = score;
  return s;
}

std::vector<Span> decode_spans(const DecoderOutput& out, double duration) {
  const std::size_t M = out.scores.numel();
  std::vector<Span> spans;
  spans.reserve(M);
  for (std::size_t i = 0; i < M; ++i)
    spans.push_back(span_from_center_width(out.spans.at(i, 0), out.spans.at(i, 1),
                                           out.scores.at(i), duration));
  std::stable_sort(spans.begin(), spans.end(),
                   [](const Span& a, const Span& b) { return a.score > b.score; });
  return spans;
}

Tensor gru_cell(const Tensor& x, const Tensor& hidden, const GruParams& p) {
  const std::size_t dh = p.hidden_size();
  if (x.rank() != 1 || x.dim(0) != p.w_update.dim(0))
    throw DimensionError("gru_cell: input " + shape_str(x.shape()) + " vs width " +
                         std::to_string(p.w_update.dim(0)));
  if (hidden.shape() != Shape{dh})
    throw DimensionError("gru_cell: hidden " + shape_str(hidden.shape()) + " vs size " +
                         std::to_string(dh));
  const Tensor xr = reshape(x, {1, x.dim(0)});
  const Tensor hr = reshape(hidden, {1, dh});
  auto gate = [&](const Tensor& w, const Tensor& u, const Tensor& b, const Tensor& h_in) {
    return add_rowvec(matmul(xr, w) + matmul(h_in, u), b);
  };
  const Tensor update = sigmoid(gate(p.w_update, p.u_update, p.b_update, hr));
  const Tensor reset = sigmoid(gate(p.w_reset, p.u_reset, p.b_reset, hr));
  const Tensor cand = tanh(gate(p.w_cand, p.u_cand, p.b_cand, reset * hr));
  const Tensor keep = add_scalar(neg(update), 1.0);
  return reshape(keep * hr + update * cand, {dh});
}

std::pair<std::size_t, std::size_t> span_clip_range(const Span& span, double clip_len,
                                                    std::size_t num_clips) {
  if (num_clips == 0 || !(clip_len > 0.0)) throw ContractError("span_clip_range: empty video");
  const double duration = clip_len * static_cast<double>(num_clips);
  const double start = std::clamp(span.start, 0.0, duration);
  const double end = std::clamp(span.end, 0.0, duration);
  if (!std::isfinite(start) || !std::isfinite(end) || end < start)
    throw ContractError("span_clip_range: span outside video after clamping");
  auto first = static_cast<std::size_t>(std::floor(start / clip_len));
  auto last = static_cast<std::size_t>(std::ceil(end / clip_len));
  first = std::min(first, num_clips - 1);
  last = std::clamp(last, first + 1, num_clips);
  return {first, last};
}

Tensor moment_summary(const Tensor& v_hat, std::pair<std::size_t, std::size_t> range,
                      const GruParams& gru) {
  if (range.first >= range.second || range.second > v_hat.dim(0))
    throw ContractError("moment range [" + std::to_string(range.first) + ", " +
                        std::to_string(range.second) + ") invalid for " +
                        std::to_string(v_hat.dim(0)) + " clips");
  const Tensor moment = slice(v_hat, 0, range.first, range.second);
  Tensor hidden = Tensor::zeros({gru.hidden_size()});
  for (std::size_t i = 0; i < moment.dim(0); ++i)
    hidden = gru_cell(reshape(slice(moment, 0, i, i + 1), {moment.dim(1)}), hidden, gru);
  return hidden;
}

Tensor mr2hd(const Tensor& v_hat, const Tensor& z, const Tensor& z_hat,
             std::pair<std::size_t, std::size_t> range, const GruParams& gru, const Linear& head) {
  const Tensor summary = moment_summary(v_hat, range, gru);
  const std::size_t L = v_hat.dim(0);
  const Tensor s_ref = reshape(cosine_matrix(v_hat, reshape(summary, {1, summary.dim(0)})), {L});
  return reshape(head(z + scale_rows(z_hat, softmax(s_ref, 0))), {L});
}

}  // namespace mrhd
