#pragma once

// Task cooperation between highlight detection and moment retrieval.
//
// The highlight head and the highlight-aware re-encoding run the SAME
// self-attention block; CooperateParams owns exactly one instance of it.

#include <utility>
#include <vector>

#include "mrhd/nn.hpp"
#include "mrhd/prediction.hpp"
#include "mrhd/tensor.hpp"

namespace mrhd {

struct DecoderLayer {
  LayerNorm norm1;
  MultiHeadAttention cross;
  LayerNorm norm2;
  FeedForward ff;

  DecoderLayer() = default;
  DecoderLayer(std::size_t d, std::size_t heads, Rng& rng);
  void collect(const std::string& prefix, NamedParams& out) const;
};

// Learnable queries cross-attending over clip features, then direct
// (center, width) regression and a foreground score per query.
struct MomentDecoder {
  Tensor queries;  // [M x d]
  std::vector<DecoderLayer> layers;
  LayerNorm out_norm;
  Linear span_head;   // d -> 2
  Linear class_head;  // d -> 1

  MomentDecoder() = default;
  MomentDecoder(std::size_t d, std::size_t num_queries, std::size_t num_layers, std::size_t heads,
                Rng& rng);
  std::size_t num_queries() const { return queries.dim(0); }
  void collect(const std::string& prefix, NamedParams& out) const;
};

// Single-layer GRU; update u, reset r, candidate c.
struct GruParams {
  Tensor w_update, u_update, b_update;
  Tensor w_reset, u_reset, b_reset;
  Tensor w_cand, u_cand, b_cand;

  GruParams() = default;
  GruParams(std::size_t input, std::size_t hidden, Rng& rng);
  std::size_t hidden_size() const { return u_update.dim(0); }
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct CooperateParams {
  SelfAttentionBlock shared_attn;
  Linear highlight;  // d -> 1
  MomentDecoder decoder;
  GruParams gru;
  Linear refined_highlight;  // d -> 1

  CooperateParams() = default;
  CooperateParams(std::size_t d, std::size_t num_queries, std::size_t decoder_layers,
                  std::size_t heads, Rng& rng);
  void collect(const std::string& prefix, NamedParams& out) const;
};

// h = Linear(SelfAttention(z)), one score per clip.
Tensor highlight_head(const Tensor& z, const SelfAttentionBlock& shared, const Linear& head);

// z_hat = SelfAttention(z + softmax(h) (row-scaled) z).
Tensor hd2mr(const Tensor& z, const Tensor& h, const SelfAttentionBlock& shared);

struct DecoderOutput {
  Tensor spans;   // [M x 2] normalized (center, width), each in (0, 1)
  Tensor scores;  // [M] foreground probabilities
};

DecoderOutput moment_decoder(const Tensor& z_hat, const MomentDecoder& decoder);

// Converts normalized (center, width) rows to clamped second spans sorted by
// score, highest first.
std::vector<Span> decode_spans(const DecoderOutput& out, double duration);
Span span_from_center_width(double center, double width, double score, double duration);

// One GRU step. x: [d_in], hidden: [d_h].
Tensor gru_cell(const Tensor& x, const Tensor& hidden, const GruParams& params);

// Half-open clip index range covering a span, at least one clip long.
std::pair<std::size_t, std::size_t> span_clip_range(const Span& span, double clip_len,
                                                    std::size_t num_clips);

// Final GRU state over rows [range.first, range.second) of v_hat.
Tensor moment_summary(const Tensor& v_hat, std::pair<std::size_t, std::size_t> range,
                      const GruParams& gru);

// h_bar = Linear(z + softmax(cos(summary, v_hat_i)) (row-scaled) z_hat).
Tensor mr2hd(const Tensor& v_hat, const Tensor& z, const Tensor& z_hat,
             std::pair<std::size_t, std::size_t> range, const GruParams& gru, const Linear& head);

}  // namespace mrhd
