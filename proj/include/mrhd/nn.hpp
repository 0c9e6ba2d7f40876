#pragma once

// Parameterized building blocks shared by the model stages.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mrhd/tensor.hpp"

namespace mrhd {

// Ordered (path, tensor) pairs. Paths are stable across runs.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

using Rng = std::mt19937_64;

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;  // x: [rows x in]
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void collect(const std::string& prefix, NamedParams& out) const;
  Linear detached() const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  LayerNorm detached() const;
};

// Three linear layers with ReLU between them, layer-normed output.
struct Mlp3 {
  Linear l0, l1, l2;
  LayerNorm norm;

  Mlp3() = default;
  Mlp3(std::size_t in, std::size_t d, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

// Position-wise two-layer ReLU network.
struct FeedForward {
  Linear up, down;

  FeedForward() = default;
  FeedForward(std::size_t d, std::size_t hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  FeedForward detached() const;
};

// Scaled dot-product attention split over `heads` column groups.
struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d, std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  MultiHeadAttention detached() const;
};

// softmax(q k^T / sqrt(d_k)) v for a single head.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Pre-norm transformer encoder block: x + MHA(LN(x)), then + FF(LN(.)).
struct SelfAttentionBlock {
  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  FeedForward ff;

  SelfAttentionBlock() = default;
  SelfAttentionBlock(std::size_t d, std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  // Copy whose parameters are fresh leaves outside autodiff.
  SelfAttentionBlock detached() const;
};

// Fixed sinusoidal encodings [rows x d].
Tensor sinusoidal_positions(std::size_t rows, std::size_t d);

}  // namespace mrhd
