#include "mrhd/nn.hpp"

#include <cmath>

#include "mrhd/error.hpp"

namespace mrhd {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(w), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(xavier(in, out, rng)), bias(Tensor::zeros({out}, true)) {}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in_features()) {
    throw DimensionError("linear expects [* x " + std::to_string(in_features()) + "], got " +
                         shape_str(x.shape()));
  }
  return add_rowvec(matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Linear Linear::detached() const {
  Linear copy;
  copy.weight = weight.detach();
  copy.bias = bias.detach();
  return copy;
}

LayerNorm::LayerNorm(std::size_t d)
    : gain(Tensor::full({d}, 1.0, true)), bias(Tensor::zeros({d}, true)) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

void LayerNorm::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

LayerNorm LayerNorm::detached() const {
  LayerNorm copy;
  copy.gain = gain.detach();
  copy.bias = bias.detach();
  return copy;
}

Mlp3::Mlp3(std::size_t in, std::size_t d, Rng& rng)
    : l0(in, d, rng), l1(d, d, rng), l2(d, d, rng), norm(d) {}

Tensor Mlp3::operator()(const Tensor& x) const { return norm(l2(relu(l1(relu(l0(x)))))); }

void Mlp3::collect(const std::string& prefix, NamedParams& out) const {
  l0.collect(prefix + ".l0", out);
  l1.collect(prefix + ".l1", out);
  l2.collect(prefix + ".l2", out);
  norm.collect(prefix + ".norm", out);
}

FeedForward::FeedForward(std::size_t d, std::size_t hidden, Rng& rng)
    : up(d, hidden, rng), down(hidden, d, rng) {}

Tensor FeedForward::operator()(const Tensor& x) const { return down(relu(up(x))); }

void FeedForward::collect(const std::string& prefix, NamedParams& out) const {
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
}

FeedForward FeedForward::detached() const {
  FeedForward copy;
  copy.up = up.detached();
  copy.down = down.detached();
  return copy;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return matmul(softmax(scale(matmul(q, transpose(k)), scale_factor), 1), v);
}

MultiHeadAttention::MultiHeadAttention(std::size_t d, std::size_t heads_, Rng& rng)
    : q(d, d, rng), k(d, d, rng), v(d, d, rng), o(d, d, rng), heads(heads_) {
  if (heads == 0 || d % heads != 0)
    throw ConfigError("hidden size " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key,
                                      const Tensor& value) const {
  const Tensor qp = q(query), kp = k(key), vp = v(value);
  const std::size_t d = qp.dim(1);
  const std::size_t dh = d / heads;
  if (heads == 1) return o(attention(qp, kp, vp));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(attention(slice(qp, 1, h * dh, (h + 1) * dh), slice(kp, 1, h * dh, (h + 1) * dh),
                             slice(vp, 1, h * dh, (h + 1) * dh)));
  }
  return o(concat(outs, 1));
}

void MultiHeadAttention::collect(const std::string& prefix, NamedParams& out) const {
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
  o.collect(prefix + ".o", out);
}

MultiHeadAttention MultiHeadAttention::detached() const {
  MultiHeadAttention copy;
  copy.q = q.detached();
  copy.k = k.detached();
  copy.v = v.detached();
  copy.o = o.detached();
  copy.heads = heads;
  return copy;
}

SelfAttentionBlock::SelfAttentionBlock(std::size_t d, std::size_t heads, Rng& rng)
    : norm1(d), attn(d, heads, rng), norm2(d), ff(d, 2 * d, rng) {}

Tensor SelfAttentionBlock::operator()(const Tensor& x) const {
  const Tensor n1 = norm1(x);
  const Tensor x1 = x + attn(n1, n1, n1);
  return x1 + ff(norm2(x1));
}

void SelfAttentionBlock::collect(const std::string& prefix, NamedParams& out) const {
  norm1.collect(prefix + ".norm1", out);
  attn.collect(prefix + ".attn", out);
  norm2.collect(prefix + ".norm2", out);
  ff.collect(prefix + ".ff", out);
}

SelfAttentionBlock SelfAttentionBlock::detached() const {
  SelfAttentionBlock copy;
  copy.norm1 = norm1.detached();
  copy.attn = attn.detached();
  copy.norm2 = norm2.detached();
  copy.ff = ff.detached();
  return copy;
}

Tensor sinusoidal_positions(std::size_t rows, std::size_t d) {
  std::vector<double> pe(rows * d);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(i) * freq;
      pe[i * d + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({rows, d}, std::move(pe));
}

}  // namespace mrhd
