#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "mrhd/cooperate.hpp"
#include "mrhd/error.hpp"
#include "mrhd/model.hpp"
#include "mrhd/trainer.hpp"
#include "oracles.hpp"

using namespace mrhd;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(r * c);
  for (double& x : v) x = g(rng);
  return Tensor::from({r, c}, std::move(v));
}

Tensor as_leaf(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

void jitter(const NamedParams& named, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (const auto& [name, t] : named)
    for (double& v : t.node()->data) v += u(rng);
}

void fill(const Tensor& t, double value) {
  for (double& v : t.node()->data) v = value;
}

void check_grads(const std::function<Tensor()>& loss, const std::vector<Tensor>& leaves, double tol) {
  for (const Tensor& t : leaves) t.node()->grad.clear();
  loss().backward();
  std::vector<double> analytic, numeric;
  for (const Tensor& t : leaves) {
    const auto a = t.grad();
    const auto n = oracle::finite_diff([&] { return loss().item(); }, t);
    analytic.insert(analytic.end(), a.begin(), a.end());
    numeric.insert(numeric.end(), n.begin(), n.end());
  }
  CHECK(oracle::max_relative(analytic, numeric) < tol);
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  const auto x = a.to_vector(), y = b.to_vector();
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - y[i]) <= tol);
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One GRU step written out entry by entry; weights are [in x out].
std::vector<double> gru_reference(const std::vector<double>& x, const std::vector<double>& h, const GruParams& p) {
  const std::size_t din = x.size(), dh = h.size();
  auto pre = [&](const Tensor& w, const Tensor& u, const Tensor& b, const std::vector<double>& hin, std::size_t j) {
    double s = b.at(j);
    for (std::size_t i = 0; i < din; ++i) s += x[i] * w.at(i, j);
    for (std::size_t i = 0; i < dh; ++i) s += hin[i] * u.at(i, j);
    return s;
  };
  std::vector<double> r(dh), out(dh);
  for (std::size_t j = 0; j < dh; ++j) r[j] = sigm(pre(p.w_reset, p.u_reset, p.b_reset, h, j));
  std::vector<double> rh(dh);
  for (std::size_t j = 0; j < dh; ++j) rh[j] = r[j] * h[j];
  for (std::size_t j = 0; j < dh; ++j) {
    const double u = sigm(pre(p.w_update, p.u_update, p.b_update, h, j));
    const double c = std::tanh(pre(p.w_cand, p.u_cand, p.b_cand, rh, j));
    out[j] = (1.0 - u) * h[j] + u * c;
  }
  return out;
}

}  // namespace

TEST_CASE("highlight head length and constant output") {
  Rng rng(1);
  const SelfAttentionBlock block(4, 2, rng);
  Linear head(4, 1, rng);
  std::mt19937_64 data(2);
  const Tensor z = random_matrix(6, 4, data);
  CHECK(highlight_head(z, block, head).shape() == Shape{6});
  fill(head.weight, 0.0);
  fill(head.bias, 0.37);
  for (double v : highlight_head(z, block, head).to_vector()) CHECK(v == 0.37);
}

TEST_CASE("highlight head gradient to the shared block") {
  Rng rng(3);
  const SelfAttentionBlock block(4, 2, rng);
  const Linear head(4, 1, rng);
  NamedParams named;
  block.collect("shared", named);
  std::mt19937_64 data(4);
  jitter(named, data);
  const Tensor z = random_matrix(5, 4, data);
  const Tensor w = Tensor::vector({0.3, -1.1, 0.8, 0.25, -0.6});
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : named) leaves.push_back(t);
  check_grads([&] { return sum(highlight_head(z, block, head) * w); }, leaves, 1e-4);
}

TEST_CASE("hd2mr with constant and dominant scores") {
  Rng rng(5);
  const SelfAttentionBlock block(4, 2, rng);
  std::mt19937_64 data(6);
  const Tensor z = random_matrix(5, 4, data);

  SUBCASE("constant h") {
    const Tensor out = hd2mr(z, Tensor::full({5}, 2.0), block);
    check_close(out, block(scale(z, 1.0 + 1.0 / 5.0)), 1e-12);
  }
  SUBCASE("one dominant clip") {
    std::vector<double> h(5, 0.0);
    h[3] = 50.0;
    const Tensor out = hd2mr(z, Tensor::vector(h), block);
    std::vector<double> boosted = z.to_vector();
    for (std::size_t j = 0; j < 4; ++j) boosted[3 * 4 + j] *= 2.0;
    check_close(out, block(Tensor::from({5, 4}, boosted)), 1e-12);
  }
  CHECK_THROWS_AS(hd2mr(z, Tensor::zeros({4}), block), DimensionError);
}

TEST_CASE("both call sites read one parameter set") {
  ModelConfig mc;
  mc.visual_dim = 6;
  mc.text_dim = 5;
  mc.d = 8;
  mc.num_queries = 3;
  mc.decoder_layers = 1;
  mc.heads = 2;
  const Model model(mc, 7);
  std::set<std::string> names;
  std::size_t shared = 0;
  for (const auto& [name, t] : model.parameters()) {
    CHECK(names.insert(name).second);
    if (name.find("shared_attn") != std::string::npos) ++shared;
  }
  NamedParams block;
  model.cooperate.shared_attn.collect("b", block);
  CHECK(shared == block.size());

  std::mt19937_64 data(8);
  const Tensor z = random_matrix(5, 8, data);
  const Tensor h = highlight_head(z, model.cooperate.shared_attn, model.cooperate.highlight);
  const auto before_h = h.to_vector();
  const auto before = hd2mr(z, h, model.cooperate.shared_attn).to_vector();
  // Edit the block through the highlight head's reference only.
  const SelfAttentionBlock& via_head = model.cooperate.shared_attn;
  via_head.attn.v.weight.node()->data[0] += 0.5;
  CHECK(highlight_head(z, model.cooperate.shared_attn, model.cooperate.highlight).to_vector() != before_h);
  CHECK(hd2mr(z, h, model.cooperate.shared_attn).to_vector() != before);
}

TEST_CASE("decoder output contract") {
  Rng rng(9);
  const MomentDecoder dec(4, 5, 2, 2, rng);
  std::mt19937_64 data(10);
  const DecoderOutput out = moment_decoder(random_matrix(7, 4, data), dec);
  CHECK(out.spans.shape() == Shape{5, 2});
  CHECK(out.scores.shape() == Shape{5});
  const auto spans = decode_spans(out, 30.0);
  REQUIRE(spans.size() == 5);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    CHECK(spans[i].start >= 0.0);
    CHECK(spans[i].end <= 30.0);
    CHECK(spans[i].start < spans[i].end);
    CHECK(spans[i].score > 0.0);
    CHECK(spans[i].score < 1.0);
    if (i) CHECK(spans[i - 1].score >= spans[i].score);
  }
}

TEST_CASE("center and width to seconds") {
  const Span s = span_from_center_width(0.5, 0.5, 0.9, 100.0);
  CHECK(s.start == 25.0);
  CHECK(s.end == 75.0);
  const Span edge = span_from_center_width(0.95, 0.4, 0.1, 10.0);
  CHECK(edge.start == doctest::Approx(7.5));
  CHECK(edge.end == 10.0);
}

TEST_CASE("decoder queries are independent slots") {
  Rng rng(11);
  const MomentDecoder dec(4, 4, 2, 2, rng);
  std::mt19937_64 data(12);
  const Tensor keys = random_matrix(6, 4, data);
  const DecoderOutput a = moment_decoder(keys, dec);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  MomentDecoder swapped = dec;
  swapped.queries = gather(dec.queries, perm).detach();
  const DecoderOutput b = moment_decoder(keys, swapped);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(b.scores.at(k) == doctest::Approx(a.scores.at(perm[k])).epsilon(1e-13));
    CHECK(b.spans.at(k, 0) == doctest::Approx(a.spans.at(perm[k], 0)).epsilon(1e-13));
    CHECK(b.spans.at(k, 1) == doctest::Approx(a.spans.at(perm[k], 1)).epsilon(1e-13));
  }
}

TEST_CASE("decoder gradient") {
  Rng rng(13);
  const MomentDecoder dec(4, 3, 1, 2, rng);
  NamedParams named;
  dec.collect("dec", named);
  std::mt19937_64 data(14);
  jitter(named, data);
  const Tensor z_hat = as_leaf(random_matrix(5, 4, data));
  const Tensor w = random_matrix(3, 2, data);
  check_grads(
      [&] {
        const DecoderOutput out = moment_decoder(z_hat, dec);
        return sum(out.spans * w) + sum(out.scores);
      },
      {z_hat, dec.queries}, 1e-4);
}

TEST_CASE("gru step cases") {
  Rng rng(15);
  GruParams p(2, 3, rng);
  std::mt19937_64 data(16);
  NamedParams named;
  p.collect("gru", named);
  jitter(named, data);
  const std::vector<double> x = {0.4, -1.3}, h = {0.2, -0.7, 1.1};

  SUBCASE("hand step") {
    const auto got = gru_cell(Tensor::vector(x), Tensor::vector(h), p).to_vector();
    const auto want = gru_reference(x, h, p);
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(got[j] - want[j]) <= 1e-12);
  }
  SUBCASE("zero parameters and state") {
    for (const auto& [name, t] : named) fill(t, 0.0);
    for (double v : gru_cell(Tensor::vector(x), Tensor::zeros({3}), p).to_vector()) CHECK(v == 0.0);
  }
  SUBCASE("closed update gate keeps the state") {
    fill(p.b_update, -50.0);
    const auto got = gru_cell(Tensor::vector(x), Tensor::vector(h), p).to_vector();
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(got[j] - h[j]) < 1e-12);
  }
  CHECK_THROWS_AS(gru_cell(Tensor::vector({1.0}), Tensor::vector(h), p), DimensionError);
}

TEST_CASE("span to clip range") {
  CHECK(span_clip_range({3.0, 9.0, 0.5}, 2.0, 10) == std::pair<std::size_t, std::size_t>{1, 5});
  CHECK(span_clip_range({4.0, 4.0, 0.5}, 2.0, 10) == std::pair<std::size_t, std::size_t>{2, 3});
  CHECK(span_clip_range({0.0, 20.0, 0.5}, 2.0, 10) == std::pair<std::size_t, std::size_t>{0, 10});
  CHECK(span_clip_range({19.5, 25.0, 0.5}, 2.0, 10) == std::pair<std::size_t, std::size_t>{9, 10});
  CHECK_THROWS_AS(span_clip_range({0.0, 1.0, 0.5}, 2.0, 0), ContractError);
  CHECK_THROWS_AS(span_clip_range({std::nan(""), 1.0, 0.5}, 2.0, 4), ContractError);
}

TEST_CASE("one-clip moment is one GRU step") {
  Rng rng(17);
  const GruParams p(4, 4, rng);
  std::mt19937_64 data(18);
  const Tensor v = random_matrix(5, 4, data);
  const Tensor summary = moment_summary(v, {2, 3}, p);
  const auto step = gru_reference(slice(v, 0, 2, 3).to_vector(), std::vector<double>(4, 0.0), p);
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(summary.at(j) - step[j]) <= 1e-12);
  CHECK_THROWS_AS(moment_summary(v, {3, 3}, p), ContractError);
}

TEST_CASE("clips parallel to the moment summary have unit similarity") {
  Rng rng(19);
  const GruParams p(3, 3, rng);
  std::mt19937_64 data(20);
  Tensor v = random_matrix(4, 3, data);
  const Tensor summary = moment_summary(v, {0, 1}, p);
  // Overwrite clip 3 with a multiple of the summary; clip 0 feeds the GRU and stays put.
  for (std::size_t j = 0; j < 3; ++j) v.mutable_data()[3 * 3 + j] = 2.5 * summary.at(j);
  const Tensor cos = cosine_matrix(v, reshape(moment_summary(v, {0, 1}, p), {1, 3}));
  // exactly 1 up to the 1e-8 offset on both norms
  const double n = std::sqrt(sum(summary * summary).item());
  const double expect = (2.5 * n * n) / ((2.5 * n + 1e-8) * (n + 1e-8));
  CHECK(std::abs(cos.at(3, 0) - expect) <= 1e-12);
  CHECK(std::abs(cos.at(3, 0) - 1.0) < 1e-6);
}

TEST_CASE("mr2hd length and reweighting") {
  Rng rng(21);
  const GruParams p(4, 4, rng);
  const Linear head(4, 1, rng);
  std::mt19937_64 data(22);
  const Tensor v = random_matrix(6, 4, data), z = random_matrix(6, 4, data), zh = random_matrix(6, 4, data);
  for (auto range : {std::pair<std::size_t, std::size_t>{0, 1}, {1, 4}, {0, 6}, {5, 6}}) {
    const Tensor out = mr2hd(v, z, zh, range, p, head);
    CHECK(out.shape() == Shape{6});
    const Tensor s_ref = reshape(cosine_matrix(v, reshape(moment_summary(v, range, p), {1, 4})), {6});
    const Tensor weights = softmax(s_ref, 0);
    CHECK(std::abs(sum(weights).item() - 1.0) <= 1e-12);
    check_close(out, reshape(head(z + scale_rows(zh, weights)), {6}), 1e-14);
  }
}

TEST_CASE("mr2hd gradient back to the clip features") {
  Rng rng(23);
  const GruParams p(3, 3, rng);
  const Linear head(3, 1, rng);
  std::mt19937_64 data(24);
  const Tensor v = as_leaf(random_matrix(5, 3, data));
  const Tensor z = as_leaf(random_matrix(5, 3, data)), zh = as_leaf(random_matrix(5, 3, data));
  const Tensor w = Tensor::vector({0.5, -0.2, 1.3, 0.7, -0.9});
  check_grads([&] { return sum(mr2hd(v, z, zh, {1, 4}, p, head) * w); }, {v, z, zh}, 1e-4);
}

TEST_CASE("a single seeded sample is localized after 200 steps") {
  SynthConfig sc;
  sc.num_samples = 1;
  sc.num_clips = 16;
  sc.noise = 0.1;
  const Dataset ds = synth_generate(sc, 0);
  TrainConfig c;
  c.seed = 0;
  c.batch_size = 1;
  c.max_steps = 200;
  c.epochs = 200;
  c.learning_rate = 5e-3;
  c.d = 32;
  c.num_queries = 5;
  c.decoder_layers = 1;
  c.heads = 2;
  const TrainResult r = train(ds, c);
  const auto preds = predict(r.model, ds);
  const auto& gt = ds.examples[0].sample.relevant_windows[0];
  const Span& top = preds[0].spans.front();
  CHECK(oracle::iou(top.start, top.end, gt.first, gt.second) >= 0.9);
}
