#include "mrhd/model.hpp"

#include "mrhd/error.hpp"

namespace mrhd {

Model::Model(const ModelConfig& c, std::uint64_t seed) : config(c) {
  if (c.visual_dim == 0 || c.text_dim == 0) throw ConfigError("model input dims must be > 0");
  if (c.d == 0) throw ConfigError("hidden size d must be > 0");
  if (c.heads == 0 || c.d % c.heads != 0)
    throw ConfigError("d = " + std::to_string(c.d) + " not divisible by heads = " +
                      std::to_string(c.heads));
  Rng rng(seed);
  align = AlignParams(c.visual_dim, c.text_dim, c.d, rng);
  refine = RefineParams(c.d, rng);
  cooperate = CooperateParams(c.d, c.num_queries, c.decoder_layers, c.heads, rng);
}

NamedParams Model::parameters() const {
  NamedParams out;
  align.collect("align", out);
  refine.collect("refine", out);
  cooperate.collect("cooperate", out);
  return out;
}

ForwardResult forward(const Model& model, const Example& example, const ForwardOptions& options) {
  const QuerySample& sample = example.sample;
  const std::size_t L = sample.num_clips();
  if (example.features.visual.dim(0) != L)
    throw DimensionError("qid " + std::to_string(sample.qid) + ": " +
                         std::to_string(example.features.visual.dim(0)) + " clip rows, expected " +
                         std::to_string(L));
  ForwardResult r;
  r.projected = project(example.features, model.align);
  r.local = local_similarity(r.projected);
  r.joint = refine(r.projected, model.refine, model.config.raw_eq11);

  const SelfAttentionBlock& live = model.cooperate.shared_attn;
  const SelfAttentionBlock frozen =
      options.shared == SharedPath::kBoth ? SelfAttentionBlock{} : live.detached();
  const SelfAttentionBlock& at_highlight =
      options.shared == SharedPath::kHd2mrOnly ? frozen : live;
  const SelfAttentionBlock& at_hd2mr =
      options.shared == SharedPath::kHighlightOnly ? frozen : live;

  r.h = highlight_head(r.joint.z, at_highlight, model.cooperate.highlight);
  r.z_hat = hd2mr(r.joint.z, r.h, at_hd2mr);
  r.decoder = moment_decoder(r.z_hat, model.cooperate.decoder);

  r.prediction.qid = sample.qid;
  r.prediction.spans = decode_spans(r.decoder, sample.duration);
  r.moment_range = span_clip_range(r.prediction.spans.front(), sample.clip_len, L);
  r.h_bar = mr2hd(r.projected.v_hat, r.joint.z, r.z_hat, r.moment_range, model.cooperate.gru,
                  model.cooperate.refined_highlight);
  r.prediction.highlight = r.h_bar.to_vector();
  return r;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

LossTerms batch_loss(const Model& model, const std::vector<const Example*>& batch,
                     const LossSettings& settings, std::uint64_t pair_seed,
                     const ForwardOptions& options) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  LossTerms t;
  std::vector<Tensor> moms, highs, locals, v_globals, t_globals;
  for (const Example* ex : batch) {
    const ForwardResult r = forward(model, *ex, options);
    moms.push_back(moment_loss(r.decoder, normalized_windows(ex->sample), settings.weights).loss);
    const SaliencyPairs pairs =
        saliency_pairs(ex->sample, settings.max_saliency_pairs,
                       mix_seed(pair_seed, static_cast<std::uint64_t>(ex->sample.qid)),
                       settings.saliency_min_gap);
    highs.push_back(
        scale(saliency_loss(r.h, r.h_bar, pairs, settings.saliency_margin), settings.weights.saliency));
    locals.push_back(local_loss(r.local.s_hat, clip_labels(ex->sample)));
    t.predictions.push_back(r.prediction);
    const std::size_t d = r.projected.v_hat.dim(1);
    v_globals.push_back(reshape(mean(r.projected.v_hat, 0), {1, d}));
    t_globals.push_back(reshape(mean(r.projected.t_hat, 0), {1, d}));
  }
  auto batch_mean = [](const std::vector<Tensor>& parts) {
    Tensor acc = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) acc = acc + parts[i];
    return scale(acc, 1.0 / static_cast<double>(parts.size()));
  };
  t.mom = batch_mean(moms);
  t.high = batch_mean(highs);
  t.local = batch_mean(locals);
  t.global = global_loss(concat(v_globals, 0), concat(t_globals, 0), settings.temperature);
  t.total = total_loss(t.mom, t.high, t.local, t.global, settings.lambda_lg);
  t.breakdown = {t.mom.item(),  t.high.item(),  t.local.item(),
                 t.global.item(), t.total.item(), settings.lambda_lg};
  return t;
}

std::pair<MomentPrediction, LossBreakdown> forward_train(const Model& model, const Example& example,
                                                         const LossSettings& settings,
                                                         std::uint64_t pair_seed) {
  const LossTerms t = batch_loss(model, {&example}, settings, pair_seed);
  return {t.predictions.front(), t.breakdown};
}

}  // namespace mrhd
