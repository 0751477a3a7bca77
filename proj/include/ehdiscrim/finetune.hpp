#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ehdiscrim/encoder.hpp"
#include "ehdiscrim/heads.hpp"
#include "ehdiscrim/metrics.hpp"
#include "ehdiscrim/optimizer.hpp"
#include "ehdiscrim/rng.hpp"

namespace ehd {

struct FinetuneConfig {
  size_t epochs = 4;
  size_t batch_size = 16;
  double peak_lr = 1e-4;
  double warmup_ratio = 0.1;  // fraction of total steps spent ramping up
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double ema_decay = 0.9999;
  uint64_t seed = 7;
  size_t max_len = 128;  // packing budget for template builders

  void validate() const {
    if (epochs == 0 || batch_size == 0)
      throw std::invalid_argument("FinetuneConfig: zero epochs or batch");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0)
      throw std::invalid_argument("FinetuneConfig: warmup_ratio outside [0,1)");
    if (peak_lr <= 0.0) throw std::invalid_argument("FinetuneConfig: lr <= 0");
    if (max_len < 8) throw std::invalid_argument("FinetuneConfig: max_len < 8");
  }

  OptimConfig optim(size_t total_steps) const {
    OptimConfig o;
    o.peak_lr = peak_lr;
    o.max_steps = total_steps;
    o.warmup_steps = static_cast<size_t>(
        std::ceil(warmup_ratio * static_cast<double>(total_steps)));
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.eps = adam_eps;
    o.weight_decay = weight_decay;
    return o;
  }
};

struct TaggingExample {
  std::vector<int32_t> ids;  // raw token ids, no [CLS]/[SEP]
  std::vector<EntitySpan> spans;
};

struct ClassifyExample {
  PackedInput input;  // already wrapped in [CLS]/[SEP]
  int label = 0;
};

struct ChoiceExample {
  std::vector<PackedInput> options;
  size_t correct = 0;
};

namespace detail {

// Epoch-scoped drivers; every stream is a pure function of (seed, counter) so
// runs replay exactly.
inline Rng shuffle_rng(uint64_t seed, size_t epoch) {
  return Rng(hash_seed(seed, 0xf17eull, epoch));
}
inline Rng dropout_rng(uint64_t seed, size_t step) {
  return Rng(hash_seed(seed, 0xd0f1ull, step));
}

inline std::vector<size_t> shuffled_order(size_t n, Rng& rng) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

// Discriminator stack + shared tables + head parameters.
template <typename S>
std::vector<Parameter<S>*> tuned_params(Model<S>& model,
                                        std::vector<Parameter<S>*> head) {
  std::vector<Parameter<S>*> out = model.shared_params();
  for (auto* p : model.discriminator_exclusive()) out.push_back(p);
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

}  // namespace detail

// Generic mini-batch loop: `batch_loss` builds the summed loss for a batch of
// example indices in a fresh graph; `evaluate` scores the dev set. Evaluation
// runs under the EMA shadow weights. Returns the final dev score.
template <typename S, typename BatchLoss, typename Evaluate>
double finetune_loop(Model<S>& model, std::vector<Parameter<S>*> head_params,
                     size_t train_size, const FinetuneConfig& cfg,
                     BatchLoss batch_loss, Evaluate evaluate) {
  cfg.validate();
  if (train_size == 0) throw std::invalid_argument("finetune: no examples");
  auto params = detail::tuned_params(model, std::move(head_params));
  const size_t batches_per_epoch =
      (train_size + cfg.batch_size - 1) / cfg.batch_size;
  const size_t total_steps = cfg.epochs * batches_per_epoch;
  const OptimConfig ocfg = cfg.optim(total_steps);
  Adam<S> opt(params);
  Ema<S> ema(params, cfg.ema_decay);

  size_t step = 0;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng srng = detail::shuffle_rng(cfg.seed, epoch);
    const auto order = detail::shuffled_order(train_size, srng);
    for (size_t b = 0; b < batches_per_epoch; ++b) {
      std::vector<size_t> batch;
      for (size_t k = b * cfg.batch_size;
           k < std::min((b + 1) * cfg.batch_size, train_size); ++k)
        batch.push_back(order[k]);
      Rng drng = detail::dropout_rng(cfg.seed, step);
      Graph<S> g;
      auto loss = batch_loss(g, batch, drng);
      for (auto* p : params) p->zero_grad();
      g.backward(g.scale(loss, S(1) / static_cast<S>(batch.size())));
      ++step;
      opt.step(lr_at(step, ocfg), ocfg);
      ema.update();
    }
  }
  ema.swap_in();
  const double score = evaluate();
  ema.swap_in();
  return score;
}

// ---- task runners -------------------------------------------------------------

template <typename S>
std::vector<EntitySpan> tagger_predict(Model<S>& model, TaggerHead<S>& head,
                                       const TagScheme& scheme,
                                       const std::vector<int32_t>& ids) {
  Graph<S> g;
  auto h = encode(g, model, model.disc, with_cls_sep(ids));
  std::vector<int> keep(ids.size());
  std::iota(keep.begin(), keep.end(), 1);  // drop [CLS]/[SEP] rows
  auto tokens = g.gather_rows(h, keep);
  Tensor<S> la = g.val(g.add_row(g.matmul(tokens, g.param(head.wa)),
                                 g.param(head.ba)));
  Tensor<S> lb = g.val(g.add_row(g.matmul(tokens, g.param(head.wb)),
                                 g.param(head.bb)));
  return bioes_decode(argmax_rows(la), argmax_rows(lb), scheme);
}

template <typename S>
double finetune_tagger(Model<S>& model, TaggerHead<S>& head,
                       const TagScheme& scheme,
                       const std::vector<TaggingExample>& train,
                       const std::vector<TaggingExample>& dev,
                       const FinetuneConfig& cfg) {
  auto batch_loss = [&](Graph<S>& g, const std::vector<size_t>& batch,
                        Rng& drng) {
    std::vector<std::pair<S, typename Graph<S>::Id>> terms;
    for (size_t idx : batch) {
      const TaggingExample& ex = train[idx];
      EncodeOptions opt;
      opt.train = true;
      opt.dropout_rng = &drng;
      auto h = encode(g, model, model.disc, with_cls_sep(ex.ids), opt);
      std::vector<int> keep(ex.ids.size());
      std::iota(keep.begin(), keep.end(), 1);
      terms.push_back({S(1), bioes_forward_loss(g, head, g.gather_rows(h, keep),
                                                ex.spans, scheme)});
    }
    return g.weighted_sum(terms);
  };
  auto evaluate = [&]() {
    std::vector<std::vector<EntitySpan>> pred, gold;
    for (const TaggingExample& ex : dev) {
      pred.push_back(tagger_predict(model, head, scheme, ex.ids));
      gold.push_back(ex.spans);
    }
    return micro_f1(pred, gold);
  };
  return finetune_loop(model, head.params(), train.size(), cfg, batch_loss,
                       evaluate);
}

struct RelationExample {
  std::vector<int32_t> ids;  // raw token ids, no [CLS]/[SEP]
  std::vector<EntitySpan> spans;
  std::vector<RelationTriple> triples;  // start-token positions
};

template <typename S>
MhsDecodeResult mhs_predict(Model<S>& model, MhsHead<S>& head,
                            const RelationSchema& schema,
                            const std::vector<int32_t>& ids,
                            double threshold = 0.5) {
  Graph<S> g;
  auto h_all = encode(g, model, model.disc, with_cls_sep(ids));
  std::vector<int> keep(ids.size());
  std::iota(keep.begin(), keep.end(), 1);
  auto h = g.gather_rows(h_all, keep);
  auto sig = [](const Tensor<S>& z) {
    Tensor<double> p = Tensor<double>::zeros(z.shape);
    for (size_t i = 0; i < z.numel(); ++i)
      p.data[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(z.data[i])));
    return p;
  };
  MhsDecodeInput in;
  in.start_probs = sig(g.val(
      g.add_row(g.matmul(h, g.param(head.w_start)), g.param(head.b_start))));
  in.end_probs = sig(g.val(
      g.add_row(g.matmul(h, g.param(head.w_end)), g.param(head.b_end))));
  for (size_t r = 0; r < head.num_relations; ++r) {
    Tensor<S> z = g.val(mhs_scores(g, head, h, r));  // copy: graph keeps growing
    in.mhs_probs.push_back(sig(z));
  }
  return mhs_decode(in, threshold, schema);
}

template <typename S>
double finetune_mhs(Model<S>& model, MhsHead<S>& head,
                    const RelationSchema& schema,
                    const std::vector<RelationExample>& train,
                    const std::vector<RelationExample>& dev,
                    const FinetuneConfig& cfg, double threshold = 0.5) {
  auto batch_loss = [&](Graph<S>& g, const std::vector<size_t>& batch,
                        Rng& drng) {
    std::vector<std::pair<S, typename Graph<S>::Id>> terms;
    for (size_t idx : batch) {
      const RelationExample& ex = train[idx];
      EncodeOptions opt;
      opt.train = true;
      opt.dropout_rng = &drng;
      auto h = encode(g, model, model.disc, with_cls_sep(ex.ids), opt);
      std::vector<int> keep(ex.ids.size());
      std::iota(keep.begin(), keep.end(), 1);
      terms.push_back(
          {S(1), mhs_forward_loss(g, head, g.gather_rows(h, keep), ex.spans,
                                  ex.triples, schema)});
    }
    return g.weighted_sum(terms);
  };
  auto evaluate = [&]() {
    std::vector<std::vector<RelationTriple>> pred, gold;
    for (const RelationExample& ex : dev) {
      pred.push_back(
          mhs_predict(model, head, schema, ex.ids, threshold).triples);
      gold.push_back(ex.triples);
    }
    return micro_f1(pred, gold);
  };
  return finetune_loop(model, head.params(), train.size(), cfg, batch_loss,
                       evaluate);
}

template <typename S>
int classify_predict(Model<S>& model, ClassifierHead<S>& head,
                     const PackedInput& in) {
  Graph<S> g;
  EncodeOptions opt;
  opt.segment_ids = &in.segments;
  auto h = encode(g, model, model.disc, in.ids, opt);
  const Tensor<S>& p = g.val(classify_probs(g, head, g.gather_rows(h, {0})));
  size_t best = 0;
  for (size_t c = 1; c < p.cols(); ++c)
    if (p.at(0, c) > p.at(0, best)) best = c;
  return static_cast<int>(best);
}

template <typename S>
double finetune_classifier(Model<S>& model, ClassifierHead<S>& head,
                           const std::vector<ClassifyExample>& train,
                           const std::vector<ClassifyExample>& dev,
                           const FinetuneConfig& cfg) {
  auto batch_loss = [&](Graph<S>& g, const std::vector<size_t>& batch,
                        Rng& drng) {
    std::vector<std::pair<S, typename Graph<S>::Id>> terms;
    for (size_t idx : batch) {
      const ClassifyExample& ex = train[idx];
      EncodeOptions opt;
      opt.train = true;
      opt.dropout_rng = &drng;
      opt.segment_ids = &ex.input.segments;
      auto h = encode(g, model, model.disc, ex.input.ids, opt);
      auto logits = classify_logits(g, head, g.gather_rows(h, {0}));
      terms.push_back({S(1), g.cross_entropy_rows(logits, {ex.label})});
    }
    return g.weighted_sum(terms);
  };
  auto evaluate = [&]() {
    std::vector<int> pred, gold;
    for (const ClassifyExample& ex : dev) {
      pred.push_back(classify_predict(model, head, ex.input));
      gold.push_back(ex.label);
    }
    return accuracy(pred, gold);
  };
  return finetune_loop(model, head.params(), train.size(), cfg, batch_loss,
                       evaluate);
}

// Each option scores an independent binary probability from its CLS state;
// prediction is the highest-probability option, ties to the lowest index.
template <typename S>
size_t choice_predict(Model<S>& model, ClassifierHead<S>& head,
                      const ChoiceExample& ex) {
  size_t best = 0;
  double best_p = -1.0;
  for (size_t i = 0; i < ex.options.size(); ++i) {
    Graph<S> g;
    EncodeOptions opt;
    opt.segment_ids = &ex.options[i].segments;
    auto h = encode(g, model, model.disc, ex.options[i].ids, opt);
    auto z = classify_logits(g, head, g.gather_rows(h, {0}));
    const double p =
        1.0 / (1.0 + std::exp(-static_cast<double>(g.val(z).data[0])));
    if (p > best_p) {
      best_p = p;
      best = i;
    }
  }
  return best;
}

template <typename S>
double finetune_choice(Model<S>& model, ClassifierHead<S>& head,
                       const std::vector<ChoiceExample>& train,
                       const std::vector<ChoiceExample>& dev,
                       const FinetuneConfig& cfg) {
  for (const auto& ex : train)
    if (ex.options.empty() || ex.correct >= ex.options.size())
      throw std::invalid_argument("finetune_choice: bad example");
  auto batch_loss = [&](Graph<S>& g, const std::vector<size_t>& batch,
                        Rng& drng) {
    std::vector<std::pair<S, typename Graph<S>::Id>> terms;
    for (size_t idx : batch) {
      const ChoiceExample& ex = train[idx];
      for (size_t i = 0; i < ex.options.size(); ++i) {
        EncodeOptions opt;
        opt.train = true;
        opt.dropout_rng = &drng;
        opt.segment_ids = &ex.options[i].segments;
        auto h = encode(g, model, model.disc, ex.options[i].ids, opt);
        auto z = classify_logits(g, head, g.gather_rows(h, {0}));
        terms.push_back({S(1), g.bce_logits(z, {i == ex.correct ? 1 : 0})});
      }
    }
    return g.weighted_sum(terms);
  };
  auto evaluate = [&]() {
    size_t hit = 0;
    for (const ChoiceExample& ex : dev)
      if (choice_predict(model, head, ex) == ex.correct) ++hit;
    return static_cast<double>(hit) / static_cast<double>(dev.size());
  };
  return finetune_loop(model, head.params(), train.size(), cfg, batch_loss,
                       evaluate);
}

}  // namespace ehd
