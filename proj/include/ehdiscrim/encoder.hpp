#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ehdiscrim/graph.hpp"
#include "ehdiscrim/model.hpp"
#include "ehdiscrim/rng.hpp"
#include "ehdiscrim/vocab.hpp"

namespace ehd {

inline constexpr double kLayerNormEps = 1e-12;

// [CLS] ids... [SEP]
inline std::vector<int> with_cls_sep(const std::vector<int32_t>& ids) {
  std::vector<int> out;
  out.reserve(ids.size() + 2);
  out.push_back(Vocab::kCls);
  for (int32_t id : ids) out.push_back(static_cast<int>(id));
  out.push_back(Vocab::kSep);
  return out;
}

struct EncodeOptions {
  bool train = false;
  Rng* dropout_rng = nullptr;                      // required when training
  const std::vector<int>* position_ids = nullptr;  // default 0..n-1
  const std::vector<int>* segment_ids = nullptr;   // default all zero
};

// Post-layer-norm Transformer encoder. Returns the [n x hidden] final states.
// The caller provides ids already wrapped in [CLS]/[SEP].
template <typename S>
typename Graph<S>::Id encode(Graph<S>& g, Model<S>& m, StackParams<S>& stack,
                             const std::vector<int>& ids,
                             const EncodeOptions& opt = {}) {
  const ModelConfig& cfg = stack.cfg;
  const size_t n = ids.size();
  if (n == 0) throw std::invalid_argument("encode: empty input");
  if (n > cfg.max_positions)
    throw std::invalid_argument("encode: sequence of " + std::to_string(n) +
                                " exceeds max positions " +
                                std::to_string(cfg.max_positions));
  const S drop = opt.train ? static_cast<S>(cfg.dropout) : S(0);
  if (drop > S(0) && !opt.dropout_rng)
    throw std::invalid_argument("encode: training without a dropout RNG");
  auto dropped = [&](typename Graph<S>::Id x) {
    return drop > S(0) ? g.dropout(x, drop, *opt.dropout_rng) : x;
  };

  std::vector<int> default_pos(n);
  for (size_t i = 0; i < n; ++i) default_pos[i] = static_cast<int>(i);
  const std::vector<int>& pos = opt.position_ids ? *opt.position_ids : default_pos;
  std::vector<int> default_seg(n, 0);
  const std::vector<int>& seg = opt.segment_ids ? *opt.segment_ids : default_seg;
  if (pos.size() != n || seg.size() != n)
    throw std::invalid_argument("encode: id/position/segment lengths disagree");

  auto x = g.add(g.add(g.embed(g.param(*m.tok_emb), ids),
                       g.embed(g.param(*m.pos_emb), pos)),
                 g.embed(g.param(*m.seg_emb), seg));
  x = g.layer_norm_rows(x, g.param(*stack.emb_ln_g), g.param(*stack.emb_ln_b),
                        static_cast<S>(kLayerNormEps));
  x = dropped(x);
  if (stack.in_proj)
    x = g.add_row(g.matmul(x, g.param(*stack.in_proj)), g.param(*stack.in_bias));

  const size_t dh = cfg.hidden / cfg.heads;
  const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (const LayerParams<S>& L : stack.layers) {
    auto q = g.add_row(g.matmul(x, g.param(*L.wq)), g.param(*L.bq));
    auto k = g.add_row(g.matmul(x, g.param(*L.wk)), g.param(*L.bk));
    auto v = g.add_row(g.matmul(x, g.param(*L.wv)), g.param(*L.bv));
    std::vector<typename Graph<S>::Id> heads;
    heads.reserve(cfg.heads);
    for (size_t h = 0; h < cfg.heads; ++h) {
      auto qs = g.slice_cols(q, h * dh, dh);
      auto ks = g.slice_cols(k, h * dh, dh);
      auto vs = g.slice_cols(v, h * dh, dh);
      auto scores = g.scale(g.matmul(qs, g.transpose(ks)), inv_sqrt_dh);
      auto probs = dropped(g.softmax_rows(scores));
      heads.push_back(g.matmul(probs, vs));
    }
    auto attn_out = dropped(g.add_row(
        g.matmul(g.concat_cols(heads), g.param(*L.wo)), g.param(*L.bo)));
    x = g.layer_norm_rows(g.add(x, attn_out), g.param(*L.ln1_g),
                          g.param(*L.ln1_b), static_cast<S>(kLayerNormEps));
    auto ffn = g.add_row(
        g.matmul(g.gelu(g.add_row(g.matmul(x, g.param(*L.w1)), g.param(*L.b1))),
                 g.param(*L.w2)),
        g.param(*L.b2));
    x = g.layer_norm_rows(g.add(x, dropped(ffn)), g.param(*L.ln2_g),
                          g.param(*L.ln2_b), static_cast<S>(kLayerNormEps));
  }
  return x;
}

// ---- output heads ----

// Vocabulary logits for the given generator states [r x gen_hidden]: project
// back to embedding width through the transposed input projection, score
// against the tied token table, add the per-token bias.
template <typename S>
typename Graph<S>::Id mlm_logits(Graph<S>& g, Model<S>& m,
                                 typename Graph<S>::Id h_rows) {
  auto at_emb = m.gen.in_proj
                    ? g.matmul(h_rows, g.transpose(g.param(*m.gen.in_proj)))
                    : h_rows;
  return g.add_row(g.matmul(at_emb, g.transpose(g.param(*m.tok_emb))),
                   g.param(*m.mlm_bias));
}

template <typename S>
typename Graph<S>::Id mlm_probs(Graph<S>& g, Model<S>& m,
                                typename Graph<S>::Id h_rows) {
  return g.softmax_rows(mlm_logits(g, m, h_rows));
}

// w'h per row, no bias: [n x 1] logits of "token is original".
template <typename S>
typename Graph<S>::Id rtd_logits(Graph<S>& g, Model<S>& m,
                                 typename Graph<S>::Id h_rows) {
  return g.matmul(h_rows, g.param(*m.rtd_w));
}

template <typename S>
inline double sigmoid(S z) {
  return 1.0 / (1.0 + std::exp(-static_cast<double>(z)));
}

// Tied-embedding scores over one candidate set: [1 x (k+1)].
template <typename S>
typename Graph<S>::Id mts_logits(Graph<S>& g, Model<S>& m,
                                 typename Graph<S>::Id h_row,
                                 const std::vector<int32_t>& candidates) {
  if (g.val(h_row).rows() != 1)
    throw std::invalid_argument("mts_logits: expected a single row");
  std::vector<int> ids(candidates.begin(), candidates.end());
  for (int id : ids)
    if (id < 0 || static_cast<size_t>(id) >= m.cfg.vocab_size)
      throw std::invalid_argument("mts_logits: candidate id out of vocab");
  return g.matmul(h_row, g.transpose(g.embed(g.param(*m.tok_emb), ids)));
}

template <typename S>
typename Graph<S>::Id mts_probs(Graph<S>& g, Model<S>& m,
                                typename Graph<S>::Id h_row,
                                const std::vector<int32_t>& candidates) {
  return g.softmax_rows(mts_logits(g, m, h_row, candidates));
}

// Unit-norm final [CLS] state, the sequence embedding for contrastive
// prediction. Row 0 is CLS by the encode convention.
template <typename S>
typename Graph<S>::Id csp_embed(Graph<S>& g, typename Graph<S>::Id h) {
  return g.l2_normalize_rows(g.gather_rows(h, {0}));
}

}  // namespace ehd
