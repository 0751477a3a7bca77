#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "ehdiscrim/graph.hpp"

namespace ehd {

// All four pre-training losses are built as graph nodes so one backward pass
// covers everything. Token-level losses are per-sequence sums; batch code
// divides by the number of sequence-views it aggregated.

// Sum of -log p(target) over rows of vocabulary logits at masked positions.
template <typename S>
typename Graph<S>::Id loss_mlm(Graph<S>& g, typename Graph<S>::Id logits_rows,
                               const std::vector<int>& originals) {
  if (originals.empty())
    throw std::invalid_argument("loss_mlm: no masked positions");
  return g.cross_entropy_rows(logits_rows, originals);
}

// Binary cross-entropy over every real token position; label 1 = the token
// survived corruption, 0 = it was replaced. Logits in, for stability.
template <typename S>
typename Graph<S>::Id loss_rtd(Graph<S>& g, typename Graph<S>::Id logits_col,
                               const std::vector<uint8_t>& replaced_flags) {
  std::vector<int> labels(replaced_flags.size());
  for (size_t i = 0; i < replaced_flags.size(); ++i)
    labels[i] = replaced_flags[i] ? 0 : 1;
  return g.bce_logits(logits_col, labels);
}

// Sum of -log p(original | candidates) over replaced positions. Rows are
// candidate-score logits with the original token in column 0; an empty set
// contributes zero.
template <typename S>
typename Graph<S>::Id loss_mts(Graph<S>& g,
                               std::optional<typename Graph<S>::Id> logit_rows) {
  if (!logit_rows) return g.input(Tensor<S>::scalar(S(0)), "mts_empty");
  const size_t r = g.val(*logit_rows).rows();
  return g.cross_entropy_rows(*logit_rows, std::vector<int>(r, 0));
}

// InfoNCE over 2B unit-norm sequence embeddings, rows 2b and 2b+1 being the
// two corrupted views of sequence b. Every anchor scores the other 2B-1 rows
// (itself excluded by an additive mask); the positive is its partner view.
// Mean over the 2B anchors.
template <typename S>
typename Graph<S>::Id loss_csp(Graph<S>& g, typename Graph<S>::Id embeds,
                               S tau) {
  if (tau <= S(0)) throw std::invalid_argument("loss_csp: tau must be positive");
  const Tensor<S>& e = g.val(embeds);
  const size_t n = e.rows();
  if (n < 2 || n % 2 != 0)
    throw std::invalid_argument("loss_csp: need an even number (>= 2) of views");
  auto sim = g.scale(g.matmul(embeds, g.transpose(embeds)), S(1) / tau);
  Tensor<S> mask = Tensor<S>::zeros({n, n});
  for (size_t i = 0; i < n; ++i) mask.at(i, i) = S(-1e9);
  std::vector<int> partner(n);
  for (size_t i = 0; i < n; ++i) partner[i] = static_cast<int>(i ^ 1);
  auto ce = g.cross_entropy_rows(g.add(sim, g.input(std::move(mask), "diag_mask")),
                                 partner);
  return g.scale(ce, S(1) / static_cast<S>(n));
}

struct LossWeights {
  double lambda1 = 50.0;  // replaced-token detection
  double lambda2 = 20.0;  // multi-token selection
  double lambda3 = 1.0;   // contrastive sequence prediction
};

// L = L_MLM + l1*L_RTD + l2*L_MTS + l3*L_CSP. Absent optional parts are
// dropped from the sum entirely (ablations), not zero-weighted.
template <typename S>
typename Graph<S>::Id combined_step_loss(
    Graph<S>& g, typename Graph<S>::Id mlm, typename Graph<S>::Id rtd,
    std::optional<typename Graph<S>::Id> mts,
    std::optional<typename Graph<S>::Id> csp, const LossWeights& w) {
  if (w.lambda1 < 0 || w.lambda2 < 0 || w.lambda3 < 0)
    throw std::invalid_argument("combined_step_loss: negative loss weight");
  std::vector<std::pair<S, typename Graph<S>::Id>> terms;
  terms.push_back({S(1), mlm});
  terms.push_back({static_cast<S>(w.lambda1), rtd});
  if (mts) terms.push_back({static_cast<S>(w.lambda2), *mts});
  if (csp) terms.push_back({static_cast<S>(w.lambda3), *csp});
  return g.weighted_sum(terms);
}

}  // namespace ehd
