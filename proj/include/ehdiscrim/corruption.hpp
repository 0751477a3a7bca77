#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ehdiscrim/rng.hpp"
#include "ehdiscrim/vocab.hpp"

namespace ehd {

// Whole words chosen for corruption. `positions` is the sorted union of the
// chosen words' piece indices; gen_probs rows elsewhere in this module are
// aligned with that order.
struct MaskPlan {
  std::vector<std::pair<size_t, size_t>> words;  // [begin, end) piece ranges
  std::vector<size_t> positions;
};

enum class MaskAction { Mask, Random, Keep };

// Words sampled without replacement until the masked-token count first
// reaches rate*n (or words run out). Fresh plan per call = dynamic masking.
inline MaskPlan select_mask_positions(const TokenSequence& seq, double rate,
                                      Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("select_mask_positions: rate out of [0,1)");
  if (seq.size() != seq.word_start.size())
    throw std::invalid_argument("select_mask_positions: flags missing");
  std::vector<std::pair<size_t, size_t>> words;
  for (size_t i = 0; i < seq.size();) {
    size_t j = i + 1;
    while (j < seq.size() && !seq.word_start[j]) ++j;
    words.push_back({i, j});
    i = j;
  }
  std::vector<size_t> order(words.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  const double target = rate * static_cast<double>(seq.size());
  MaskPlan plan;
  size_t covered = 0;
  for (size_t wi : order) {
    if (static_cast<double>(covered) >= target) break;
    plan.words.push_back(words[wi]);
    covered += words[wi].second - words[wi].first;
  }
  for (const auto& [b, e] : plan.words)
    for (size_t t = b; t < e; ++t) plan.positions.push_back(t);
  std::sort(plan.positions.begin(), plan.positions.end());
  return plan;
}

struct MaskedResult {
  TokenSequence x;                  // x^M
  std::vector<MaskAction> actions;  // parallel to plan.words
};

// One action per chosen word: mask -> every piece becomes [MASK], random ->
// each piece independently becomes a uniform non-special token, keep ->
// unchanged. Probabilities default to 80/10/10.
inline MaskedResult build_masked_sequence(const TokenSequence& seq,
                                          const MaskPlan& plan,
                                          size_t vocab_size, Rng& rng,
                                          double p_mask = 0.8,
                                          double p_random = 0.1) {
  if (vocab_size <= Vocab::kNumSpecials)
    throw std::invalid_argument("build_masked_sequence: vocab too small");
  if (p_mask < 0 || p_random < 0 || p_mask + p_random > 1.0)
    throw std::invalid_argument("build_masked_sequence: bad action probabilities");
  MaskedResult out{seq, {}};
  out.actions.reserve(plan.words.size());
  const size_t real = vocab_size - Vocab::kNumSpecials;
  for (const auto& [b, e] : plan.words) {
    const double u = rng.uniform01();
    MaskAction a = u < p_mask               ? MaskAction::Mask
                   : u < p_mask + p_random ? MaskAction::Random
                                           : MaskAction::Keep;
    out.actions.push_back(a);
    for (size_t t = b; t < e; ++t) {
      if (a == MaskAction::Mask)
        out.x.ids[t] = Vocab::kMask;
      else if (a == MaskAction::Random)
        out.x.ids[t] = static_cast<int32_t>(Vocab::kNumSpecials +
                                            rng.uniform_int(real));
    }
  }
  return out;
}

template <typename S>
inline void check_distribution(std::span<const S> probs) {
  double sum = 0.0;
  for (S p : probs) {
    if (!(p >= S(0)))
      throw std::invalid_argument("corruption: negative probability");
    sum += static_cast<double>(p);
  }
  if (std::abs(sum - 1.0) > 1e-5)
    throw std::invalid_argument("corruption: distribution sums to " +
                                std::to_string(sum));
}

struct ReplacementResult {
  TokenSequence x;                     // x^R
  std::vector<uint8_t> replaced_flags;  // per position, x^R_t != x_t
};

// x-hat sampled from the generator's distribution at EVERY planned position
// (mask, random, and keep actions alike); the flag records whether the draw
// differs from the original token.
template <typename S>
inline ReplacementResult sample_replacements(
    const std::vector<std::vector<S>>& gen_probs, const MaskPlan& plan,
    const TokenSequence& original, Rng& rng) {
  if (gen_probs.size() != plan.positions.size())
    throw std::invalid_argument("sample_replacements: probs/plan mismatch");
  ReplacementResult out{original, std::vector<uint8_t>(original.size(), 0)};
  for (size_t i = 0; i < plan.positions.size(); ++i) {
    const size_t t = plan.positions[i];
    check_distribution<S>(gen_probs[i]);
    const auto sampled = static_cast<int32_t>(
        rng.categorical(std::span<const S>(gen_probs[i])));
    out.x.ids[t] = sampled;
    out.replaced_flags[t] = sampled != original.ids[t] ? 1 : 0;
  }
  return out;
}

// S_t per planned position: the original token first, then k distinct
// non-original tokens drawn without replacement from the generator's
// distribution restricted to V minus the original (renormalizing each draw).
template <typename S>
inline std::vector<std::vector<int32_t>> build_candidate_sets(
    const std::vector<std::vector<S>>& gen_probs, const MaskPlan& plan,
    const TokenSequence& original, size_t k, Rng& rng) {
  if (gen_probs.size() != plan.positions.size())
    throw std::invalid_argument("build_candidate_sets: probs/plan mismatch");
  std::vector<std::vector<int32_t>> sets;
  sets.reserve(plan.positions.size());
  for (size_t i = 0; i < plan.positions.size(); ++i) {
    const size_t t = plan.positions[i];
    const size_t v = gen_probs[i].size();
    if (v < k + 1)
      throw std::invalid_argument("build_candidate_sets: vocab smaller than k+1");
    std::vector<double> rest(gen_probs[i].begin(), gen_probs[i].end());
    const auto orig = static_cast<size_t>(original.ids[t]);
    if (orig >= v)
      throw std::invalid_argument("build_candidate_sets: original id out of range");
    rest[orig] = 0.0;
    std::vector<int32_t> s{original.ids[t]};
    for (size_t d = 0; d < k; ++d) {
      double mass = 0.0;
      for (double p : rest) mass += p;
      if (!(mass > 0.0))
        throw std::invalid_argument(
            "build_candidate_sets: distribution has no mass off the original");
      const size_t drawn = rng.categorical(std::span<const double>(rest));
      s.push_back(static_cast<int32_t>(drawn));
      rest[drawn] = 0.0;
    }
    sets.push_back(std::move(s));
  }
  return sets;
}

struct CorruptionView {
  MaskPlan plan;
  std::vector<MaskAction> actions;
  TokenSequence x_masked;
  TokenSequence x_replaced;
  std::vector<uint8_t> replaced_flags;
  std::vector<std::vector<int32_t>> candidates;  // aligned with plan.positions
};

struct CorruptionPair {
  CorruptionView view_i, view_j;
};

// Generator callback: given x^M and the planned positions, return one
// distribution over V per position (same order).
template <typename S>
using GeneratorFn = std::function<std::vector<std::vector<S>>(
    const TokenSequence&, const std::vector<size_t>&)>;

template <typename S>
inline CorruptionView corrupt_once(const TokenSequence& seq,
                                   const GeneratorFn<S>& gen, size_t vocab_size,
                                   size_t k, double rate, Rng& rng,
                                   double p_mask = 0.8, double p_random = 0.1) {
  CorruptionView v;
  v.plan = select_mask_positions(seq, rate, rng);
  MaskedResult m = build_masked_sequence(seq, v.plan, vocab_size, rng, p_mask,
                                         p_random);
  v.actions = std::move(m.actions);
  v.x_masked = std::move(m.x);
  const std::vector<std::vector<S>> probs = gen(v.x_masked, v.plan.positions);
  ReplacementResult r = sample_replacements<S>(probs, v.plan, seq, rng);
  v.x_replaced = std::move(r.x);
  v.replaced_flags = std::move(r.replaced_flags);
  v.candidates = build_candidate_sets<S>(probs, v.plan, seq, k, rng);
  return v;
}

// Two independently drawn corruptions of the same original (the contrastive
// pair). The two RNGs carry the independence; passing equal streams is the
// determinism check, not an error.
template <typename S>
inline CorruptionPair make_contrastive_pair(const TokenSequence& seq,
                                            const GeneratorFn<S>& gen,
                                            size_t vocab_size, size_t k,
                                            double rate, Rng& rng_i, Rng& rng_j,
                                            double p_mask = 0.8,
                                            double p_random = 0.1) {
  return CorruptionPair{
      corrupt_once<S>(seq, gen, vocab_size, k, rate, rng_i, p_mask, p_random),
      corrupt_once<S>(seq, gen, vocab_size, k, rate, rng_j, p_mask, p_random)};
}

}  // namespace ehd
