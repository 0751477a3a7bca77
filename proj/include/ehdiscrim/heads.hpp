#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ehdiscrim/encoder.hpp"
#include "ehdiscrim/graph.hpp"
#include "ehdiscrim/model.hpp"
#include "ehdiscrim/rng.hpp"
#include "ehdiscrim/unicode.hpp"
#include "ehdiscrim/vocab.hpp"

namespace ehd {

// ---- entity tagging -------------------------------------------------------

// Two tagging streams: stream A covers only the symptom type (5 labels:
// O,B,I,E,S); stream B covers the remaining types (1 + 4 per type). Symptom
// spans may overlap other-type spans because the streams are disjoint.
struct TagScheme {
  std::vector<std::string> other_types;

  static TagScheme standard() {
    return {{"disease", "drug", "procedure", "equipment", "department",
             "microbe", "item", "body"}};
  }
  size_t a_labels() const { return 5; }
  size_t b_labels() const { return 1 + 4 * other_types.size(); }
  int other_index(const std::string& t) const {
    for (size_t i = 0; i < other_types.size(); ++i)
      if (other_types[i] == t) return static_cast<int>(i);
    return -1;
  }
  std::vector<std::string> all_types() const {
    std::vector<std::string> out = {"symptom"};
    out.insert(out.end(), other_types.begin(), other_types.end());
    return out;
  }
};

struct EntitySpan {
  size_t start = 0;
  size_t end = 0;  // inclusive
  std::string type;

  bool operator==(const EntitySpan& o) const {
    return start == o.start && end == o.end && type == o.type;
  }
  bool operator<(const EntitySpan& o) const {
    return std::tie(start, end, type) < std::tie(o.start, o.end, o.type);
  }
};

namespace detail {

enum BioesKind { kO = 0, kB = 1, kI = 2, kE = 3, kS = 4 };

inline void place_span(std::vector<int>& labels, size_t start, size_t end,
                       int base) {
  for (size_t t = start; t <= end; ++t)
    if (labels[t] != 0)
      throw std::invalid_argument("bioes: overlapping spans within one stream");
  if (start == end) {
    labels[start] = base + kS - 1;
    return;
  }
  labels[start] = base + kB - 1;
  for (size_t t = start + 1; t < end; ++t) labels[t] = base + kI - 1;
  labels[end] = base + kE - 1;
}

}  // namespace detail

// Stream A labels: 0=O, 1=B, 2=I, 3=E, 4=S (symptom only).
inline std::vector<int> bioes_encode_symptom(const std::vector<EntitySpan>& spans,
                                             size_t n) {
  std::vector<int> labels(n, 0);
  for (const EntitySpan& s : spans) {
    if (s.type != "symptom") continue;
    if (s.start > s.end || s.end >= n)
      throw std::invalid_argument("bioes: span out of range");
    detail::place_span(labels, s.start, s.end, 1);
  }
  return labels;
}

// Stream B labels: 0=O, then per type base 1+4*i with B,I,E,S offsets.
inline std::vector<int> bioes_encode_other(const std::vector<EntitySpan>& spans,
                                           size_t n, const TagScheme& scheme) {
  std::vector<int> labels(n, 0);
  for (const EntitySpan& s : spans) {
    if (s.type == "symptom") continue;
    const int ti = scheme.other_index(s.type);
    if (ti < 0) throw std::invalid_argument("bioes: unknown type " + s.type);
    if (s.start > s.end || s.end >= n)
      throw std::invalid_argument("bioes: span out of range");
    detail::place_span(labels, s.start, s.end, 1 + 4 * ti);
  }
  return labels;
}

namespace detail {

// Extract B..E / S segments for one stream; malformed transitions are
// skipped rather than guessed at. kind_of(label) -> (kind, type index).
template <typename KindOf>
void decode_stream(const std::vector<int>& labels, KindOf kind_of,
                   const std::vector<std::string>& type_names,
                   std::vector<EntitySpan>& out) {
  const size_t n = labels.size();
  size_t i = 0;
  while (i < n) {
    auto [kind, ti] = kind_of(labels[i]);
    if (kind == kS) {
      out.push_back({i, i, type_names[static_cast<size_t>(ti)]});
      ++i;
      continue;
    }
    if (kind != kB) {
      ++i;  // O, stray I, stray E
      continue;
    }
    size_t j = i + 1;
    while (j < n) {
      auto [k2, t2] = kind_of(labels[j]);
      if (k2 == kI && t2 == ti) {
        ++j;
        continue;
      }
      break;
    }
    if (j < n) {
      auto [k2, t2] = kind_of(labels[j]);
      if (k2 == kE && t2 == ti) {
        out.push_back({i, j, type_names[static_cast<size_t>(ti)]});
        i = j + 1;
        continue;
      }
    }
    ++i;  // B without a matching E
  }
}

}  // namespace detail

inline std::vector<EntitySpan> bioes_decode(const std::vector<int>& labels_a,
                                            const std::vector<int>& labels_b,
                                            const TagScheme& scheme) {
  if (labels_a.size() != labels_b.size())
    throw std::invalid_argument("bioes_decode: stream lengths differ");
  std::vector<EntitySpan> out;
  detail::decode_stream(
      labels_a,
      [](int l) { return std::pair<int, int>(l == 0 ? 0 : (l - 1) % 4 + 1, 0); },
      {"symptom"}, out);
  detail::decode_stream(
      labels_b,
      [](int l) {
        return l == 0 ? std::pair<int, int>(0, 0)
                      : std::pair<int, int>((l - 1) % 4 + 1, (l - 1) / 4);
      },
      scheme.other_types, out);
  std::sort(out.begin(), out.end());
  return out;
}

template <typename S>
struct TaggerHead {
  Parameter<S> wa, ba, wb, bb;

  TaggerHead(size_t hidden, const TagScheme& scheme, Rng& rng)
      : wa("head.tag.wa", Tensor<S>::zeros({hidden, scheme.a_labels()}), true, true),
        ba("head.tag.ba", Tensor<S>::zeros({scheme.a_labels()}), true, false),
        wb("head.tag.wb", Tensor<S>::zeros({hidden, scheme.b_labels()}), true, true),
        bb("head.tag.bb", Tensor<S>::zeros({scheme.b_labels()}), true, false) {
    for (auto& v : wa.value.data) v = static_cast<S>(rng.normal() * 0.02);
    for (auto& v : wb.value.data) v = static_cast<S>(rng.normal() * 0.02);
  }
  std::vector<Parameter<S>*> params() { return {&wa, &ba, &wb, &bb}; }
};

// Mean per-token cross-entropy of the two streams, weighted 1:1. h holds the
// n real-token states (specials already excluded).
template <typename S>
typename Graph<S>::Id bioes_forward_loss(Graph<S>& g, TaggerHead<S>& head,
                                         typename Graph<S>::Id h,
                                         const std::vector<EntitySpan>& gold,
                                         const TagScheme& scheme) {
  const size_t n = g.val(h).rows();
  auto la = bioes_encode_symptom(gold, n);
  auto lb = bioes_encode_other(gold, n, scheme);
  auto ca = g.cross_entropy_rows(
      g.add_row(g.matmul(h, g.param(head.wa)), g.param(head.ba)), la);
  auto cb = g.cross_entropy_rows(
      g.add_row(g.matmul(h, g.param(head.wb)), g.param(head.bb)), lb);
  return g.weighted_sum({{S(0.5) / static_cast<S>(n), ca},
                         {S(0.5) / static_cast<S>(n), cb}});
}

// Greedy argmax tags for decoding.
template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& t) {
  std::vector<int> out(t.rows());
  for (size_t r = 0; r < t.rows(); ++r) {
    size_t best = 0;
    for (size_t c = 1; c < t.cols(); ++c)
      if (t.at(r, c) > t.at(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

// ---- joint entity & relation extraction ------------------------------------

struct RelationTriple {
  size_t subject = 0;  // start token of the subject entity
  size_t object = 0;   // start token of the object entity
  int relation = 0;

  bool operator==(const RelationTriple& o) const {
    return subject == o.subject && object == o.object && relation == o.relation;
  }
  bool operator<(const RelationTriple& o) const {
    return std::tie(subject, object, relation) <
           std::tie(o.subject, o.object, o.relation);
  }
};

// Relation inventory with subject/object entity types per relation id.
struct RelationSchema {
  std::vector<std::string> types;
  std::vector<std::pair<int, int>> relations;  // (subject type, object type)

  int type_index(const std::string& t) const {
    for (size_t i = 0; i < types.size(); ++i)
      if (types[i] == t) return static_cast<int>(i);
    return -1;
  }
  void validate() const {
    if (types.empty() || relations.empty())
      throw std::invalid_argument("RelationSchema: empty inventory");
    for (auto [s, o] : relations)
      if (s < 0 || o < 0 || static_cast<size_t>(s) >= types.size() ||
          static_cast<size_t>(o) >= types.size())
        throw std::invalid_argument("RelationSchema: type index out of range");
  }
};

template <typename S>
struct MhsHead {
  size_t hidden, num_types, num_relations;
  Parameter<S> w_start, b_start, w_end, b_end;
  std::vector<Parameter<S>> bilinear;  // per relation, [H x H]
  Parameter<S> linear;                 // [R x 2H]
  Parameter<S> bias;                   // [R]

  MhsHead(size_t hidden_, const RelationSchema& schema, Rng& rng)
      : hidden(hidden_),
        num_types(schema.types.size()),
        num_relations(schema.relations.size()),
        w_start("head.mhs.w_start", Tensor<S>::zeros({hidden_, num_types}), true, true),
        b_start("head.mhs.b_start", Tensor<S>::zeros({num_types}), true, false),
        w_end("head.mhs.w_end", Tensor<S>::zeros({hidden_, num_types}), true, true),
        b_end("head.mhs.b_end", Tensor<S>::zeros({num_types}), true, false),
        linear("head.mhs.linear", Tensor<S>::zeros({num_relations, 2 * hidden_}), true, true),
        bias("head.mhs.bias", Tensor<S>::zeros({num_relations, 1}), true, false) {
    auto init = [&rng](Tensor<S>& t) {
      for (auto& v : t.data) v = static_cast<S>(rng.normal() * 0.02);
    };
    init(w_start.value);
    init(w_end.value);
    init(linear.value);
    bilinear.reserve(num_relations);
    for (size_t r = 0; r < num_relations; ++r) {
      bilinear.emplace_back("head.mhs.bilinear" + std::to_string(r),
                            Tensor<S>::zeros({hidden_, hidden_}), true, true);
      init(bilinear.back().value);
    }
  }
  std::vector<Parameter<S>*> params() {
    std::vector<Parameter<S>*> out = {&w_start, &b_start, &w_end, &b_end,
                                      &linear, &bias};
    for (auto& u : bilinear) out.push_back(&u);
    return out;
  }
};

// Biaffine scores for relation r over all (i, j) pairs:
//   h_i' U_r h_j + u_r' [h_i; h_j] + b_r
template <typename S>
typename Graph<S>::Id mhs_scores(Graph<S>& g, MhsHead<S>& head,
                                 typename Graph<S>::Id h, size_t r) {
  const size_t n = g.val(h).rows();
  auto ur = g.gather_rows(g.param(head.linear), {static_cast<int>(r)});
  auto u_head = g.slice_cols(ur, 0, head.hidden);
  auto u_tail = g.slice_cols(ur, head.hidden, head.hidden);
  auto base = g.matmul(g.matmul(h, g.param(head.bilinear[r])), g.transpose(h));
  // + u_tail . h_j (same for every row) + b_r
  auto bj = g.transpose(g.matmul(h, g.transpose(u_tail)));          // [1 x n]
  auto br = g.gather_rows(g.param(head.bias), {static_cast<int>(r)});  // [1 x 1]
  auto ones_row = g.input(Tensor<S>::full({1, n}, S(1)), "ones");
  auto row_term = g.add(bj, g.matmul(br, ones_row));
  auto with_rows = g.add_row(base, row_term);
  // + u_head . h_i (same for every column)
  auto ai = g.transpose(g.matmul(h, g.transpose(u_head)));  // [1 x n]
  return g.transpose(g.add_row(g.transpose(with_rows), ai));
}

// Pointer loss (per-type start/end sigmoids) + 50x multi-head-selection loss
// over every (i, j, relation) cell.
template <typename S>
typename Graph<S>::Id mhs_forward_loss(Graph<S>& g, MhsHead<S>& head,
                                       typename Graph<S>::Id h,
                                       const std::vector<EntitySpan>& spans,
                                       const std::vector<RelationTriple>& triples,
                                       const RelationSchema& schema) {
  schema.validate();
  const size_t n = g.val(h).rows();
  const size_t T = head.num_types;
  std::vector<int> start_labels(n * T, 0), end_labels(n * T, 0);
  for (const EntitySpan& s : spans) {
    const int ti = schema.type_index(s.type);
    if (ti < 0) throw std::invalid_argument("mhs: unknown entity type " + s.type);
    if (s.start > s.end || s.end >= n)
      throw std::invalid_argument("mhs: span out of range");
    start_labels[s.start * T + static_cast<size_t>(ti)] = 1;
    end_labels[s.end * T + static_cast<size_t>(ti)] = 1;
  }
  auto start_logits =
      g.add_row(g.matmul(h, g.param(head.w_start)), g.param(head.b_start));
  auto end_logits =
      g.add_row(g.matmul(h, g.param(head.w_end)), g.param(head.b_end));
  auto ptr = g.add(g.bce_logits(start_logits, start_labels),
                   g.bce_logits(end_logits, end_labels));

  std::vector<std::pair<S, typename Graph<S>::Id>> terms = {{S(1), ptr}};
  for (size_t r = 0; r < head.num_relations; ++r) {
    std::vector<int> labels(n * n, 0);
    for (const RelationTriple& t : triples) {
      if (t.relation < 0 ||
          static_cast<size_t>(t.relation) >= head.num_relations)
        throw std::invalid_argument("mhs: relation id out of range");
      if (t.subject >= n || t.object >= n)
        throw std::invalid_argument("mhs: triple position out of range");
      if (static_cast<size_t>(t.relation) == r)
        labels[t.subject * n + t.object] = 1;
    }
    terms.push_back({S(50), g.bce_logits(mhs_scores(g, head, h, r), labels)});
  }
  return g.weighted_sum(terms);
}

struct MhsDecodeInput {
  Tensor<double> start_probs;             // [n x T]
  Tensor<double> end_probs;               // [n x T]
  std::vector<Tensor<double>> mhs_probs;  // per relation, [n x n]
};

struct MhsDecodeResult {
  std::vector<EntitySpan> spans;
  std::vector<RelationTriple> triples;
};

// Entities from the pointer streams (each start pairs with the nearest
// unconsumed end at or after it), then triples from cells above threshold
// whose endpoints are starts of entities with the schema's types.
inline MhsDecodeResult mhs_decode(const MhsDecodeInput& in, double threshold,
                                  const RelationSchema& schema) {
  schema.validate();
  const size_t n = in.start_probs.rows();
  const size_t T = in.start_probs.cols();
  MhsDecodeResult out;
  // start token -> type indices of entities starting there
  std::map<size_t, std::set<int>> starts_of;
  for (size_t ti = 0; ti < T; ++ti) {
    std::vector<size_t> ends;
    for (size_t t = 0; t < n; ++t)
      if (in.end_probs.at(t, ti) > threshold) ends.push_back(t);
    size_t next_end = 0;
    for (size_t t = 0; t < n; ++t) {
      if (!(in.start_probs.at(t, ti) > threshold)) continue;
      while (next_end < ends.size() && ends[next_end] < t) ++next_end;
      if (next_end == ends.size()) break;
      out.spans.push_back({t, ends[next_end], schema.types[ti]});
      starts_of[t].insert(static_cast<int>(ti));
      ++next_end;
    }
  }
  for (size_t r = 0; r < in.mhs_probs.size(); ++r) {
    const auto [subj_t, obj_t] = schema.relations[r];
    for (size_t i = 0; i < n; ++i) {
      auto si = starts_of.find(i);
      if (si == starts_of.end() || !si->second.count(subj_t)) continue;
      for (size_t j = 0; j < n; ++j) {
        if (!(in.mhs_probs[r].at(i, j) > threshold)) continue;
        auto sj = starts_of.find(j);
        if (sj == starts_of.end() || !sj->second.count(obj_t)) continue;
        out.triples.push_back({i, j, static_cast<int>(r)});
      }
    }
  }
  std::sort(out.spans.begin(), out.spans.end());
  std::sort(out.triples.begin(), out.triples.end());
  return out;
}

// ---- sequence classification ------------------------------------------------

template <typename S>
struct ClassifierHead {
  Parameter<S> w, b;

  ClassifierHead(size_t hidden, size_t classes, Rng& rng)
      : w("head.cls.w", Tensor<S>::zeros({hidden, classes}), true, true),
        b("head.cls.b", Tensor<S>::zeros({classes}), true, false) {
    for (auto& v : w.value.data) v = static_cast<S>(rng.normal() * 0.02);
  }
  std::vector<Parameter<S>*> params() { return {&w, &b}; }
};

template <typename S>
typename Graph<S>::Id classify_logits(Graph<S>& g, ClassifierHead<S>& head,
                                      typename Graph<S>::Id h_cls) {
  return g.add_row(g.matmul(h_cls, g.param(head.w)), g.param(head.b));
}

template <typename S>
typename Graph<S>::Id classify_probs(Graph<S>& g, ClassifierHead<S>& head,
                                     typename Graph<S>::Id h_cls) {
  return g.softmax_rows(classify_logits(g, head, h_cls));
}

// ---- input packing -----------------------------------------------------------

struct PackedInput {
  std::vector<int> ids;
  std::vector<int> segments;
};

namespace detail {

inline std::vector<int> ids_of(const std::string& text, const Vocab& vocab) {
  TokenSequence seq = tokenize(text, vocab);
  return std::vector<int>(seq.ids.begin(), seq.ids.end());
}

}  // namespace detail

// [CLS] S1 [SEP] S2 [SEP], segments 0 up to and including the first [SEP],
// 1 after. When over budget the longer segment loses tail tokens first (ties
// truncate the second segment).
inline PackedInput pack_pair(const std::string& s1, const std::string& s2,
                             const Vocab& vocab, size_t max_len) {
  if (max_len < 5) throw std::invalid_argument("pack_pair: max_len too small");
  std::vector<int> a = detail::ids_of(s1, vocab);
  std::vector<int> b = detail::ids_of(s2, vocab);
  while (a.size() + b.size() + 3 > max_len) {
    if (a.size() > b.size())
      a.pop_back();
    else
      b.pop_back();
  }
  PackedInput out;
  out.ids.push_back(Vocab::kCls);
  out.segments.push_back(0);
  for (int id : a) {
    out.ids.push_back(id);
    out.segments.push_back(0);
  }
  out.ids.push_back(Vocab::kSep);
  out.segments.push_back(0);
  for (int id : b) {
    out.ids.push_back(id);
    out.segments.push_back(1);
  }
  out.ids.push_back(Vocab::kSep);
  out.segments.push_back(1);
  return out;
}

// [CLS] A [SEP] Q [SEP] T [SEP]; segment 0 covers [CLS] A [SEP], segment 1
// the rest. The longest of the three loses tail tokens first (ties truncate
// the segment appearing later in the template).
inline PackedInput pack_choice(const std::string& answer,
                               const std::string& question,
                               const std::string& evidence, const Vocab& vocab,
                               size_t max_len) {
  if (max_len < 7) throw std::invalid_argument("pack_choice: max_len too small");
  std::vector<int> a = detail::ids_of(answer, vocab);
  std::vector<int> q = detail::ids_of(question, vocab);
  std::vector<int> t = detail::ids_of(evidence, vocab);
  while (a.size() + q.size() + t.size() + 4 > max_len) {
    if (t.size() >= q.size() && t.size() >= a.size())
      t.pop_back();
    else if (q.size() >= a.size())
      q.pop_back();
    else
      a.pop_back();
  }
  PackedInput out;
  auto push = [&](int id, int seg) {
    out.ids.push_back(id);
    out.segments.push_back(seg);
  };
  push(Vocab::kCls, 0);
  for (int id : a) push(id, 0);
  push(Vocab::kSep, 0);
  for (int id : q) push(id, 1);
  push(Vocab::kSep, 1);
  for (int id : t) push(id, 1);
  push(Vocab::kSep, 1);
  return out;
}

// ---- diagnosis-term normalization candidates ---------------------------------

namespace detail {

inline std::vector<uint64_t> char_bigrams(const std::string& s) {
  const std::vector<uint32_t> cps = decode_utf8(s);
  std::vector<uint64_t> grams;
  if (cps.size() == 1) grams.push_back(static_cast<uint64_t>(cps[0]) << 21 | 0x1fffff);
  for (size_t k = 0; k + 1 < cps.size(); ++k)
    grams.push_back(static_cast<uint64_t>(cps[k]) << 21 | cps[k + 1]);
  std::sort(grams.begin(), grams.end());
  grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
  return grams;
}

inline double jaccard(const std::vector<uint64_t>& a,
                      const std::vector<uint64_t>& b) {
  if (a.empty() && b.empty()) return 1.0;
  size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return static_cast<double>(inter) /
         static_cast<double>(a.size() + b.size() - inter);
}

}  // namespace detail

// Top candidates by character-bigram Jaccard similarity; ties break
// lexicographically on the candidate string.
inline std::vector<std::string> cdn_candidates(
    const std::string& term, const std::vector<std::string>& terminology,
    size_t top_n = 100) {
  if (terminology.empty())
    throw std::invalid_argument("cdn_candidates: empty terminology");
  const auto tg = detail::char_bigrams(term);
  std::vector<std::pair<double, const std::string*>> scored;
  scored.reserve(terminology.size());
  for (const std::string& entry : terminology)
    scored.push_back({detail::jaccard(tg, detail::char_bigrams(entry)), &entry});
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return *x.second < *y.second;
  });
  std::vector<std::string> out;
  for (size_t i = 0; i < scored.size() && i < top_n; ++i)
    out.push_back(*scored[i].second);
  return out;
}

// ---- exponential moving average ----------------------------------------------

template <typename S>
class Ema {
 public:
  Ema(std::vector<Parameter<S>*> params, double decay)
      : params_(std::move(params)), alpha_(decay) {
    if (alpha_ < 0.0 || alpha_ >= 1.0)
      throw std::invalid_argument("Ema: decay outside [0,1)");
    shadow_.reserve(params_.size());
    for (auto* p : params_) shadow_.push_back(p->value);
  }

  // shadow <- alpha*shadow + (1-alpha)*params
  void update() {
    for (size_t i = 0; i < params_.size(); ++i) {
      if (shadow_[i].shape != params_[i]->value.shape)
        throw std::invalid_argument("Ema: shape changed under " +
                                    params_[i]->name);
      for (size_t k = 0; k < shadow_[i].numel(); ++k)
        shadow_[i].data[k] = static_cast<S>(
            alpha_ * static_cast<double>(shadow_[i].data[k]) +
            (1.0 - alpha_) * static_cast<double>(params_[i]->value.data[k]));
    }
  }

  // Exchange live weights with the shadow copy; call again to restore.
  void swap_in() {
    for (size_t i = 0; i < params_.size(); ++i)
      std::swap(shadow_[i].data, params_[i]->value.data);
  }

  const Tensor<S>& shadow(size_t i) const { return shadow_[i]; }
  double decay() const { return alpha_; }

 private:
  std::vector<Parameter<S>*> params_;
  std::vector<Tensor<S>> shadow_;
  double alpha_;
};

}  // namespace ehd
