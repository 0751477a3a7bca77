#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ehdiscrim/rng.hpp"
#include "ehdiscrim/tensor.hpp"

namespace ehd {

struct ModelConfig {
  size_t layers = 12;
  size_t hidden = 768;
  size_t heads = 12;
  size_t intermediate = 3072;
  size_t embedding_size = 768;
  size_t max_positions = 512;
  size_t vocab_size = 0;
  unsigned gen_mult_num = 1;  // generator multiplier as an exact fraction
  unsigned gen_mult_den = 3;
  double dropout = 0.1;

  void validate() const {
    if (layers == 0 || hidden == 0 || heads == 0 || intermediate == 0 ||
        embedding_size == 0 || max_positions == 0)
      throw std::invalid_argument("ModelConfig: zero-sized field");
    if (hidden % heads != 0)
      throw std::invalid_argument("ModelConfig: hidden " + std::to_string(hidden) +
                                  " not divisible by heads " + std::to_string(heads));
    if (vocab_size <= 5)
      throw std::invalid_argument("ModelConfig: vocab_size must exceed the specials");
    if (gen_mult_den == 0)
      throw std::invalid_argument("ModelConfig: zero multiplier denominator");
  }
};

// Generator stack: hidden, intermediate, and head count scaled by the
// multiplier; depth and embedding width unchanged.
inline ModelConfig derive_generator_config(const ModelConfig& cfg) {
  cfg.validate();
  auto scaled = [&](size_t v, const char* what) {
    const size_t num = v * cfg.gen_mult_num;
    if (num % cfg.gen_mult_den != 0)
      throw std::invalid_argument(std::string("derive_generator_config: ") + what +
                                  " " + std::to_string(v) + " times " +
                                  std::to_string(cfg.gen_mult_num) + "/" +
                                  std::to_string(cfg.gen_mult_den) +
                                  " is not an integer");
    const size_t out = num / cfg.gen_mult_den;
    if (out == 0)
      throw std::invalid_argument(std::string("derive_generator_config: ") + what +
                                  " scales to zero");
    return out;
  };
  ModelConfig g = cfg;
  g.hidden = scaled(cfg.hidden, "hidden");
  g.intermediate = scaled(cfg.intermediate, "intermediate");
  g.heads = scaled(cfg.heads, "heads");
  g.validate();
  return g;
}

// Owns every Parameter; creation order is fixed so checkpoints and the
// optimizer see a deterministic sequence.
template <typename S>
class ParamStore {
 public:
  Parameter<S>& create(const std::string& name, std::vector<size_t> shape,
                       bool weight_decay) {
    if (by_name_.count(name))
      throw std::logic_error("ParamStore: duplicate parameter " + name);
    owned_.push_back(std::make_unique<Parameter<S>>(
        name, Tensor<S>::zeros(std::move(shape)), true, weight_decay));
    by_name_.emplace(name, owned_.back().get());
    return *owned_.back();
  }

  Parameter<S>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  Parameter<S>& at(const std::string& name) const {
    Parameter<S>* p = find(name);
    if (!p) throw std::out_of_range("ParamStore: no parameter " + name);
    return *p;
  }

  std::vector<Parameter<S>*> all() const {
    std::vector<Parameter<S>*> out;
    out.reserve(owned_.size());
    for (const auto& p : owned_) out.push_back(p.get());
    return out;
  }

  size_t size() const { return owned_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> owned_;
  std::unordered_map<std::string, Parameter<S>*> by_name_;
};

template <typename S>
struct LayerParams {
  Parameter<S>*wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  Parameter<S>*ln1_g, *ln1_b;
  Parameter<S>*w1, *b1, *w2, *b2;
  Parameter<S>*ln2_g, *ln2_b;
};

template <typename S>
struct StackParams {
  ModelConfig cfg;  // sizes of THIS stack
  Parameter<S>*emb_ln_g = nullptr, *emb_ln_b = nullptr;
  Parameter<S>*in_proj = nullptr, *in_bias = nullptr;  // only when emb != hidden
  std::vector<LayerParams<S>> layers;
};

// Both encoder stacks plus the heads' parameters. Token/position/segment
// tables have exactly one storage location, shared by generator and
// discriminator; the generator reconciles widths through its input
// projection, which the MLM output path reuses transposed.
template <typename S>
struct Model {
  ModelConfig cfg;      // discriminator
  ModelConfig gen_cfg;  // derived
  ParamStore<S> store;

  Parameter<S>*tok_emb = nullptr, *pos_emb = nullptr, *seg_emb = nullptr;
  StackParams<S> disc, gen;
  Parameter<S>* rtd_w = nullptr;     // [hidden, 1], no bias
  Parameter<S>* mlm_bias = nullptr;  // [vocab]

  static Model make(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (cfg.embedding_size != cfg.hidden)
      throw std::invalid_argument(
          "Model: embedding_size must equal discriminator hidden (candidate "
          "scoring uses the tied table against discriminator states)");
    Model m;
    m.cfg = cfg;
    m.gen_cfg = derive_generator_config(cfg);
    Rng rng(hash_seed(seed, 0x9a7a1));

    auto normal_init = [&rng](Parameter<S>& p) {
      for (auto& v : p.value.data)
        v = static_cast<S>(rng.normal() * 0.02);
    };
    auto ones = [](Parameter<S>& p) {
      std::fill(p.value.data.begin(), p.value.data.end(), S(1));
    };

    auto& P = m.store;
    m.tok_emb = &P.create("emb.token", {cfg.vocab_size, cfg.embedding_size}, true);
    m.pos_emb = &P.create("emb.position", {cfg.max_positions, cfg.embedding_size}, true);
    m.seg_emb = &P.create("emb.segment", {2, cfg.embedding_size}, true);
    normal_init(*m.tok_emb);
    normal_init(*m.pos_emb);
    normal_init(*m.seg_emb);

    auto build_stack = [&](StackParams<S>& s, const ModelConfig& scfg,
                           const std::string& prefix) {
      s.cfg = scfg;
      s.emb_ln_g = &P.create(prefix + ".emb_ln.gain", {scfg.embedding_size}, false);
      s.emb_ln_b = &P.create(prefix + ".emb_ln.bias", {scfg.embedding_size}, false);
      ones(*s.emb_ln_g);
      if (scfg.embedding_size != scfg.hidden) {
        s.in_proj = &P.create(prefix + ".in_proj.weight",
                              {scfg.embedding_size, scfg.hidden}, true);
        s.in_bias = &P.create(prefix + ".in_proj.bias", {scfg.hidden}, false);
        normal_init(*s.in_proj);
      }
      for (size_t l = 0; l < scfg.layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        LayerParams<S> lay{};
        auto w = [&](const char* nm, size_t r, size_t c) {
          Parameter<S>* p = &P.create(lp + nm, {r, c}, true);
          normal_init(*p);
          return p;
        };
        auto b = [&](const char* nm, size_t n) {
          return &P.create(lp + nm, {n}, false);
        };
        lay.wq = w(".attn.wq", scfg.hidden, scfg.hidden);
        lay.bq = b(".attn.bq", scfg.hidden);
        lay.wk = w(".attn.wk", scfg.hidden, scfg.hidden);
        lay.bk = b(".attn.bk", scfg.hidden);
        lay.wv = w(".attn.wv", scfg.hidden, scfg.hidden);
        lay.bv = b(".attn.bv", scfg.hidden);
        lay.wo = w(".attn.wo", scfg.hidden, scfg.hidden);
        lay.bo = b(".attn.bo", scfg.hidden);
        lay.ln1_g = b(".attn_ln.gain", scfg.hidden);
        lay.ln1_b = b(".attn_ln.bias", scfg.hidden);
        ones(*lay.ln1_g);
        lay.w1 = w(".ffn.w1", scfg.hidden, scfg.intermediate);
        lay.b1 = b(".ffn.b1", scfg.intermediate);
        lay.w2 = w(".ffn.w2", scfg.intermediate, scfg.hidden);
        lay.b2 = b(".ffn.b2", scfg.hidden);
        lay.ln2_g = b(".ffn_ln.gain", scfg.hidden);
        lay.ln2_b = b(".ffn_ln.bias", scfg.hidden);
        ones(*lay.ln2_g);
        s.layers.push_back(lay);
      }
    };
    build_stack(m.disc, cfg, "disc");
    build_stack(m.gen, m.gen_cfg, "gen");

    m.rtd_w = &P.create("disc.rtd.w", {cfg.hidden, 1}, true);
    normal_init(*m.rtd_w);
    m.mlm_bias = &P.create("gen.mlm.bias", {cfg.vocab_size}, false);
    return m;
  }

  // Shared tables receive gradients from both paths; these partitions back
  // the stop-gradient assertions.
  std::vector<Parameter<S>*> shared_params() const {
    return {tok_emb, pos_emb, seg_emb};
  }
  std::vector<Parameter<S>*> generator_exclusive() const {
    return prefixed("gen.");
  }
  std::vector<Parameter<S>*> discriminator_exclusive() const {
    return prefixed("disc.");
  }

 private:
  std::vector<Parameter<S>*> prefixed(const std::string& pre) const {
    std::vector<Parameter<S>*> out;
    for (Parameter<S>* p : store.all())
      if (p->name.rfind(pre, 0) == 0) out.push_back(p);
    return out;
  }
};

}  // namespace ehd
