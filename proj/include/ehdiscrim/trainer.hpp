#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ehdiscrim/checkpoint.hpp"
#include "ehdiscrim/corruption.hpp"
#include "ehdiscrim/encoder.hpp"
#include "ehdiscrim/losses.hpp"
#include "ehdiscrim/model.hpp"
#include "ehdiscrim/optimizer.hpp"

namespace ehd {

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  size_t k = 5;         // sampled candidates per replaced position
  double tau = 0.07;    // contrastive temperature
  double mask_rate = 0.15;
  double p_mask = 0.8;  // action split within planned words
  double p_random = 0.1;
  size_t batch_size = 384;
  size_t max_steps = 1650000;
  size_t warmup_steps = 10000;
  double peak_lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-6;
  double weight_decay = 0.01;
  uint64_t seed = 42;
  size_t log_interval = 10;
  size_t checkpoint_interval = 10000;
  bool use_mts = true;  // ablation switches; a disabled loss is never built
  bool use_csp = true;

  OptimConfig optim() const {
    OptimConfig o;
    o.peak_lr = peak_lr;
    o.warmup_steps = warmup_steps;
    o.max_steps = max_steps;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.eps = adam_eps;
    o.weight_decay = weight_decay;
    return o;
  }

  void validate() const {
    model.validate();
    optim().validate();
    if (tau <= 0) throw std::invalid_argument("TrainConfig: tau must be positive");
    if (weights.lambda1 < 0 || weights.lambda2 < 0 || weights.lambda3 < 0)
      throw std::invalid_argument("TrainConfig: negative loss weight");
    if (mask_rate <= 0 || mask_rate >= 1)
      throw std::invalid_argument("TrainConfig: mask_rate outside (0,1)");
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: empty batch");
    if (k == 0) throw std::invalid_argument("TrainConfig: k must be >= 1");
  }
};

struct StepMetrics {
  size_t step = 0;
  double lr = 0;
  double mlm = 0, rtd = 0, mts = 0, csp = 0, total = 0;
  double rtd_acc = 0, mts_acc = 0, csp_top1 = 0;
  bool has_mts = true, has_csp = true;
  size_t mts_rows = 0;
  // replaced-token detection broken out by class (not in the TSV columns)
  size_t rtd_positions = 0, rtd_replaced_total = 0, rtd_replaced_hit = 0;
};

// One optimization step builds a single graph: generator forward + MLM loss,
// sampling of replacements from the generator's output *values*, then the
// discriminator losses on the sampled ids. The sampled tokens enter the
// discriminator as constants, so no discriminator loss can reach a
// generator-exclusive parameter; shared embedding tables are reached only
// through the discriminator's own forward pass.
template <typename S>
class Pretrainer {
 public:
  Pretrainer(const TrainConfig& cfg, std::vector<TokenSequence> data)
      : cfg_(cfg),
        data_(std::move(data)),
        model_(Model<S>::make(cfg.model, cfg.seed)),
        opt_(model_.store.all()) {
    cfg_.validate();
    if (data_.empty()) throw std::invalid_argument("Pretrainer: no sequences");
    const size_t fit = cfg_.model.max_positions - 2;  // room for [CLS]/[SEP]
    for (TokenSequence& s : data_) {
      if (s.size() > fit) {
        s.ids.resize(fit);
        s.word_start.resize(fit);
      }
      if (s.size() == 0) throw std::invalid_argument("Pretrainer: empty sequence");
      for (int32_t id : s.ids)
        if (id < 0 || static_cast<size_t>(id) >= cfg_.model.vocab_size)
          throw std::invalid_argument(
              "Pretrainer: shard/vocab mismatch (token id " + std::to_string(id) +
              " outside vocab of " + std::to_string(cfg_.model.vocab_size) + ")");
    }
  }

  Model<S>& model() { return model_; }
  Adam<S>& optimizer() { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  size_t step() const { return step_; }

  StepMetrics train_step() {
    if (step_ >= cfg_.max_steps)
      throw std::logic_error("train_step: max steps already reached");
    const double lr = lr_at(step_ + 1, cfg_.optim());
    const size_t B = cfg_.batch_size;
    Graph<S> g;
    Rng drop_rng(hash_seed(cfg_.seed, 0xd409u, step_));
    EncodeOptions train_opt;
    train_opt.train = true;
    train_opt.dropout_rng = &drop_rng;

    using Id = typename Graph<S>::Id;
    std::vector<Id> mlm_nodes, rtd_nodes, mts_row_nodes, csp_rows;
    StepMetrics out;
    size_t rtd_total = 0, rtd_hit = 0, mts_hit = 0;

    const std::vector<size_t> batch = batch_indices();
    for (size_t slot = 0; slot < B; ++slot) {
      const TokenSequence& seq = data_[batch[slot]];
      const size_t n = seq.size();
      for (int view = 0; view < 2; ++view) {
        Rng crng(hash_seed(cfg_.seed, step_ * B + slot,
                           static_cast<uint64_t>(view), 0xc0bbu));
        MaskPlan plan = select_mask_positions(seq, cfg_.mask_rate, crng);
        MaskedResult masked = build_masked_sequence(
            seq, plan, cfg_.model.vocab_size, crng, cfg_.p_mask, cfg_.p_random);

        auto hg = encode(g, model_, model_.gen, with_cls_sep(masked.x.ids),
                         train_opt);
        std::vector<int> mask_rows(plan.positions.size());
        std::vector<int> originals(plan.positions.size());
        for (size_t i = 0; i < plan.positions.size(); ++i) {
          mask_rows[i] = static_cast<int>(plan.positions[i] + 1);
          originals[i] = seq.ids[plan.positions[i]];
        }
        auto glogits = mlm_logits(g, model_, g.gather_rows(hg, mask_rows));
        mlm_nodes.push_back(loss_mlm(g, glogits, originals));

        // generator outputs leave the graph here: sampling sees plain values
        std::vector<std::vector<S>> gen_probs;
        {
          const Tensor<S>& P = g.val(g.softmax_rows(glogits));
          gen_probs.resize(P.rows());
          for (size_t r = 0; r < P.rows(); ++r) {
            gen_probs[r].resize(P.cols());
            for (size_t c = 0; c < P.cols(); ++c) gen_probs[r][c] = P.at(r, c);
          }
        }
        ReplacementResult rep = sample_replacements(gen_probs, plan, seq, crng);
        auto cands =
            build_candidate_sets(gen_probs, plan, seq, cfg_.k, crng);

        auto hd =
            encode(g, model_, model_.disc, with_cls_sep(rep.x.ids), train_opt);
        std::vector<int> real_rows(n);
        std::iota(real_rows.begin(), real_rows.end(), 1);
        auto rlog = rtd_logits(g, model_, g.gather_rows(hd, real_rows));
        rtd_nodes.push_back(loss_rtd(g, rlog, rep.replaced_flags));
        {
          Tensor<S> z = g.val(rlog);
          for (size_t t = 0; t < n; ++t) {
            const bool said_original = z.at(t, 0) > S(0);
            const bool is_original = rep.replaced_flags[t] == 0;
            ++rtd_total;
            if (said_original == is_original) ++rtd_hit;
            if (!is_original) {
              ++out.rtd_replaced_total;
              if (!said_original) ++out.rtd_replaced_hit;
            }
          }
        }

        if (cfg_.use_mts) {
          for (size_t i = 0; i < plan.positions.size(); ++i) {
            const size_t pos = plan.positions[i];
            if (!rep.replaced_flags[pos]) continue;
            auto row = mts_logits(
                g, model_, g.gather_rows(hd, {static_cast<int>(pos + 1)}),
                cands[i]);
            mts_row_nodes.push_back(row);
            Tensor<S> rv = g.val(row);
            size_t arg = 0;
            for (size_t c = 1; c < rv.cols(); ++c)
              if (rv.at(0, c) > rv.at(0, arg)) arg = c;
            if (arg == 0) ++mts_hit;
          }
        }
        if (cfg_.use_csp) csp_rows.push_back(csp_embed(g, hd));
      }
    }

    const S inv = S(1) / static_cast<S>(2 * B);
    auto scaled_sum = [&](const std::vector<Id>& nodes) {
      std::vector<std::pair<S, Id>> terms;
      for (Id id : nodes) terms.push_back({inv, id});
      return g.weighted_sum(terms);
    };
    Id mlm_total = scaled_sum(mlm_nodes);
    Id rtd_total_node = scaled_sum(rtd_nodes);
    std::optional<Id> mts_total, csp_total;
    if (cfg_.use_mts) {
      std::optional<Id> rows;
      if (!mts_row_nodes.empty()) rows = g.concat_rows(mts_row_nodes);
      mts_total = g.scale(loss_mts(g, rows), inv);
    }
    if (cfg_.use_csp) {
      Id embeds = g.concat_rows(csp_rows);
      csp_total = loss_csp(g, embeds, static_cast<S>(cfg_.tau));
      Tensor<S> e = g.val(embeds);
      size_t hits = 0;
      for (size_t i = 0; i < e.rows(); ++i) {
        size_t best = i == 0 ? 1 : 0;
        double best_s = -2.0;
        for (size_t j = 0; j < e.rows(); ++j) {
          if (j == i) continue;
          double s = 0;
          for (size_t c = 0; c < e.cols(); ++c)
            s += static_cast<double>(e.at(i, c)) * static_cast<double>(e.at(j, c));
          if (s > best_s) {
            best_s = s;
            best = j;
          }
        }
        if (best == (i ^ 1)) ++hits;
      }
      out.csp_top1 = static_cast<double>(hits) / static_cast<double>(e.rows());
    }
    Id total =
        combined_step_loss(g, mlm_total, rtd_total_node, mts_total, csp_total,
                           cfg_.weights);

    out.step = step_ + 1;
    out.lr = lr;
    out.mlm = static_cast<double>(g.val(mlm_total).data[0]);
    out.rtd = static_cast<double>(g.val(rtd_total_node).data[0]);
    out.has_mts = cfg_.use_mts;
    out.has_csp = cfg_.use_csp;
    if (mts_total) out.mts = static_cast<double>(g.val(*mts_total).data[0]);
    if (csp_total) out.csp = static_cast<double>(g.val(*csp_total).data[0]);
    out.total = static_cast<double>(g.val(total).data[0]);
    out.rtd_acc = rtd_total ? static_cast<double>(rtd_hit) / rtd_total : 0.0;
    out.rtd_positions = rtd_total;
    out.mts_rows = mts_row_nodes.size();
    out.mts_acc = mts_row_nodes.empty()
                      ? 0.0
                      : static_cast<double>(mts_hit) / mts_row_nodes.size();

    for (Parameter<S>* p : model_.store.all()) p->zero_grad();
    g.backward(total);
    opt_.step(lr, cfg_.optim());
    ++step_;
    return out;
  }

  void save(const std::string& path) {
    CheckpointMeta meta;
    meta.step = step_;
    meta.seed = cfg_.seed;
    meta.extra = model_geometry_meta(cfg_.model);
    write_checkpoint(path, model_, &opt_, meta);
  }

  void restore(const std::string& path) {
    CheckpointMeta meta = read_checkpoint(path, model_, &opt_);
    step_ = meta.step;
    cfg_.seed = meta.seed;
  }

 private:
  // Epoch e visits the data in a permutation drawn from the run seed; the
  // batch for step s is the next batch_size entries of that endless walk.
  const std::vector<size_t>& epoch_order(size_t epoch) {
    for (auto& [e, ord] : order_cache_)
      if (e == epoch && !ord.empty()) return ord;
    auto& slot = order_cache_[epoch % 2];
    slot.first = epoch;
    slot.second.resize(data_.size());
    std::iota(slot.second.begin(), slot.second.end(), size_t{0});
    Rng rng(hash_seed(cfg_.seed, 0xe90cu, epoch));
    rng.shuffle(slot.second);
    return slot.second;
  }

  std::vector<size_t> batch_indices() {
    const size_t N = data_.size();
    std::vector<size_t> out(cfg_.batch_size);
    for (size_t i = 0; i < cfg_.batch_size; ++i) {
      const size_t cursor = step_ * cfg_.batch_size + i;
      out[i] = epoch_order(cursor / N)[cursor % N];
    }
    return out;
  }

  TrainConfig cfg_;
  std::vector<TokenSequence> data_;
  Model<S> model_;
  Adam<S> opt_;
  size_t step_ = 0;
  std::pair<size_t, std::vector<size_t>> order_cache_[2] = {
      {SIZE_MAX, {}}, {SIZE_MAX, {}}};
};

inline void write_metrics_header(std::ostream& os) {
  os << "# step\tlr\tL_MLM\tL_RTD\tL_MTS\tL_CSP\tL_total\trtd_acc\tmts_acc\tcsp_top1\n"
     << "# token-level losses are per-sequence sums averaged over batch x 2 "
        "views; csp is the mean over 2B anchors; '-' marks a disabled loss\n";
}

inline void write_metrics_line(std::ostream& os, const StepMetrics& m) {
  char buf[512];
  auto num = [](double v, char* s, size_t cap) { std::snprintf(s, cap, "%.8e", v); };
  char lr[32], mlm[32], rtd[32], mts[32] = "-", csp[32] = "-", tot[32];
  char ra[32], ma[32] = "-", ct[32] = "-";
  num(m.lr, lr, 32);
  num(m.mlm, mlm, 32);
  num(m.rtd, rtd, 32);
  num(m.total, tot, 32);
  std::snprintf(ra, 32, "%.6f", m.rtd_acc);
  if (m.has_mts) {
    num(m.mts, mts, 32);
    std::snprintf(ma, 32, "%.6f", m.mts_acc);
  }
  if (m.has_csp) {
    num(m.csp, csp, 32);
    std::snprintf(ct, 32, "%.6f", m.csp_top1);
  }
  std::snprintf(buf, sizeof(buf), "%zu\t%s\t%s\t%s\t%s\t%s\t%s\t%s\t%s\t%s\n",
                m.step, lr, mlm, rtd, mts, csp, tot, ra, ma, ct);
  os << buf;
}

// Full loop: logs every log_interval steps (and the final step), checkpoints
// every checkpoint_interval steps into out_dir when it is non-empty.
template <typename S>
void run_pretraining(Pretrainer<S>& tr, std::ostream& metrics,
                     const std::string& out_dir = "") {
  const TrainConfig& cfg = tr.config();
  if (tr.step() == 0) write_metrics_header(metrics);
  while (tr.step() < cfg.max_steps) {
    StepMetrics m = tr.train_step();
    if (cfg.log_interval == 0 || m.step % cfg.log_interval == 0 ||
        m.step == cfg.max_steps)
      write_metrics_line(metrics, m);
    if (!out_dir.empty() && cfg.checkpoint_interval != 0 &&
        (m.step % cfg.checkpoint_interval == 0 || m.step == cfg.max_steps))
      tr.save(out_dir + "/ckpt-" + std::to_string(m.step) + ".bin");
  }
  if (!out_dir.empty()) tr.save(out_dir + "/model-final.bin");
}

}  // namespace ehd
