#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "ehdiscrim/checkpoint.hpp"
#include "ehdiscrim/encoder.hpp"
#include "ehdiscrim/grad_check.hpp"
#include "ehdiscrim/losses.hpp"
#include "ehdiscrim/optimizer.hpp"
#include "ehdiscrim/trainer.hpp"

using namespace ehd;

namespace {

Tensor<double> row_logits(const std::vector<std::vector<double>>& rows) {
  Tensor<double> t = Tensor<double>::zeros({rows.size(), rows[0].size()});
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[r].size(); ++c) t.at(r, c) = rows[r][c];
  return t;
}

double scalar_of(Graph<double>& g, Graph<double>::Id id) {
  return g.val(id).data[0];
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.layers = 1;
  c.hidden = 12;
  c.heads = 3;
  c.intermediate = 24;
  c.embedding_size = 12;
  c.max_positions = 16;
  c.vocab_size = 30;
  c.gen_mult_num = 1;
  c.gen_mult_den = 3;
  c.dropout = 0.1;
  return c;
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.model = tiny_model_config();
  c.k = 3;
  c.mask_rate = 0.3;
  c.batch_size = 2;
  c.max_steps = 50;
  c.warmup_steps = 2;
  c.peak_lr = 1e-3;
  c.seed = 1234;
  c.log_interval = 1;
  c.checkpoint_interval = 0;
  return c;
}

std::vector<TokenSequence> tiny_corpus() {
  Rng rng(555);
  std::vector<TokenSequence> out;
  for (size_t i = 0; i < 6; ++i) {
    TokenSequence s;
    const size_t n = 6 + rng.uniform_int(5);
    for (size_t t = 0; t < n; ++t) {
      s.ids.push_back(static_cast<int32_t>(5 + rng.uniform_int(25)));
      s.word_start.push_back(t % 2 == 0 ? 1 : 0);
    }
    s.word_start[0] = 1;
    out.push_back(std::move(s));
  }
  return out;
}

std::string temp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST(LossMlm, PointMassAndUniform) {
  Graph<double> g;
  auto certain = g.input(row_logits({{60.0, 0.0, 0.0}}), "l");
  EXPECT_NEAR(scalar_of(g, loss_mlm(g, certain, {0})), 0.0, 1e-10);

  Graph<double> g2;
  auto uniform = g2.input(Tensor<double>::zeros({1, 10}), "l");
  EXPECT_NEAR(scalar_of(g2, loss_mlm(g2, uniform, {4})), std::log(10.0), 1e-12);
}

TEST(LossMlm, SumsOverPositions) {
  Graph<double> g;
  const double l2 = std::log(0.5), l4 = std::log(0.25);
  auto logits = g.input(row_logits({{l2, l4, l4}, {l4, l2, l4}}), "l");
  EXPECT_NEAR(scalar_of(g, loss_mlm(g, logits, {0, 0})),
              std::log(2.0) + std::log(4.0), 1e-12);
  EXPECT_THROW(loss_mlm(g, logits, {}), std::invalid_argument);
}

TEST(LossRtd, KnownValues) {
  Graph<double> g;
  auto zeros7 = g.input(Tensor<double>::zeros({7, 1}), "z");
  EXPECT_NEAR(scalar_of(g, loss_rtd(g, zeros7, std::vector<uint8_t>(7, 0))),
              7.0 * std::log(2.0), 1e-12);

  Graph<double> g2;
  auto perfect =
      g2.input(row_logits({{40.0}, {-40.0}, {40.0}}), "z");
  EXPECT_NEAR(scalar_of(g2, loss_rtd(g2, perfect, {0, 1, 0})), 0.0, 1e-10);

  // p(original) = (0.9, 0.2, 0.8) with the middle token replaced
  auto lg = [](double p) { return std::log(p / (1.0 - p)); };
  Graph<double> g3;
  auto z = g3.input(row_logits({{lg(0.9)}, {lg(0.2)}, {lg(0.8)}}), "z");
  const double expect = -(std::log(0.9) + std::log(0.8) + std::log(0.8));
  EXPECT_NEAR(scalar_of(g3, loss_rtd(g3, z, {0, 1, 0})), expect, 1e-12);
  EXPECT_NEAR(expect, 0.551648, 1e-6);
}

TEST(LossMts, EmptyUniformCertain) {
  Graph<double> g;
  EXPECT_EQ(scalar_of(g, loss_mts<double>(g, std::nullopt)), 0.0);

  auto uniform = g.input(Tensor<double>::zeros({1, 6}), "u");
  EXPECT_NEAR(scalar_of(g, loss_mts<double>(g, uniform)), std::log(6.0), 1e-12);

  auto certain = g.input(row_logits({{60.0, 0.0, 0.0, 0.0}}), "c");
  EXPECT_NEAR(scalar_of(g, loss_mts<double>(g, certain)), 0.0, 1e-10);
}

namespace {

// 2B unit rows where rows 2b, 2b+1 are a positive pair.
Tensor<double> unit_rows(const std::vector<std::vector<double>>& rows) {
  Tensor<double> t = row_logits(rows);
  for (size_t r = 0; r < t.rows(); ++r) {
    double n2 = 0;
    for (size_t c = 0; c < t.cols(); ++c) n2 += t.at(r, c) * t.at(r, c);
    const double inv = 1.0 / std::sqrt(n2);
    for (size_t c = 0; c < t.cols(); ++c) t.at(r, c) *= inv;
  }
  return t;
}

}  // namespace

TEST(LossCsp, AllEqualEmbeddingsGiveLogCount) {
  for (size_t B : {2u, 4u, 8u}) {
    std::vector<std::vector<double>> rows(2 * B, {0.6, 0.8, 0.0});
    Graph<double> g;
    auto e = g.input(unit_rows(rows), "e");
    const double got = scalar_of(g, loss_csp(g, e, 0.07));
    EXPECT_NEAR(got, std::log(2.0 * B - 1.0), 1e-9) << "B=" << B;
    // identical similarities make the value independent of temperature
    Graph<double> g2;
    auto e2 = g2.input(unit_rows(rows), "e");
    EXPECT_NEAR(scalar_of(g2, loss_csp(g2, e2, 1.0)), got, 1e-12);
  }
}

TEST(LossCsp, DegenerateAndSeparatedBatches) {
  // B = 1: the comparison set is just the positive
  Graph<double> g;
  auto e = g.input(unit_rows({{1.0, 0.0}, {1.0, 0.0}}), "e");
  EXPECT_NEAR(scalar_of(g, loss_csp(g, e, 0.07)), 0.0, 1e-15);

  // B = 2 with positive similarity 1 and every cross similarity -1
  Graph<double> g2;
  auto e2 = g2.input(
      unit_rows({{1.0, 0.0}, {1.0, 0.0}, {-1.0, 0.0}, {-1.0, 0.0}}), "e");
  EXPECT_NEAR(scalar_of(g2, loss_csp(g2, e2, 0.07)), 0.0, 1e-10);
}

TEST(LossCsp, RejectsBadInputs) {
  Graph<double> g;
  auto odd = g.input(unit_rows({{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}}), "e");
  EXPECT_THROW(loss_csp(g, odd, 0.07), std::invalid_argument);
  auto ok = g.input(unit_rows({{1.0, 0.0}, {0.0, 1.0}}), "e");
  EXPECT_THROW(loss_csp(g, ok, 0.0), std::invalid_argument);
  EXPECT_THROW(loss_csp(g, ok, -1.0), std::invalid_argument);
}

TEST(LossCsp, PairOrderInvariance) {
  Rng rng(7);
  std::vector<std::vector<double>> rows(6, std::vector<double>(4));
  for (auto& r : rows)
    for (auto& v : r) v = rng.normal();
  Graph<double> g1;
  const double a = scalar_of(g1, loss_csp(g1, g1.input(unit_rows(rows), "e"), 0.07));
  std::swap(rows[2], rows[3]);  // swap the two views of sequence 1
  Graph<double> g2;
  const double b = scalar_of(g2, loss_csp(g2, g2.input(unit_rows(rows), "e"), 0.07));
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(LossGradients, FiniteDifferences) {
  Rng rng(41);
  Parameter<double> logits("logits", Tensor<double>::zeros({4, 7}), true, false);
  for (auto& v : logits.value.data) v = rng.normal();
  auto fn_mlm = [&]() {
    Graph<double> g;
    auto l = loss_mlm(g, g.param(logits), {2, 0, 6, 3});
    g.backward(l);
    return g.val(l).data[0];
  };
  EXPECT_LT(grad_check<double>(fn_mlm, {&logits}, 1e-6).max_rel_err, 1e-6);

  Parameter<double> z("z", Tensor<double>::zeros({5, 1}), true, false);
  for (auto& v : z.value.data) v = rng.normal();
  auto fn_rtd = [&]() {
    Graph<double> g;
    auto l = loss_rtd(g, g.param(z), {0, 1, 1, 0, 0});
    g.backward(l);
    return g.val(l).data[0];
  };
  EXPECT_LT(grad_check<double>(fn_rtd, {&z}, 1e-6).max_rel_err, 1e-6);

  Parameter<double> emb("emb", Tensor<double>::zeros({6, 5}), true, false);
  for (auto& v : emb.value.data) v = rng.normal();
  auto fn_csp = [&]() {
    Graph<double> g;
    auto l = loss_csp(g, g.l2_normalize_rows(g.param(emb)), 0.07);
    g.backward(l);
    return g.val(l).data[0];
  };
  EXPECT_LT(grad_check<double>(fn_csp, {&emb}, 1e-6).max_rel_err, 1e-5);
}

TEST(CombinedLoss, DefaultWeights) {
  Graph<double> g;
  auto one = [&]() { return g.input(Tensor<double>::scalar(1.0), "one"); };
  LossWeights w;
  const double got = scalar_of(
      g, combined_step_loss(g, one(), one(), std::optional(one()),
                            std::optional(one()), w));
  EXPECT_NEAR(got, 72.0, 1e-12);  // 1 + 50 + 20 + 1

  auto zero = [&]() { return g.input(Tensor<double>::scalar(0.0), "zero"); };
  EXPECT_EQ(scalar_of(g, combined_step_loss(g, zero(), zero(),
                                            std::optional(zero()),
                                            std::optional(zero()), w)),
            0.0);
}

TEST(CombinedLoss, AbsentTermsDropOut) {
  Graph<double> g;
  auto c = [&](double v) { return g.input(Tensor<double>::scalar(v), "c"); };
  LossWeights w;
  const double got = scalar_of(
      g, combined_step_loss<double>(g, c(0.5), c(0.25), std::nullopt,
                                    std::nullopt, w));
  EXPECT_NEAR(got, 0.5 + 50.0 * 0.25, 1e-12);

  LossWeights neg;
  neg.lambda2 = -1.0;
  EXPECT_THROW(combined_step_loss<double>(g, c(1), c(1), std::nullopt,
                                          std::nullopt, neg),
               std::invalid_argument);
}

TEST(LrSchedule, RampAndDecay) {
  OptimConfig cfg;
  cfg.peak_lr = 2e-4;
  cfg.warmup_steps = 10000;
  cfg.max_steps = 20000;
  EXPECT_EQ(lr_at(0, cfg), 0.0);
  EXPECT_EQ(lr_at(10000, cfg), 2e-4);
  EXPECT_NEAR(lr_at(15000, cfg), 1e-4, 1e-18);
  EXPECT_EQ(lr_at(20000, cfg), 0.0);
  EXPECT_THROW(lr_at(20001, cfg), std::out_of_range);
  for (size_t s = 1; s <= 10000; ++s)
    ASSERT_GT(lr_at(s, cfg), lr_at(s - 1, cfg));
  for (size_t s = 10001; s <= 20000; ++s)
    ASSERT_LT(lr_at(s, cfg), lr_at(s - 1, cfg));
}

TEST(AdamStep, FixedPoints) {
  OptimConfig cfg;
  cfg.weight_decay = 0.0;
  Parameter<double> p("p", Tensor<double>::full({3}, 2.5), true, true);
  Adam<double> opt({&p});
  opt.step(0.01, cfg);  // zero gradient
  for (double v : p.value.data) EXPECT_EQ(v, 2.5);

  // first step with unit gradient: bias correction forces mhat/sqrt(vhat) = 1
  Parameter<double> q("q", Tensor<double>::scalar(1.0), true, false);
  std::fill(q.grad.data.begin(), q.grad.data.end(), 1.0);
  Adam<double> opt2({&q});
  opt2.step(0.01, cfg);
  EXPECT_NEAR(1.0 - q.value.data[0], 0.01 / (1.0 + cfg.eps), 1e-12);
}

TEST(AdamStep, DecoupledWeightDecay) {
  OptimConfig cfg;
  cfg.weight_decay = 0.1;
  Parameter<double> decayed("w", Tensor<double>::scalar(2.0), true, true);
  Parameter<double> frozen_decay("b", Tensor<double>::scalar(2.0), true, false);
  Adam<double> opt({&decayed, &frozen_decay});
  opt.step(0.5, cfg);  // zero gradients: only decay acts
  EXPECT_NEAR(decayed.value.data[0], 2.0 * (1.0 - 0.5 * 0.1), 1e-15);
  EXPECT_EQ(frozen_decay.value.data[0], 2.0);
}

TEST(AdamStep, NonFiniteGradientNamesParameter) {
  OptimConfig cfg;
  Parameter<double> p("layer.weight", Tensor<double>::scalar(1.0), true, true);
  p.grad.data[0] = std::numeric_limits<double>::quiet_NaN();
  Adam<double> opt({&p});
  try {
    opt.step(0.01, cfg);
    FAIL() << "expected throw";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
  }
}

TEST(AdamStep, QuadraticDescendsMonotonically) {
  OptimConfig cfg;
  cfg.peak_lr = 0.01;  // small enough that the iterate never crosses zero
  cfg.warmup_steps = 10;
  cfg.max_steps = 100;
  cfg.weight_decay = 0.0;
  Parameter<double> theta("theta", Tensor<double>::scalar(1.0), true, false);
  Adam<double> opt({&theta});
  double prev = theta.value.data[0] * theta.value.data[0];
  for (size_t s = 1; s <= 100; ++s) {
    theta.zero_grad();
    theta.grad.data[0] = 2.0 * theta.value.data[0];
    opt.step(lr_at(s, cfg), cfg);
    const double f = theta.value.data[0] * theta.value.data[0];
    // the decay reaches lr = 0 exactly at max_steps, a no-op step
    if (s > 10 && s < 100) ASSERT_LT(f, prev) << "step " << s;
    prev = f;
  }
  EXPECT_LT(prev, 0.5);
}

// Replicates one training step's graph wiring at double precision and checks
// the gradient partitions exactly.
TEST(StopGradient, DiscriminatorLossesNeverReachGenerator) {
  ModelConfig mc = tiny_model_config();
  mc.dropout = 0.0;
  auto m = Model<double>::make(mc, 99);
  std::vector<int32_t> orig = {7, 12, 19, 23, 9};
  std::vector<int> masked = {Vocab::kCls, 7, Vocab::kMask, 19, Vocab::kMask, 9,
                             Vocab::kSep};
  std::vector<int> replaced = {Vocab::kCls, 7, 14, 19, 23, 9, Vocab::kSep};

  auto build = [&](Graph<double>& g, bool with_mlm, bool with_disc) {
    std::vector<std::pair<double, typename Graph<double>::Id>> terms;
    if (with_mlm) {
      auto hg = encode(g, m, m.gen, masked);
      auto logits = mlm_logits(g, m, g.gather_rows(hg, {2, 4}));
      terms.push_back({1.0, loss_mlm(g, logits, {12, 23})});
    }
    if (with_disc) {
      auto hd = encode(g, m, m.disc, replaced);
      auto rl = rtd_logits(g, m, g.gather_rows(hd, {1, 2, 3, 4, 5}));
      terms.push_back({50.0, loss_rtd(g, rl, {0, 1, 0, 0, 0})});
      auto row = g.gather_rows(hd, {2});
      terms.push_back(
          {20.0, loss_mts<double>(g, mts_logits(g, m, row, {12, 14, 6, 8}))});
      auto hd2 = encode(g, m, m.disc, masked);
      auto embeds = g.concat_rows({csp_embed(g, hd), csp_embed(g, hd2)});
      terms.push_back({1.0, loss_csp(g, embeds, 0.07)});
    }
    return g.weighted_sum(terms);
  };

  for (Parameter<double>* p : m.store.all()) p->zero_grad();
  {
    Graph<double> g;
    g.backward(build(g, false, true));  // discriminator losses only
  }
  for (Parameter<double>* p : m.generator_exclusive())
    for (double v : p->grad.data)
      ASSERT_EQ(v, 0.0) << "generator param " << p->name
                        << " received gradient from discriminator losses";
  bool disc_any = false, shared_any = false;
  for (Parameter<double>* p : m.discriminator_exclusive())
    for (double v : p->grad.data) disc_any |= v != 0.0;
  for (Parameter<double>* p : m.shared_params())
    for (double v : p->grad.data) shared_any |= v != 0.0;
  EXPECT_TRUE(disc_any);
  EXPECT_TRUE(shared_any);  // via the discriminator's own embedding lookup

  for (Parameter<double>* p : m.store.all()) p->zero_grad();
  {
    Graph<double> g;
    g.backward(build(g, true, false));  // MLM only
  }
  for (Parameter<double>* p : m.discriminator_exclusive())
    for (double v : p->grad.data)
      ASSERT_EQ(v, 0.0) << "discriminator param " << p->name
                        << " received gradient from the MLM loss";
  bool gen_any = false;
  for (Parameter<double>* p : m.generator_exclusive())
    for (double v : p->grad.data) gen_any |= v != 0.0;
  EXPECT_TRUE(gen_any);
}

TEST(Pretrainer, FixedSeedIsBitIdentical) {
  TrainConfig cfg = tiny_train_config();
  Pretrainer<float> a(cfg, tiny_corpus());
  Pretrainer<float> b(cfg, tiny_corpus());
  for (int s = 0; s < 5; ++s) {
    StepMetrics ma = a.train_step();
    StepMetrics mb = b.train_step();
    ASSERT_EQ(ma.total, mb.total);
    ASSERT_EQ(ma.mlm, mb.mlm);
    ASSERT_EQ(ma.rtd, mb.rtd);
    ASSERT_EQ(ma.mts, mb.mts);
    ASSERT_EQ(ma.csp, mb.csp);
    ASSERT_EQ(ma.rtd_acc, mb.rtd_acc);
    ASSERT_EQ(ma.csp_top1, mb.csp_top1);
  }
  const auto pa = a.model().store.all(), pb = b.model().store.all();
  for (size_t i = 0; i < pa.size(); ++i)
    ASSERT_EQ(pa[i]->value.data, pb[i]->value.data) << pa[i]->name;
}

TEST(Pretrainer, SeedChangesTrajectory) {
  TrainConfig cfg = tiny_train_config();
  Pretrainer<float> a(cfg, tiny_corpus());
  cfg.seed += 1;
  Pretrainer<float> b(cfg, tiny_corpus());
  bool any_diff = false;
  for (int s = 0; s < 3; ++s) {
    StepMetrics ma = a.train_step();
    StepMetrics mb = b.train_step();
    any_diff |= ma.total != mb.total;
  }
  EXPECT_TRUE(any_diff);
}

TEST(Pretrainer, EveryLossIsNonNegative) {
  TrainConfig cfg = tiny_train_config();
  Pretrainer<float> tr(cfg, tiny_corpus());
  for (int s = 0; s < 8; ++s) {
    StepMetrics m = tr.train_step();
    EXPECT_GE(m.mlm, 0.0);
    EXPECT_GE(m.rtd, 0.0);
    EXPECT_GE(m.mts, 0.0);
    EXPECT_GE(m.csp, -1e-9);
    EXPECT_GE(m.total, 0.0);
    const double recombined =
        m.mlm + cfg.weights.lambda1 * m.rtd + cfg.weights.lambda2 * m.mts +
        cfg.weights.lambda3 * m.csp;
    EXPECT_NEAR(m.total, recombined, 1e-3 * std::max(1.0, recombined));
  }
}

TEST(Pretrainer, RejectsVocabMismatchAndEmptyData) {
  TrainConfig cfg = tiny_train_config();
  auto data = tiny_corpus();
  data[0].ids[0] = 30;  // == vocab_size
  try {
    Pretrainer<float> tr(cfg, data);
    FAIL() << "expected mismatch error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("shard/vocab mismatch"),
              std::string::npos);
  }
  EXPECT_THROW(Pretrainer<float>(cfg, {}), std::invalid_argument);
}

TEST(Pretrainer, CheckpointRoundTripsBitExactly) {
  TrainConfig cfg = tiny_train_config();
  Pretrainer<float> tr(cfg, tiny_corpus());
  for (int s = 0; s < 3; ++s) tr.train_step();
  const std::string path = temp_path("ehd_ckpt_roundtrip.bin");
  tr.save(path);

  Pretrainer<float> fresh(cfg, tiny_corpus());
  fresh.restore(path);
  EXPECT_EQ(fresh.step(), 3u);
  const auto pa = tr.model().store.all(), pb = fresh.model().store.all();
  for (size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i]->value.data, pb[i]->value.data) << pa[i]->name;
    ASSERT_EQ(tr.optimizer().first_moment(i).data,
              fresh.optimizer().first_moment(i).data);
    ASSERT_EQ(tr.optimizer().second_moment(i).data,
              fresh.optimizer().second_moment(i).data);
  }
  std::filesystem::remove(path);
}

TEST(Pretrainer, ResumeContinuesIdentically) {
  TrainConfig cfg = tiny_train_config();
  Pretrainer<float> straight(cfg, tiny_corpus());
  std::vector<StepMetrics> want;
  for (int s = 0; s < 6; ++s) want.push_back(straight.train_step());

  Pretrainer<float> first_half(cfg, tiny_corpus());
  for (int s = 0; s < 3; ++s) first_half.train_step();
  const std::string path = temp_path("ehd_ckpt_resume.bin");
  first_half.save(path);

  Pretrainer<float> resumed(cfg, tiny_corpus());
  resumed.restore(path);
  for (int s = 3; s < 6; ++s) {
    StepMetrics m = resumed.train_step();
    ASSERT_EQ(m.step, want[s].step);
    ASSERT_EQ(m.total, want[s].total);
    ASSERT_EQ(m.mlm, want[s].mlm);
    ASSERT_EQ(m.csp, want[s].csp);
  }
  const auto pa = straight.model().store.all(), pb = resumed.model().store.all();
  for (size_t i = 0; i < pa.size(); ++i)
    ASSERT_EQ(pa[i]->value.data, pb[i]->value.data) << pa[i]->name;
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbageAndMissing) {
  ModelConfig mc = tiny_model_config();
  auto m = Model<float>::make(mc, 1);
  EXPECT_THROW(read_checkpoint<float>("/nonexistent/ckpt.bin", m, nullptr),
               std::runtime_error);
  const std::string path = temp_path("ehd_ckpt_garbage.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  EXPECT_THROW(read_checkpoint<float>(path, m, nullptr), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(Ablations, DisabledLossesAbsentFromMetrics) {
  TrainConfig cfg = tiny_train_config();
  cfg.max_steps = 4;
  cfg.log_interval = 1;

  struct Case {
    bool mts, csp;
  } cases[] = {{true, true}, {true, false}, {false, true}, {false, false}};
  for (const Case& c : cases) {
    TrainConfig v = cfg;
    v.use_mts = c.mts;
    v.use_csp = c.csp;
    Pretrainer<float> tr(v, tiny_corpus());
    std::ostringstream log;
    run_pretraining(tr, log);
    EXPECT_EQ(tr.step(), 4u);

    std::istringstream in(log.str());
    std::string line;
    size_t rows = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      ++rows;
      std::vector<std::string> cols;
      std::istringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, '\t')) cols.push_back(cell);
      ASSERT_EQ(cols.size(), 10u);
      EXPECT_EQ(cols[4] == "-", !c.mts) << line;  // L_MTS
      EXPECT_EQ(cols[8] == "-", !c.mts) << line;  // mts_acc
      EXPECT_EQ(cols[5] == "-", !c.csp) << line;  // L_CSP
      EXPECT_EQ(cols[9] == "-", !c.csp) << line;  // csp_top1
    }
    EXPECT_EQ(rows, 4u);
  }
}

TEST(RunPretraining, LogsAndCheckpoints) {
  TrainConfig cfg = tiny_train_config();
  cfg.max_steps = 8;
  cfg.log_interval = 2;
  cfg.checkpoint_interval = 4;
  Pretrainer<float> tr(cfg, tiny_corpus());

  const std::string dir = temp_path("ehd_run_out");
  std::filesystem::create_directories(dir);
  std::ostringstream log;
  run_pretraining(tr, log, dir);

  std::istringstream in(log.str());
  std::string line;
  size_t header = 0, rows = 0;
  std::vector<size_t> steps;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      ++header;
      continue;
    }
    ++rows;
    steps.push_back(std::stoull(line.substr(0, line.find('\t'))));
  }
  EXPECT_EQ(header, 2u);
  EXPECT_EQ(rows, 4u);
  EXPECT_EQ(steps, (std::vector<size_t>{2, 4, 6, 8}));
  EXPECT_TRUE(std::filesystem::exists(dir + "/ckpt-4.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/ckpt-8.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/model-final.bin"));

  // identical run, identical log text
  Pretrainer<float> tr2(cfg, tiny_corpus());
  std::ostringstream log2;
  run_pretraining(tr2, log2);
  EXPECT_EQ(log.str(), log2.str());
  std::filesystem::remove_all(dir);
}
