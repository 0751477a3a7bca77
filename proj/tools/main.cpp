// Command-line front end: vocabulary building, corpus preprocessing,
// pre-training, fine-tuning, evaluation, and tokenizer inspection.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ehdiscrim/config.hpp"
#include "ehdiscrim/corpus.hpp"
#include "ehdiscrim/finetune.hpp"
#include "ehdiscrim/heads.hpp"
#include "ehdiscrim/manifest.hpp"
#include "ehdiscrim/metrics.hpp"
#include "ehdiscrim/trainer.hpp"
#include "ehdiscrim/wordpiece.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ehd;

namespace {

// stderr progress + machine-readable TSV file from one stream
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return !EOF;
    if (a_->sputc(static_cast<char>(c)) == EOF) return EOF;
    if (b_->sputc(static_cast<char>(c)) == EOF) return EOF;
    return c;
  }
  int sync() override { return a_->pubsync() == 0 && b_->pubsync() == 0 ? 0 : -1; }

 private:
  std::streambuf *a_, *b_;
};

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

uint64_t resolve_seed(const std::optional<uint64_t>& cli_seed,
                      uint64_t config_seed) {
  if (cli_seed) return *cli_seed;
  if (const char* env = std::getenv("EHDISCRIM_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw std::invalid_argument("EHDISCRIM_SEED is not an integer: " +
                                  std::string(env));
    }
  }
  return config_seed;
}

std::map<std::string, std::string> snapshot(const TrainConfig& c) {
  std::map<std::string, std::string> m;
  auto put = [&](const char* k, auto v) { m[k] = std::to_string(v); };
  put("layers", c.model.layers);
  put("hidden", c.model.hidden);
  put("heads", c.model.heads);
  put("intermediate", c.model.intermediate);
  put("embedding_size", c.model.embedding_size);
  put("max_positions", c.model.max_positions);
  put("vocab_size", c.model.vocab_size);
  m["generator_multiplier"] = std::to_string(c.model.gen_mult_num) + "/" +
                              std::to_string(c.model.gen_mult_den);
  put("dropout", c.model.dropout);
  put("lambda_rtd", c.weights.lambda1);
  put("lambda_mts", c.weights.lambda2);
  put("lambda_csp", c.weights.lambda3);
  put("k", c.k);
  put("tau", c.tau);
  put("mask_rate", c.mask_rate);
  put("p_mask", c.p_mask);
  put("p_random", c.p_random);
  put("batch_size", c.batch_size);
  put("max_steps", c.max_steps);
  put("warmup_steps", c.warmup_steps);
  put("learning_rate", c.peak_lr);
  put("beta1", c.beta1);
  put("beta2", c.beta2);
  put("adam_eps", c.adam_eps);
  put("weight_decay", c.weight_decay);
  put("seed", c.seed);
  put("log_interval", c.log_interval);
  put("checkpoint_interval", c.checkpoint_interval);
  m["use_mts"] = c.use_mts ? "true" : "false";
  m["use_csp"] = c.use_csp ? "true" : "false";
  return m;
}

std::map<std::string, std::string> snapshot(const FinetuneConfig& c) {
  std::map<std::string, std::string> m;
  auto put = [&](const char* k, auto v) { m[k] = std::to_string(v); };
  put("epochs", c.epochs);
  put("batch_size", c.batch_size);
  put("learning_rate", c.peak_lr);
  put("warmup_ratio", c.warmup_ratio);
  put("beta1", c.beta1);
  put("beta2", c.beta2);
  put("adam_eps", c.adam_eps);
  put("weight_decay", c.weight_decay);
  put("ema_decay", c.ema_decay);
  put("seed", c.seed);
  put("max_len", c.max_len);
  return m;
}

std::vector<std::string> gather_files(const std::vector<std::string>& inputs) {
  std::vector<std::string> files;
  for (const std::string& in : inputs)
    for (const std::string& f : list_text_files(in)) files.push_back(f);
  if (files.empty()) throw std::runtime_error("no input files found");
  return files;
}

// ---- task file IO ------------------------------------------------------------

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<json> rows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return rows;
}

void write_jsonl(const std::string& path, const std::vector<json>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const json& r : rows) out << r.dump() << "\n";
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<int32_t> text_ids(const std::string& text, const Vocab& vocab,
                              size_t max_tokens) {
  TokenSequence seq = tokenize(text, vocab);
  if (seq.size() > max_tokens) seq.ids.resize(max_tokens);
  return seq.ids;
}

std::vector<EntitySpan> spans_of(const json& row, const char* field) {
  std::vector<EntitySpan> spans;
  if (!row.contains(field)) return spans;
  for (const json& e : row.at(field))
    spans.push_back({e.at("start").get<size_t>(), e.at("end").get<size_t>(),
                     e.at("type").get<std::string>()});
  return spans;
}

json spans_json(const std::vector<EntitySpan>& spans) {
  json arr = json::array();
  for (const EntitySpan& s : spans)
    arr.push_back({{"start", s.start}, {"end", s.end}, {"type", s.type}});
  return arr;
}

RelationSchema load_schema(const std::string& path,
                           std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read schema " + path);
  json j = json::parse(in);
  RelationSchema schema;
  schema.types = j.at("types").get<std::vector<std::string>>();
  for (const json& r : j.at("relations")) {
    names.push_back(r.at("name").get<std::string>());
    const int s = schema.type_index(r.at("subject").get<std::string>());
    const int o = schema.type_index(r.at("object").get<std::string>());
    if (s < 0 || o < 0)
      throw std::runtime_error("schema relation '" + names.back() +
                               "' uses an unlisted type");
    schema.relations.push_back({s, o});
  }
  schema.validate();
  return schema;
}

int relation_id(const std::vector<std::string>& names, const std::string& n) {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == n) return static_cast<int>(i);
  throw std::runtime_error("unknown relation name '" + n + "'");
}

std::vector<RelationTriple> triples_of(const json& row,
                                       const std::vector<std::string>& names,
                                       const char* field) {
  std::vector<RelationTriple> out;
  if (!row.contains(field)) return out;
  for (const json& t : row.at(field))
    out.push_back({t.at("subject").get<size_t>(), t.at("object").get<size_t>(),
                   relation_id(names, t.at("relation").get<std::string>())});
  return out;
}

json triples_json(const std::vector<RelationTriple>& triples,
                  const std::vector<std::string>& names) {
  json arr = json::array();
  for (const RelationTriple& t : triples)
    arr.push_back({{"subject", t.subject},
                   {"object", t.object},
                   {"relation", names[static_cast<size_t>(t.relation)]}});
  return arr;
}

// ---- sub-command bodies --------------------------------------------------------

struct CommonArgs {
  std::optional<uint64_t> seed;
  size_t threads = 1;
};

int cmd_build_vocab(const CommonArgs&, const std::vector<std::string>& argv,
                    const std::vector<std::string>& data, const std::string& out,
                    size_t target_size, size_t min_count, bool doc_per_line) {
  Timer timer;
  RunManifest man;
  man.command = "build-vocab";
  man.argv = argv;
  man.config = {{"target_size", std::to_string(target_size)},
                {"min_count", std::to_string(min_count)},
                {"doc_per_line", doc_per_line ? "true" : "false"}};
  const auto files = gather_files(data);
  for (const auto& f : files) man.add_input(f);
  man.outputs = {out};
  write_manifest(man, out + ".manifest.json");

  size_t file_idx = 0, doc_idx = 0;
  std::vector<Document> docs;
  auto next = [&]() -> std::optional<std::string> {
    while (true) {
      if (doc_idx < docs.size()) return docs[doc_idx++].text;
      if (file_idx == files.size()) return std::nullopt;
      docs = read_documents(files[file_idx++], doc_per_line);
      doc_idx = 0;
    }
  };
  Vocab vocab = train_wordpiece(next, min_count, target_size);
  vocab.save(out);
  std::cerr << "build-vocab: " << vocab.size() << " pieces from "
            << files.size() << " file(s)\n";

  man.wall_clock_seconds = timer.seconds();
  man.status = "complete";
  write_manifest(man, out + ".manifest.json");
  return 0;
}

int cmd_preprocess(const CommonArgs&, const std::vector<std::string>& argv,
                   const std::vector<std::string>& data,
                   const std::string& vocab_path, const std::string& out,
                   size_t max_len, size_t min_len,
                   const std::string& lexicon_path, bool doc_per_line) {
  Timer timer;
  RunManifest man;
  man.command = "preprocess";
  man.argv = argv;
  man.config = {{"max_len", std::to_string(max_len)},
                {"min_len", std::to_string(min_len)},
                {"doc_per_line", doc_per_line ? "true" : "false"}};
  const auto files = gather_files(data);
  for (const auto& f : files) man.add_input(f);
  man.add_input(vocab_path);

  Vocab vocab = Vocab::load(vocab_path);
  std::unordered_set<std::string> lexicon;
  if (!lexicon_path.empty()) {
    man.add_input(lexicon_path);
    std::ifstream lex(lexicon_path);
    if (!lex) throw std::runtime_error("cannot read lexicon " + lexicon_path);
    std::string w;
    while (std::getline(lex, w))
      if (!w.empty()) lexicon.insert(w);
  }
  man.outputs = {out};
  write_manifest(man, out + ".manifest.json");

  std::vector<Document> docs;
  for (const auto& f : files)
    for (Document& d : read_documents(f, doc_per_line))
      docs.push_back(std::move(d));
  docs = dedup_documents(docs);
  std::vector<TokenSequence> seqs;
  for (const Document& d : docs)
    for (TokenSequence& s : chunk_document(d, vocab, max_len, min_len))
      seqs.push_back(lexicon.empty() ? std::move(s)
                                     : segment_words(std::move(s), vocab, lexicon));
  write_shard(out, seqs);
  std::cerr << "preprocess: " << docs.size() << " docs -> " << seqs.size()
            << " sequences\n";

  man.wall_clock_seconds = timer.seconds();
  man.status = "complete";
  write_manifest(man, out + ".manifest.json");
  return 0;
}

int cmd_pretrain(const CommonArgs& common, const std::vector<std::string>& argv,
                 const std::vector<std::string>& data,
                 const std::string& vocab_path, const std::string& out_dir,
                 const std::string& config_path, const std::string& ablation,
                 const std::string& resume) {
  Timer timer;
  TrainConfig cfg =
      config_path.empty() ? TrainConfig{} : parse_pretrain_config(config_path);
  if (ablation == "no-csp") {
    cfg.use_csp = false;
  } else if (ablation == "no-mts") {
    cfg.use_mts = false;
  } else if (ablation == "no-csp-mts") {
    cfg.use_csp = cfg.use_mts = false;
  } else if (ablation != "none") {
    throw std::invalid_argument("unknown ablation '" + ablation + "'");
  }
  Vocab vocab = Vocab::load(vocab_path);
  if (cfg.model.vocab_size == 0)
    cfg.model.vocab_size = vocab.size();
  else if (cfg.model.vocab_size != vocab.size())
    throw std::invalid_argument(
        "config vocab_size " + std::to_string(cfg.model.vocab_size) +
        " != vocabulary file size " + std::to_string(vocab.size()));
  cfg.seed = resolve_seed(common.seed, cfg.seed);
  cfg.validate();

  fs::create_directories(out_dir);
  RunManifest man;
  man.command = "pretrain";
  man.argv = argv;
  man.config = snapshot(cfg);
  man.seed = cfg.seed;
  for (const auto& shard : data) man.add_input(shard);
  man.add_input(vocab_path);
  if (!config_path.empty()) man.add_input(config_path);
  if (!resume.empty()) man.add_input(resume);
  man.outputs = {out_dir + "/metrics.tsv", out_dir + "/model-final.bin"};
  write_manifest(man, out_dir + "/manifest.json");

  std::vector<TokenSequence> seqs;
  for (const auto& shard : data)
    for (TokenSequence& s : read_shard(shard)) seqs.push_back(std::move(s));

  Pretrainer<float> tr(cfg, std::move(seqs));
  if (!resume.empty()) tr.restore(resume);
  std::ofstream metrics(out_dir + "/metrics.tsv",
                        resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics)
    throw std::runtime_error("cannot write " + out_dir + "/metrics.tsv");
  TeeBuf tee(metrics.rdbuf(), std::cerr.rdbuf());
  std::ostream log(&tee);
  run_pretraining(tr, log, out_dir);

  man.wall_clock_seconds = timer.seconds();
  man.status = "complete";
  write_manifest(man, out_dir + "/manifest.json");
  return 0;
}

template <typename Body>
int with_finetune_run(const CommonArgs& common,
                      const std::vector<std::string>& argv,
                      const std::string& task, const std::string& train_path,
                      const std::string& dev_path, const std::string& ckpt_path,
                      const std::string& config_path,
                      const std::string& vocab_path, const std::string& out_dir,
                      const std::vector<std::string>& extra_inputs, Body body) {
  Timer timer;
  FinetuneConfig cfg = config_path.empty() ? FinetuneConfig{}
                                           : parse_finetune_config(config_path);
  cfg.seed = resolve_seed(common.seed, cfg.seed);
  cfg.validate();

  CheckpointMeta meta = read_checkpoint_meta(ckpt_path);
  ModelConfig mcfg = model_config_from_meta(meta);
  auto model = Model<float>::make(mcfg, cfg.seed);
  read_checkpoint<float>(ckpt_path, model, nullptr);
  Vocab vocab = Vocab::load(vocab_path);
  if (vocab.size() != mcfg.vocab_size)
    throw std::runtime_error("vocabulary size " + std::to_string(vocab.size()) +
                             " != checkpoint vocab_size " +
                             std::to_string(mcfg.vocab_size));

  fs::create_directories(out_dir);
  RunManifest man;
  man.command = "finetune";
  man.argv = argv;
  man.config = snapshot(cfg);
  man.config["task"] = task;
  man.seed = cfg.seed;
  man.add_input(train_path);
  man.add_input(dev_path);
  man.add_input(ckpt_path);
  man.add_input(vocab_path);
  if (!config_path.empty()) man.add_input(config_path);
  for (const auto& p : extra_inputs) man.add_input(p);
  man.outputs = {out_dir + "/dev-pred.jsonl"};
  write_manifest(man, out_dir + "/manifest.json");

  const double score = body(cfg, model, vocab, out_dir);
  std::cout << "task=" << task << " dev_score=" << score << "\n";

  man.wall_clock_seconds = timer.seconds();
  man.status = "complete";
  write_manifest(man, out_dir + "/manifest.json");
  return 0;
}

int cmd_finetune(const CommonArgs& common, const std::vector<std::string>& argv,
                 const std::string& task, const std::string& train_path,
                 const std::string& dev_path, const std::string& ckpt_path,
                 const std::string& config_path, const std::string& vocab_path,
                 const std::string& out_dir, const std::string& schema_path,
                 const std::string& types_csv, double threshold) {
  const auto train_rows = read_jsonl(train_path);
  const auto dev_rows = read_jsonl(dev_path);

  if (task == "ner") {
    TagScheme scheme = TagScheme::standard();
    if (!types_csv.empty()) {
      scheme.other_types.clear();
      std::stringstream ss(types_csv);
      std::string t;
      while (std::getline(ss, t, ','))
        if (!t.empty() && t != "symptom") scheme.other_types.push_back(t);
      if (scheme.other_types.empty())
        throw std::invalid_argument("--types lists no non-symptom types");
    }
    return with_finetune_run(
        common, argv, task, train_path, dev_path, ckpt_path, config_path,
        vocab_path, out_dir, {},
        [&](FinetuneConfig& cfg, Model<float>& model, const Vocab& vocab,
            const std::string& out) {
          auto to_examples = [&](const std::vector<json>& rows) {
            std::vector<TaggingExample> exs;
            for (const json& r : rows) {
              TaggingExample ex;
              ex.ids = text_ids(r.at("text").get<std::string>(), vocab,
                                cfg.max_len - 2);
              ex.spans = spans_of(r, "entities");
              for (const EntitySpan& s : ex.spans)
                if (s.end >= ex.ids.size())
                  throw std::runtime_error(
                      "entity span exceeds tokenized text length");
              exs.push_back(std::move(ex));
            }
            return exs;
          };
          auto train = to_examples(train_rows);
          auto dev = to_examples(dev_rows);
          Rng hrng(hash_seed(cfg.seed, 0x4ead));
          TaggerHead<float> head(model.cfg.hidden, scheme, hrng);
          const double f1 =
              finetune_tagger(model, head, scheme, train, dev, cfg);
          std::vector<json> preds;
          for (size_t i = 0; i < dev.size(); ++i) {
            json row = dev_rows[i];
            row["pred_entities"] = spans_json(
                tagger_predict(model, head, scheme, dev[i].ids));
            preds.push_back(std::move(row));
          }
          write_jsonl(out + "/dev-pred.jsonl", preds);
          return f1;
        });
  }

  if (task == "re") {
    if (schema_path.empty())
      throw std::invalid_argument("--task re requires --schema");
    std::vector<std::string> names;
    RelationSchema schema = load_schema(schema_path, names);
    return with_finetune_run(
        common, argv, task, train_path, dev_path, ckpt_path, config_path,
        vocab_path, out_dir, {schema_path},
        [&](FinetuneConfig& cfg, Model<float>& model, const Vocab& vocab,
            const std::string& out) {
          auto to_examples = [&](const std::vector<json>& rows) {
            std::vector<RelationExample> exs;
            for (const json& r : rows) {
              RelationExample ex;
              ex.ids = text_ids(r.at("text").get<std::string>(), vocab,
                                cfg.max_len - 2);
              ex.spans = spans_of(r, "entities");
              ex.triples = triples_of(r, names, "triples");
              exs.push_back(std::move(ex));
            }
            return exs;
          };
          auto train = to_examples(train_rows);
          auto dev = to_examples(dev_rows);
          Rng hrng(hash_seed(cfg.seed, 0x4eae));
          MhsHead<float> head(model.cfg.hidden, schema, hrng);
          const double f1 = finetune_mhs(model, head, schema, train, dev, cfg,
                                         threshold);
          std::vector<json> preds;
          for (size_t i = 0; i < dev.size(); ++i) {
            json row = dev_rows[i];
            auto res = mhs_predict(model, head, schema, dev[i].ids, threshold);
            row["pred_entities"] = spans_json(res.spans);
            row["pred_triples"] = triples_json(res.triples, names);
            preds.push_back(std::move(row));
          }
          write_jsonl(out + "/dev-pred.jsonl", preds);
          return f1;
        });
  }

  if (task == "pair" || task == "cls") {
    return with_finetune_run(
        common, argv, task, train_path, dev_path, ckpt_path, config_path,
        vocab_path, out_dir, {},
        [&](FinetuneConfig& cfg, Model<float>& model, const Vocab& vocab,
            const std::string& out) {
          int max_label = 1;
          auto to_examples = [&](const std::vector<json>& rows) {
            std::vector<ClassifyExample> exs;
            for (const json& r : rows) {
              ClassifyExample ex;
              if (task == "pair")
                ex.input = pack_pair(r.at("s1").get<std::string>(),
                                     r.at("s2").get<std::string>(), vocab,
                                     cfg.max_len);
              else
                ex.input = pack_pair(r.at("text").get<std::string>(), "", vocab,
                                     cfg.max_len);
              ex.label = r.at("label").get<int>();
              if (ex.label < 0) throw std::runtime_error("negative label");
              max_label = std::max(max_label, ex.label);
              exs.push_back(std::move(ex));
            }
            return exs;
          };
          auto train = to_examples(train_rows);
          auto dev = to_examples(dev_rows);
          Rng hrng(hash_seed(cfg.seed, 0x4eaf));
          ClassifierHead<float> head(model.cfg.hidden,
                                     static_cast<size_t>(max_label) + 1, hrng);
          const double acc = finetune_classifier(model, head, train, dev, cfg);
          std::vector<json> preds;
          for (size_t i = 0; i < dev.size(); ++i) {
            json row = dev_rows[i];
            row["pred_label"] = classify_predict(model, head, dev[i].input);
            preds.push_back(std::move(row));
          }
          write_jsonl(out + "/dev-pred.jsonl", preds);
          return acc;
        });
  }

  if (task == "mc") {
    return with_finetune_run(
        common, argv, task, train_path, dev_path, ckpt_path, config_path,
        vocab_path, out_dir, {},
        [&](FinetuneConfig& cfg, Model<float>& model, const Vocab& vocab,
            const std::string& out) {
          auto to_examples = [&](const std::vector<json>& rows) {
            std::vector<ChoiceExample> exs;
            for (const json& r : rows) {
              ChoiceExample ex;
              const auto cands =
                  r.at("candidates").get<std::vector<std::string>>();
              for (const std::string& c : cands)
                ex.options.push_back(
                    pack_choice(c, r.at("question").get<std::string>(),
                                r.at("evidence").get<std::string>(), vocab,
                                cfg.max_len));
              ex.correct = r.at("answer").get<size_t>();
              if (ex.correct >= ex.options.size())
                throw std::runtime_error("answer index out of range");
              exs.push_back(std::move(ex));
            }
            return exs;
          };
          auto train = to_examples(train_rows);
          auto dev = to_examples(dev_rows);
          Rng hrng(hash_seed(cfg.seed, 0x4eb0));
          ClassifierHead<float> head(model.cfg.hidden, 1, hrng);
          const double acc = finetune_choice(model, head, train, dev, cfg);
          std::vector<json> preds;
          for (size_t i = 0; i < dev.size(); ++i) {
            json row = dev_rows[i];
            row["pred_answer"] = choice_predict(model, head, dev[i]);
            preds.push_back(std::move(row));
          }
          write_jsonl(out + "/dev-pred.jsonl", preds);
          return acc;
        });
  }

  throw std::invalid_argument("unknown task '" + task + "'");
}

int cmd_eval(const std::string& task, const std::string& pred_path,
             const std::string& gold_path) {
  const auto pred_rows = read_jsonl(pred_path);
  const auto gold_rows = read_jsonl(gold_path);
  if (pred_rows.size() != gold_rows.size())
    throw std::runtime_error("pred/gold line counts differ");

  if (task == "ner") {
    std::vector<std::vector<EntitySpan>> pred, gold;
    for (size_t i = 0; i < pred_rows.size(); ++i) {
      pred.push_back(spans_of(pred_rows[i], "pred_entities"));
      gold.push_back(spans_of(gold_rows[i], "entities"));
    }
    std::cout << "task=ner micro_f1=" << micro_f1(pred, gold) << "\n";
    return 0;
  }
  if (task == "re") {
    // relation names compare as strings; ids are file-local
    auto key_triples = [](const json& row, const char* field) {
      std::vector<std::string> out;
      if (!row.contains(field)) return out;
      for (const json& t : row.at(field))
        out.push_back(std::to_string(t.at("subject").get<size_t>()) + ":" +
                      std::to_string(t.at("object").get<size_t>()) + ":" +
                      t.at("relation").get<std::string>());
      return out;
    };
    std::vector<std::vector<std::string>> pred, gold;
    for (size_t i = 0; i < pred_rows.size(); ++i) {
      pred.push_back(key_triples(pred_rows[i], "pred_triples"));
      gold.push_back(key_triples(gold_rows[i], "triples"));
    }
    std::cout << "task=re micro_f1=" << micro_f1(pred, gold) << "\n";
    return 0;
  }
  if (task == "pair" || task == "cls") {
    std::vector<int> pred, gold;
    int classes = 0;
    for (size_t i = 0; i < pred_rows.size(); ++i) {
      pred.push_back(pred_rows[i].at("pred_label").get<int>());
      gold.push_back(gold_rows[i].at("label").get<int>());
      classes = std::max({classes, pred.back() + 1, gold.back() + 1});
    }
    std::cout << "task=" << task << " accuracy=" << accuracy(pred, gold)
              << " macro_f1="
              << macro_f1(pred, gold, static_cast<size_t>(classes)) << "\n";
    return 0;
  }
  if (task == "mc") {
    std::vector<int> pred, gold;
    for (size_t i = 0; i < pred_rows.size(); ++i) {
      pred.push_back(pred_rows[i].at("pred_answer").get<int>());
      gold.push_back(gold_rows[i].at("answer").get<int>());
    }
    std::cout << "task=mc accuracy=" << accuracy(pred, gold) << "\n";
    return 0;
  }
  if (task == "cdn") {
    std::vector<std::vector<std::string>> ranked, gold;
    for (size_t i = 0; i < pred_rows.size(); ++i) {
      ranked.push_back(
          pred_rows[i].at("candidates").get<std::vector<std::string>>());
      gold.push_back(gold_rows[i].at("gold").get<std::vector<std::string>>());
    }
    std::cout << "task=cdn p_at_1=" << p_at_1(ranked, gold) << "\n";
    return 0;
  }
  throw std::invalid_argument("unknown task '" + task + "'");
}

int cmd_cdn(const std::vector<std::string>& argv, const std::string& input,
            const std::string& terminology_path, const std::string& out,
            size_t top_n) {
  Timer timer;
  RunManifest man;
  man.command = "cdn";
  man.argv = argv;
  man.config = {{"top_n", std::to_string(top_n)}};
  man.add_input(input);
  man.add_input(terminology_path);
  man.outputs = {out};
  write_manifest(man, out + ".manifest.json");

  std::ifstream term_in(terminology_path);
  if (!term_in)
    throw std::runtime_error("cannot read terminology " + terminology_path);
  std::vector<std::string> terminology;
  std::string line;
  while (std::getline(term_in, line))
    if (!line.empty()) terminology.push_back(line);

  std::vector<json> rows = read_jsonl(input);
  for (json& r : rows)
    r["candidates"] =
        cdn_candidates(r.at("term").get<std::string>(), terminology, top_n);
  write_jsonl(out, rows);

  man.wall_clock_seconds = timer.seconds();
  man.status = "complete";
  write_manifest(man, out + ".manifest.json");
  return 0;
}

int cmd_tokenize(const std::string& vocab_path, const std::string& text) {
  Vocab vocab = Vocab::load(vocab_path);
  TokenSequence seq = tokenize(text, vocab);
  std::string sep;
  for (int32_t id : seq.ids) {
    std::cout << sep << vocab.token(id);
    sep = ", ";
  }
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"discriminative biomedical-text pre-training toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  app.add_option("--seed", common.seed,
                 "run seed (falls back to EHDISCRIM_SEED, then the config)")
      ->envname("EHDISCRIM_SEED");
  app.add_option("--threads", common.threads, "worker-thread cap")
      ->check(CLI::PositiveNumber);
  app.set_version_flag("--version", std::string("ehdiscrim ") + kCodeVersion +
                                        " (" + kFormatVersions + ")");

  std::vector<std::string> full_argv(argv, argv + argc);

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab",
                                "train a WordPiece vocabulary from raw text");
  std::vector<std::string> bv_data;
  std::string bv_out;
  size_t bv_target = 2000, bv_min_count = 2;
  bool bv_paragraphs = false;
  bv->add_option("--data", bv_data, "input text file(s) or directory")
      ->required();
  bv->add_option("--out", bv_out, "output vocabulary path")->required();
  bv->add_option("--target-size", bv_target, "vocabulary size target");
  bv->add_option("--min-count", bv_min_count, "minimum piece frequency");
  bv->add_flag("--paragraphs", bv_paragraphs,
               "blank-line-separated documents instead of one per line");

  // preprocess
  auto* pp = app.add_subcommand("preprocess",
                                "tokenize and chunk raw text into a shard");
  std::vector<std::string> pp_data;
  std::string pp_vocab, pp_out, pp_lexicon;
  size_t pp_max_len = 512, pp_min_len = 32;
  bool pp_paragraphs = false;
  pp->add_option("--data", pp_data, "input text file(s) or directory")
      ->required();
  pp->add_option("--vocab", pp_vocab, "vocabulary file")->required();
  pp->add_option("--out", pp_out, "output shard path")->required();
  pp->add_option("--max-len", pp_max_len, "chunk length cap in tokens");
  pp->add_option("--min-len", pp_min_len, "minimum chunk length kept");
  pp->add_option("--lexicon", pp_lexicon, "word list for whole-word grouping");
  pp->add_flag("--paragraphs", pp_paragraphs,
               "blank-line-separated documents instead of one per line");

  // pretrain
  auto* pt = app.add_subcommand("pretrain", "run discriminative pre-training");
  std::vector<std::string> pt_data;
  std::string pt_vocab, pt_out, pt_config, pt_resume;
  std::string pt_ablation = "none";
  pt->add_option("--data", pt_data, "token shard(s)")->required();
  pt->add_option("--vocab", pt_vocab, "vocabulary file")->required();
  pt->add_option("--out", pt_out, "output directory")->required();
  pt->add_option("--config", pt_config, "key = value overrides");
  pt->add_option("--ablation", pt_ablation,
                 "loss ablation: none|no-csp|no-mts|no-csp-mts")
      ->check(CLI::IsMember({"none", "no-csp", "no-mts", "no-csp-mts"}));
  pt->add_option("--resume", pt_resume, "checkpoint to continue from");

  // finetune
  auto* ft = app.add_subcommand("finetune", "fine-tune on a labeled task");
  std::string ft_task, ft_train, ft_dev, ft_ckpt, ft_config, ft_vocab, ft_out;
  std::string ft_schema, ft_types;
  double ft_threshold = 0.5;
  ft->add_option("--task", ft_task, "ner|re|pair|cls|mc")->required();
  ft->add_option("--train", ft_train, "training JSON-lines file")->required();
  ft->add_option("--dev", ft_dev, "evaluation JSON-lines file")->required();
  ft->add_option("--checkpoint", ft_ckpt, "pre-trained checkpoint")->required();
  ft->add_option("--config", ft_config, "key = value overrides");
  ft->add_option("--vocab", ft_vocab, "vocabulary file")->required();
  ft->add_option("--out", ft_out, "output directory")->required();
  ft->add_option("--schema", ft_schema, "relation schema JSON (task re)");
  ft->add_option("--types", ft_types, "comma-separated entity types (task ner)");
  ft->add_option("--threshold", ft_threshold, "decode threshold (task re)");

  // eval
  auto* ev = app.add_subcommand("eval", "score predictions against gold");
  std::string ev_task, ev_pred, ev_gold;
  ev->add_option("--task", ev_task, "ner|re|pair|cls|mc|cdn")->required();
  ev->add_option("--pred", ev_pred, "prediction JSON-lines file")->required();
  ev->add_option("--gold", ev_gold, "gold JSON-lines file")->required();

  // cdn retrieval
  auto* cd = app.add_subcommand("cdn", "rank terminology candidates per term");
  std::string cd_input, cd_term, cd_out;
  size_t cd_top = 100;
  cd->add_option("--input", cd_input, "JSON-lines file with term fields")
      ->required();
  cd->add_option("--terminology", cd_term, "one standard term per line")
      ->required();
  cd->add_option("--out", cd_out, "output JSON-lines path")->required();
  cd->add_option("--top", cd_top, "candidates kept per term");

  // tokenize
  auto* tk = app.add_subcommand("tokenize", "print the pieces of one text");
  std::string tk_vocab, tk_text;
  tk->add_option("--vocab", tk_vocab, "vocabulary file")->required();
  tk->add_option("--text", tk_text, "input text")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (bv->parsed())
      return cmd_build_vocab(common, full_argv, bv_data, bv_out, bv_target,
                             bv_min_count, !bv_paragraphs);
    if (pp->parsed())
      return cmd_preprocess(common, full_argv, pp_data, pp_vocab, pp_out,
                            pp_max_len, pp_min_len, pp_lexicon,
                            !pp_paragraphs);
    if (pt->parsed())
      return cmd_pretrain(common, full_argv, pt_data, pt_vocab, pt_out,
                          pt_config, pt_ablation, pt_resume);
    if (ft->parsed())
      return cmd_finetune(common, full_argv, ft_task, ft_train, ft_dev,
                          ft_ckpt, ft_config, ft_vocab, ft_out, ft_schema,
                          ft_types, ft_threshold);
    if (ev->parsed()) return cmd_eval(ev_task, ev_pred, ev_gold);
    if (cd->parsed())
      return cmd_cdn(full_argv, cd_input, cd_term, cd_out, cd_top);
    if (tk->parsed()) return cmd_tokenize(tk_vocab, tk_text);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
