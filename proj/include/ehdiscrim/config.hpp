#pragma once

#include <concepts>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ehdiscrim/finetune.hpp"
#include "ehdiscrim/trainer.hpp"

namespace ehd {

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Flat `key = value` lines; '#' starts a comment, blank lines skipped,
// duplicate keys rejected.
inline std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::map<std::string, std::string> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " has no '=' in " + path);
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key.empty() || val.empty())
      throw std::invalid_argument("config: empty key or value at line " +
                                  std::to_string(lineno) + " in " + path);
    if (!out.emplace(key, val).second)
      throw std::invalid_argument("config: duplicate key '" + key + "'");
  }
  return out;
}

// Consumes typed keys; anything left over at finish() is unknown.
class ConfigReader {
 public:
  explicit ConfigReader(std::map<std::string, std::string> kv)
      : kv_(std::move(kv)) {}

  template <typename U>
    requires std::unsigned_integral<U>
  void take(const std::string& key, U& out) {
    if (auto v = fetch(key)) out = static_cast<U>(parse_unsigned(key, *v));
  }
  void take(const std::string& key, double& out) {
    if (auto v = fetch(key)) {
      size_t used = 0;
      double d;
      try {
        d = std::stod(*v, &used);
      } catch (const std::exception&) {
        throw std::invalid_argument(bad_value(key, *v, "a number"));
      }
      if (used != v->size())
        throw std::invalid_argument(bad_value(key, *v, "a number"));
      out = d;
    }
  }
  // exact fraction "a/b" (or plain "a")
  void take_fraction(const std::string& key, unsigned& num, unsigned& den) {
    if (auto v = fetch(key)) {
      const size_t slash = v->find('/');
      try {
        if (slash == std::string::npos) {
          num = static_cast<unsigned>(parse_unsigned(key, *v));
          den = 1;
        } else {
          num = static_cast<unsigned>(
              parse_unsigned(key, trim(v->substr(0, slash))));
          den = static_cast<unsigned>(
              parse_unsigned(key, trim(v->substr(slash + 1))));
        }
      } catch (const std::exception&) {
        throw std::invalid_argument(bad_value(key, *v, "a fraction like 1/3"));
      }
    }
  }

  void finish() const {
    for (const auto& [k, v] : kv_)
      if (!used_.count(k))
        throw std::invalid_argument("config: unknown key '" + k + "'");
  }

 private:
  std::optional<std::string> fetch(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }
  static std::string bad_value(const std::string& key, const std::string& v,
                               const std::string& want) {
    return "config: key '" + key + "' expects " + want + ", got '" + v + "'";
  }
  size_t parse_unsigned(const std::string& key, const std::string& v) {
    size_t used = 0;
    unsigned long long n;
    try {
      n = std::stoull(v, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument(bad_value(key, v, "an unsigned integer"));
    }
    if (used != v.size() || v[0] == '-')
      throw std::invalid_argument(bad_value(key, v, "an unsigned integer"));
    return static_cast<size_t>(n);
  }

  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

}  // namespace detail

// Pre-training defaults are the published full-scale recipe; a config file
// overrides individual keys only.
inline TrainConfig parse_pretrain_config(const std::string& path) {
  detail::ConfigReader r(detail::read_kv_file(path));
  TrainConfig cfg;
  r.take("layers", cfg.model.layers);
  r.take("hidden", cfg.model.hidden);
  r.take("heads", cfg.model.heads);
  r.take("intermediate", cfg.model.intermediate);
  r.take("embedding_size", cfg.model.embedding_size);
  r.take("max_positions", cfg.model.max_positions);
  r.take("vocab_size", cfg.model.vocab_size);
  r.take_fraction("generator_multiplier", cfg.model.gen_mult_num,
                  cfg.model.gen_mult_den);
  r.take("dropout", cfg.model.dropout);
  r.take("lambda_rtd", cfg.weights.lambda1);
  r.take("lambda_mts", cfg.weights.lambda2);
  r.take("lambda_csp", cfg.weights.lambda3);
  r.take("k", cfg.k);
  r.take("tau", cfg.tau);
  r.take("mask_rate", cfg.mask_rate);
  r.take("p_mask", cfg.p_mask);
  r.take("p_random", cfg.p_random);
  r.take("batch_size", cfg.batch_size);
  r.take("max_steps", cfg.max_steps);
  r.take("warmup_steps", cfg.warmup_steps);
  r.take("learning_rate", cfg.peak_lr);
  r.take("beta1", cfg.beta1);
  r.take("beta2", cfg.beta2);
  r.take("adam_eps", cfg.adam_eps);
  r.take("weight_decay", cfg.weight_decay);
  r.take("seed", cfg.seed);
  r.take("log_interval", cfg.log_interval);
  r.take("checkpoint_interval", cfg.checkpoint_interval);
  r.finish();
  return cfg;
}

inline FinetuneConfig parse_finetune_config(const std::string& path) {
  detail::ConfigReader r(detail::read_kv_file(path));
  FinetuneConfig cfg;
  r.take("epochs", cfg.epochs);
  r.take("batch_size", cfg.batch_size);
  r.take("learning_rate", cfg.peak_lr);
  r.take("warmup_ratio", cfg.warmup_ratio);
  r.take("beta1", cfg.beta1);
  r.take("beta2", cfg.beta2);
  r.take("adam_eps", cfg.adam_eps);
  r.take("weight_decay", cfg.weight_decay);
  r.take("ema_decay", cfg.ema_decay);
  r.take("seed", cfg.seed);
  r.take("max_len", cfg.max_len);
  r.finish();
  cfg.validate();
  return cfg;
}

}  // namespace ehd
