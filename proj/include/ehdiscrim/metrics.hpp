#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace ehd {

inline double accuracy(const std::vector<int>& pred,
                       const std::vector<int>& gold) {
  if (pred.size() != gold.size() || pred.empty())
    throw std::invalid_argument("accuracy: size mismatch or empty");
  size_t hit = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == gold[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// Micro-averaged F1 over per-example item sets (exact-match items). Duplicates
// within an example count once.
template <typename T>
double micro_f1(const std::vector<std::vector<T>>& pred,
                const std::vector<std::vector<T>>& gold) {
  if (pred.size() != gold.size())
    throw std::invalid_argument("micro_f1: example counts differ");
  size_t tp = 0, np = 0, ng = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    std::vector<T> p = pred[i], q = gold[i];
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    std::sort(q.begin(), q.end());
    q.erase(std::unique(q.begin(), q.end()), q.end());
    np += p.size();
    ng += q.size();
    std::vector<T> both;
    std::set_intersection(p.begin(), p.end(), q.begin(), q.end(),
                          std::back_inserter(both));
    tp += both.size();
  }
  if (np + ng == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(np + ng);
}

// Unweighted mean of per-class F1 over all `classes` labels; a class absent
// from both pred and gold contributes F1 = 0.
inline double macro_f1(const std::vector<int>& pred,
                       const std::vector<int>& gold, size_t classes) {
  if (pred.size() != gold.size() || pred.empty())
    throw std::invalid_argument("macro_f1: size mismatch or empty");
  if (classes == 0) throw std::invalid_argument("macro_f1: no classes");
  std::vector<size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], g = gold[i];
    if (p < 0 || g < 0 || static_cast<size_t>(p) >= classes ||
        static_cast<size_t>(g) >= classes)
      throw std::invalid_argument("macro_f1: label out of range");
    if (p == g)
      ++tp[static_cast<size_t>(p)];
    else {
      ++fp[static_cast<size_t>(p)];
      ++fn[static_cast<size_t>(g)];
    }
  }
  double sum = 0.0;
  for (size_t c = 0; c < classes; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    sum += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / denom;
  }
  return sum / static_cast<double>(classes);
}

// Fraction of examples whose top-ranked candidate is a gold answer.
inline double p_at_1(const std::vector<std::vector<std::string>>& ranked,
                     const std::vector<std::vector<std::string>>& gold) {
  if (ranked.size() != gold.size() || ranked.empty())
    throw std::invalid_argument("p_at_1: size mismatch or empty");
  size_t hit = 0;
  for (size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i].empty()) continue;
    if (std::find(gold[i].begin(), gold[i].end(), ranked[i][0]) !=
        gold[i].end())
      ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(ranked.size());
}

}  // namespace ehd
