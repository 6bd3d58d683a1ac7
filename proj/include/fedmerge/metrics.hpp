#pragma once

#include <algorithm>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmerge/dataset.hpp"
#include "fedmerge/model.hpp"
#include "fedmerge/nn.hpp"

namespace fedmerge {

using TokenSequence = std::vector<std::string>;

inline TokenSequence tokenize(const std::string& text) {
  TokenSequence tokens;
  std::istringstream in(text);
  std::string t;
  while (in >> t) tokens.push_back(t);
  return tokens;
}

/// Word error rate: Levenshtein distance (unit substitution/insertion/
/// deletion costs) over the reference length. Can exceed 1.
inline double wer(const TokenSequence& hypothesis, const TokenSequence& reference) {
  if (reference.empty()) {
    throw std::domain_error("wer: reference must be non-empty");
  }
  const std::size_t n = hypothesis.size(), m = reference.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub =
          prev[j - 1] + (hypothesis[i - 1] == reference[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(m);
}

inline double error_rate(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size() || labels.empty()) {
    throw std::invalid_argument("error_rate: length mismatch or empty input");
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] != labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

// Fitness adapters: lower is better for both.

inline double error_rate_fitness(const ModelParams& model, const Dataset& data) {
  return error_rate(predict(model, data), data.labels);
}

inline double mean_loss_fitness(const ModelParams& model, const Dataset& data) {
  return forward_loss(model, data);
}

}  // namespace fedmerge
