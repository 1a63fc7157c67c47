#pragma once

// Gloss-side conditioning. A gloss sequence plus per-gloss frame lengths
// becomes a repeat-and-stack grid: one embedding row per frame, constant
// within a gloss span. The grid is average-pooled to the latent frame rate,
// so token positions near a boundary see a mix of the two neighbouring
// embeddings. At generation time span widths come from per-gloss mean
// lengths observed in training data.

#include <glosmo/common.hpp>
#include <glosmo/dataset.hpp>
#include <glosmo/serialize.hpp>

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace glosmo {

// The stand-in for a full translation front-end: splits on whitespace,
// reverses the word order (the corpus stores text reversed relative to the
// gloss stream) and maps names to ids.
inline std::vector<int> text_to_gloss(const std::string& text, const GlossVocab& vocab) {
  std::istringstream in(text);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  if (words.empty()) throw std::invalid_argument("text contains no words");
  std::vector<int> out;
  out.reserve(words.size());
  for (auto it = words.rbegin(); it != words.rend(); ++it) {
    int id = vocab.id_by_name(*it);
    if (id < 0) throw unknown_gloss_error("unknown gloss word: " + *it);
    out.push_back(id);
  }
  return out;
}

struct LengthStats {
  std::map<int, double> sum_by_gloss;
  std::map<int, int> count_by_gloss;
  double global_sum = 0;
  long global_count = 0;

  [[nodiscard]] static LengthStats fit(const std::vector<SampleRecord>& samples) {
    LengthStats st;
    for (const auto& s : samples) {
      if (s.glosses.size() != s.spans.size())
        throw std::invalid_argument("sample " + s.sample_id + " has mismatched gloss/span lists");
      for (std::size_t i = 0; i < s.glosses.size(); ++i) {
        int len = s.spans[i].second - s.spans[i].first;
        st.sum_by_gloss[s.glosses[i]] += len;
        st.count_by_gloss[s.glosses[i]] += 1;
        st.global_sum += len;
        st.global_count += 1;
      }
    }
    if (st.global_count == 0) throw std::invalid_argument("no spans to fit length stats");
    return st;
  }

  double global_mean() const { return global_sum / static_cast<double>(global_count); }

  // Unseen glosses fall back to the global mean.
  double mean_for(int gloss) const {
    auto it = sum_by_gloss.find(gloss);
    if (it == sum_by_gloss.end()) return global_mean();
    return it->second / count_by_gloss.at(gloss);
  }

  json to_json() const {
    json per = json::object();
    for (const auto& [g, sum] : sum_by_gloss)
      per[std::to_string(g)] = {{"sum", sum}, {"count", count_by_gloss.at(g)}};
    return {{"per_gloss", per}, {"global_sum", global_sum}, {"global_count", global_count}};
  }

  static LengthStats from_json(const json& j) {
    LengthStats st;
    st.global_sum = j.at("global_sum").get<double>();
    st.global_count = j.at("global_count").get<long>();
    for (auto it = j.at("per_gloss").begin(); it != j.at("per_gloss").end(); ++it) {
      int g = std::stoi(it.key());
      st.sum_by_gloss[g] = it.value().at("sum").get<double>();
      st.count_by_gloss[g] = it.value().at("count").get<int>();
    }
    return st;
  }
};

// Per-gloss mean lengths rounded half-to-even. If the total would exceed
// max_frames the lengths are rescaled proportionally and floored, and the
// leftover frames go to the longest glosses.
inline std::vector<int> predict_lengths(const std::vector<int>& glosses, const LengthStats& stats,
                                        int max_frames = 180) {
  if (glosses.empty()) throw std::invalid_argument("no glosses to predict lengths for");
  if (stats.global_count == 0) throw std::invalid_argument("predict_lengths: empty length stats");
  if (max_frames < static_cast<int>(glosses.size()))
    throw std::invalid_argument("max_frames cannot fit one frame per gloss");
  std::vector<int> lengths(glosses.size());
  long total = 0;
  for (std::size_t i = 0; i < glosses.size(); ++i) {
    lengths[i] = std::max<int>(1, static_cast<int>(round_half_even(stats.mean_for(glosses[i]))));
    total += lengths[i];
  }
  if (total <= max_frames) return lengths;

  std::vector<int> scaled(glosses.size());
  long base_total = 0;
  for (std::size_t i = 0; i < glosses.size(); ++i) {
    scaled[i] = static_cast<int>(static_cast<long>(lengths[i]) * max_frames / total);
    base_total += scaled[i];
  }
  // hand the remainder to the longest glosses, earliest first on ties
  std::vector<std::size_t> order(glosses.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] > lengths[b]; });
  long rem = max_frames - base_total;
  for (std::size_t k = 0; rem > 0; k = (k + 1) % order.size(), --rem) scaled[order[k]] += 1;
  // a very short gloss can floor to zero frames; steal from the longest
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    while (scaled[i] < 1) {
      std::size_t donor = order.front();
      if (scaled[donor] <= 1) break;
      scaled[donor] -= 1;
      scaled[i] += 1;
    }
  }
  return scaled;
}

struct ConditionGrid {
  MatF grid;               // one row per (frame or latent) position
  std::vector<Span> spans; // positions covered by each gloss
};

// Frame-resolution repeat-and-stack grid: row f carries the embedding of the
// gloss whose span contains f, bit-exactly.
inline ConditionGrid build_gloss_condition(const std::vector<int>& glosses,
                                           const std::vector<int>& lengths,
                                           const MatF& embedding_table) {
  if (glosses.empty() || glosses.size() != lengths.size())
    throw std::invalid_argument("need one length per gloss");
  long total = 0;
  for (std::size_t i = 0; i < glosses.size(); ++i) {
    if (glosses[i] < 0 || glosses[i] >= embedding_table.rows())
      throw std::invalid_argument("gloss id outside the embedding table");
    if (lengths[i] < 1) throw std::invalid_argument("gloss span must be at least one frame");
    total += lengths[i];
  }
  ConditionGrid out;
  out.grid.resize(total, embedding_table.cols());
  int cursor = 0;
  for (std::size_t i = 0; i < glosses.size(); ++i) {
    for (int f = 0; f < lengths[i]; ++f) out.grid.row(cursor + f) = embedding_table.row(glosses[i]);
    out.spans.emplace_back(cursor, cursor + lengths[i]);
    cursor += lengths[i];
  }
  return out;
}

// Sentence-level baseline: the mean of the gloss embeddings broadcast over
// every frame, i.e. no temporal alignment at all.
inline ConditionGrid build_sentence_condition(const std::vector<int>& glosses, int total_frames,
                                              const MatF& embedding_table) {
  if (glosses.empty()) throw std::invalid_argument("no glosses");
  if (total_frames < 1) throw std::invalid_argument("need at least one frame");
  Eigen::RowVectorXf mean = Eigen::RowVectorXf::Zero(embedding_table.cols());
  for (int g : glosses) {
    if (g < 0 || g >= embedding_table.rows())
      throw std::invalid_argument("gloss id outside the embedding table");
    mean += embedding_table.row(g);
  }
  mean /= static_cast<float>(glosses.size());
  ConditionGrid out;
  out.grid = mean.replicate(total_frames, 1);
  out.spans.emplace_back(0, total_frames);
  return out;
}

// Average-pool to the latent frame rate. Windows that straddle a gloss
// boundary blend the neighbouring embeddings proportionally.
inline ConditionGrid downsample_condition(const ConditionGrid& cond, int r) {
  if (r < 1) throw std::invalid_argument("downsample factor must be >= 1");
  int latent_len = static_cast<int>(cond.grid.rows()) / r;
  if (latent_len < 1) throw std::invalid_argument("condition shorter than one latent step");
  ConditionGrid out;
  out.grid.resize(latent_len, cond.grid.cols());
  for (int i = 0; i < latent_len; ++i)
    out.grid.row(i) = cond.grid.middleRows(i * r, r).colwise().mean();
  out.spans = to_latent_spans(cond.spans, r, latent_len);
  return out;
}

}  // namespace glosmo
