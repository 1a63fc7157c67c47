#pragma once

// Shared aliases, the part enumeration and the error taxonomy used by every
// module. The CLI maps each error type to its own exit code, so throw the
// most specific one that applies.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace glosmo {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable or structurally wrong files (bad magic, bad JSON shape).
struct format_error : error {
  using error::error;
};

// File readable but contents inconsistent (size mismatch, spans that do not
// tile, hash mismatch).
struct corruption_error : error {
  using error::error;
};

// Normalization of an all-zero distribution, non-finite intermediate, etc.
struct numeric_error : error {
  using error::error;
};

// Divergence or non-finite loss during an optimization loop.
struct training_error : error {
  using error::error;
};

// Evaluation preconditions not met (recognizer below its quality gate).
struct eval_gate_error : error {
  using error::error;
};

// A required input artifact (dataset, checkpoint) is missing.
struct dependency_error : error {
  using error::error;
};

struct unknown_gloss_error : error {
  using error::error;
};

// Carries the JSON path of the offending field so CLI users can fix configs
// without reading source.
struct config_error : error {
  std::string field_path;
  config_error(std::string path, const std::string& msg)
      : error(path.empty() ? msg : path + ": " + msg), field_path(std::move(path)) {}
};

enum class Part { body = 0, lhand = 1, rhand = 2, face = 3 };

inline constexpr std::array<Part, 4> kParts{Part::body, Part::lhand, Part::rhand, Part::face};

inline const char* part_name(Part p) {
  switch (p) {
    case Part::body: return "body";
    case Part::lhand: return "lhand";
    case Part::rhand: return "rhand";
    case Part::face: return "face";
  }
  return "?";
}

inline Part part_from_name(const std::string& s) {
  for (Part p : kParts)
    if (s == part_name(p)) return p;
  throw std::invalid_argument("unknown part name: " + s);
}

template <typename S>
bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}

// Round to nearest, ties to even. Independent of the FPU rounding mode.
inline long long round_half_even(double x) {
  double f = std::floor(x);
  double diff = x - f;
  if (diff > 0.5) return static_cast<long long>(f) + 1;
  if (diff < 0.5) return static_cast<long long>(f);
  long long lo = static_cast<long long>(f);
  return (lo % 2 == 0) ? lo : lo + 1;
}

// Half-open [begin, end) frame ranges. A valid span list tiles [0, length).
using Span = std::pair<int, int>;

struct TrainStats {
  std::vector<double> epoch_loss;
};

inline void validate_spans_tile(const std::vector<Span>& spans, int length) {
  if (spans.empty()) throw std::invalid_argument("span list is empty");
  int cursor = 0;
  for (const auto& [b, e] : spans) {
    if (b != cursor || e < b)
      throw std::invalid_argument("spans do not tile [0," + std::to_string(length) + ")");
    cursor = e;
  }
  if (cursor != length)
    throw std::invalid_argument("spans end at " + std::to_string(cursor) + ", expected " +
                                std::to_string(length));
}

// Maps frame-resolution span boundaries onto the latent grid produced by a
// temporal downsampling factor r. Boundaries are rounded half-to-even, the
// ends are pinned to 0 and latent_len, and interior boundaries are clamped
// to keep the list monotone (a short gloss may end up with an empty span).
inline std::vector<Span> to_latent_spans(const std::vector<Span>& frame_spans, int r,
                                         int latent_len) {
  if (r < 1) throw std::invalid_argument("downsample factor must be >= 1");
  if (latent_len < 1) throw std::invalid_argument("latent length must be >= 1");
  std::vector<int> bounds;
  bounds.reserve(frame_spans.size() + 1);
  bounds.push_back(0);
  for (std::size_t i = 0; i + 1 < frame_spans.size(); ++i) {
    long long b = round_half_even(static_cast<double>(frame_spans[i].second) / r);
    if (b < bounds.back()) b = bounds.back();
    if (b > latent_len) b = latent_len;
    bounds.push_back(static_cast<int>(b));
  }
  bounds.push_back(latent_len);
  std::vector<Span> out;
  out.reserve(frame_spans.size());
  for (std::size_t i = 0; i + 1 < bounds.size(); ++i) out.emplace_back(bounds[i], bounds[i + 1]);
  return out;
}

}  // namespace glosmo
