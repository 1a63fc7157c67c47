#pragma once

// Synthetic gloss-annotated motion corpus. Each gloss owns a set of keyposes
// per body part; a sample interpolates the keyposes of its glosses over their
// frame spans, cross-fades at gloss boundaries and adds Gaussian jitter.
// Samples round-trip through a small binary container plus a JSON manifest.

#include <glosmo/common.hpp>
#include <glosmo/rng.hpp>
#include <glosmo/serialize.hpp>

#include <algorithm>
#include <array>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace glosmo {

struct SkeletonSpec {
  int joints_body = 8;
  int joints_lhand = 6;
  int joints_rhand = 6;
  int joints_face = 4;

  static constexpr int kChannelsPerJoint = 3;

  int joints(Part p) const {
    switch (p) {
      case Part::body: return joints_body;
      case Part::lhand: return joints_lhand;
      case Part::rhand: return joints_rhand;
      case Part::face: return joints_face;
    }
    return 0;
  }

  int channels(Part p) const { return joints(p) * kChannelsPerJoint; }

  int total_joints() const { return joints_body + joints_lhand + joints_rhand + joints_face; }
  int total_channels() const { return total_joints() * kChannelsPerJoint; }

  // Column offset of a part inside the concatenated [body|lhand|rhand|face]
  // channel layout.
  int channel_offset(Part p) const {
    int off = 0;
    for (Part q : kParts) {
      if (q == p) return off;
      off += channels(q);
    }
    return off;
  }

  // The last two body joints act as wrists; each hand's joint 0 is pinned
  // to its wrist so hand and arm motion stay physically coupled.
  int wrist_joint(Part hand) const {
    if (hand == Part::lhand) return joints_body - 2;
    if (hand == Part::rhand) return joints_body - 1;
    throw std::invalid_argument("wrist_joint: expected a hand part");
  }

  void validate() const {
    if (joints_body < 2 || joints_lhand < 1 || joints_rhand < 1 || joints_face < 1)
      throw std::invalid_argument("skeleton needs at least 2 body joints and 1 joint per part");
  }

  bool operator==(const SkeletonSpec&) const = default;
};

struct GlossEntry {
  int id = -1;
  std::string name;
  // One matrix per part, all with the same keypose count: [n_keyposes x channels(part)].
  std::array<MatF, 4> keyposes;

  int keypose_count() const { return static_cast<int>(keyposes[0].rows()); }
};

struct GlossVocab {
  SkeletonSpec skeleton;
  std::vector<GlossEntry> entries;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(entries.size()); }

  const GlossEntry& by_id(int id) const {
    if (id < 0 || id >= size()) throw std::invalid_argument("gloss id out of range");
    return entries[static_cast<std::size_t>(id)];
  }

  // -1 when absent.
  int id_by_name(const std::string& name) const {
    for (const GlossEntry& e : entries)
      if (e.name == name) return e.id;
    return -1;
  }
};

namespace detail {

// Cubic smoothstep; zero first derivative at both ends so keyposes are hit
// with momentum dying out, which reads as a held pose.
inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace detail

// Pose of a gloss at integer frame `offset` of a span of `span_len` frames,
// with the offset clamped into the span. Interpolates between consecutive
// keyposes in double and casts once.
inline Eigen::RowVectorXf template_pose_at(const GlossEntry& entry, Part part, int span_len,
                                           int offset) {
  if (span_len < 1) throw std::invalid_argument("span length must be >= 1");
  const MatF& kp = entry.keyposes[static_cast<std::size_t>(part)];
  int n = static_cast<int>(kp.rows());
  offset = std::clamp(offset, 0, span_len - 1);
  double u = span_len == 1 ? 0.0 : static_cast<double>(offset) / (span_len - 1);
  double s = u * (n - 1);
  int k = std::min(static_cast<int>(s), n - 2);
  if (n == 1) k = 0;
  double tau = n == 1 ? 0.0 : s - k;
  double w = detail::smoothstep(tau);
  Eigen::RowVectorXd a = kp.row(k).cast<double>();
  Eigen::RowVectorXd b = kp.row(std::min(k + 1, n - 1)).cast<double>();
  return ((1.0 - w) * a + w * b).cast<float>();
}

// Noise-free trajectory of one gloss for one part: [length x channels(part)].
inline MatF template_trajectory(const GlossEntry& entry, Part part, int length) {
  if (length < 1) throw std::invalid_argument("trajectory length must be >= 1");
  MatF out(length, entry.keyposes[static_cast<std::size_t>(part)].cols());
  for (int f = 0; f < length; ++f) out.row(f) = template_pose_at(entry, part, length, f);
  return out;
}

// RMS distance between two glosses rendered at a canonical length, over all
// parts. Used to keep the vocabulary separable.
inline double template_distance(const SkeletonSpec& sk, const GlossEntry& a, const GlossEntry& b,
                                int canon_len = 16) {
  double sq = 0.0;
  long count = 0;
  for (Part p : kParts) {
    MatF ta = template_trajectory(a, p, canon_len);
    MatF tb = template_trajectory(b, p, canon_len);
    sq += (ta - tb).cast<double>().squaredNorm();
    count += ta.size();
  }
  (void)sk;
  return std::sqrt(sq / static_cast<double>(count));
}

struct VocabParams {
  int min_keyposes = 3;
  int max_keyposes = 5;
  double pose_scale = 1.0;       // keypose coordinates drawn from [-scale, scale]
  double min_distance = 0.35;    // RMS floor between any two gloss templates
  int max_attempts = 1000;       // resamples allowed per gloss before giving up
};

// Draws `vocab_size` glosses with mutually distinct templates. Within one
// gloss every part shares the keypose count, and each hand's root joint is
// copied from the matching body wrist at each keypose, so the rendered hand
// root follows the wrist exactly.
inline GlossVocab make_vocab(int vocab_size, const SkeletonSpec& skeleton, std::uint64_t seed,
                             const VocabParams& vp = {}) {
  if (vocab_size < 2) throw std::invalid_argument("vocab size must be >= 2");
  skeleton.validate();
  GlossVocab vocab;
  vocab.skeleton = skeleton;
  vocab.seed = seed;
  Rng rng(seed);
  for (int id = 0; id < vocab_size; ++id) {
    GlossEntry entry;
    entry.id = id;
    entry.name = "g" + std::to_string(id);
    bool placed = false;
    for (int attempt = 0; attempt < vp.max_attempts && !placed; ++attempt) {
      int n_kp = static_cast<int>(rng.uniform_int(vp.min_keyposes, vp.max_keyposes));
      for (Part p : kParts) {
        MatF kp(n_kp, skeleton.channels(p));
        for (int i = 0; i < n_kp; ++i)
          for (int c = 0; c < kp.cols(); ++c)
            kp(i, c) = static_cast<float>(rng.uniform(-vp.pose_scale, vp.pose_scale));
        entry.keyposes[static_cast<std::size_t>(p)] = std::move(kp);
      }
      for (Part hand : {Part::lhand, Part::rhand}) {
        int wrist = skeleton.wrist_joint(hand);
        MatF& hkp = entry.keyposes[static_cast<std::size_t>(hand)];
        const MatF& bkp = entry.keyposes[static_cast<std::size_t>(Part::body)];
        for (int i = 0; i < n_kp; ++i)
          hkp.block(i, 0, 1, 3) = bkp.block(i, wrist * 3, 1, 3);
      }
      placed = true;
      for (const GlossEntry& other : vocab.entries)
        if (template_distance(skeleton, entry, other) < vp.min_distance) {
          placed = false;
          break;
        }
    }
    if (!placed)
      throw error("could not place gloss " + std::to_string(id) +
                  " at the requested template distance; lower min_distance or vocab size");
    vocab.entries.push_back(std::move(entry));
  }
  return vocab;
}

struct SampleRecord {
  std::string sample_id;
  std::vector<int> glosses;
  std::vector<Span> spans;  // frame spans, tile [0, length)
  std::string text;
  MatF motion;  // [length x total_channels], parts concatenated
  double frame_rate = 25.0;

  int length() const { return static_cast<int>(motion.rows()); }
};

struct RenderParams {
  double noise_scale = 0.02;
  int max_frames = 180;
  int min_span = 4;
  double frame_rate = 25.0;
};

// Text side of a sample: gloss names in reverse order, so gloss and word
// order differ and a text front-end has real reordering to undo.
inline std::string glosses_to_text(const GlossVocab& vocab, const std::vector<int>& glosses) {
  std::string text;
  for (auto it = glosses.rbegin(); it != glosses.rend(); ++it) {
    if (!text.empty()) text += ' ';
    text += vocab.by_id(*it).name;
  }
  return text;
}

// Renders one sample. Within each span the motion is the gloss template
// interpolation; at each internal boundary the two neighbours are blended
// over a window of 2*F frames centred on the boundary, F = floor(min(4,
// min(len_l, len_r)/4)). Gaussian noise is added last.
inline SampleRecord render_sample(const GlossVocab& vocab, const std::vector<int>& glosses,
                                  const std::vector<int>& lengths, std::uint64_t seed,
                                  const RenderParams& rp = {}) {
  if (glosses.empty() || glosses.size() != lengths.size())
    throw std::invalid_argument("need one length per gloss");
  long total = 0;
  for (std::size_t i = 0; i < glosses.size(); ++i) {
    vocab.by_id(glosses[i]);
    if (lengths[i] < rp.min_span)
      throw std::invalid_argument("span " + std::to_string(i) + " shorter than " +
                                  std::to_string(rp.min_span) + " frames");
    total += lengths[i];
  }
  if (total > rp.max_frames)
    throw std::invalid_argument("sample length " + std::to_string(total) + " exceeds max_frames " +
                                std::to_string(rp.max_frames));

  SampleRecord rec;
  rec.sample_id = "s" + std::to_string(seed);
  rec.glosses = glosses;
  rec.frame_rate = rp.frame_rate;
  int cursor = 0;
  for (int len : lengths) {
    rec.spans.emplace_back(cursor, cursor + len);
    cursor += len;
  }
  int L = static_cast<int>(total);
  rec.motion.resize(L, vocab.skeleton.total_channels());

  for (Part p : kParts) {
    int off = vocab.skeleton.channel_offset(p);
    int ch = vocab.skeleton.channels(p);
    for (std::size_t gi = 0; gi < glosses.size(); ++gi) {
      const GlossEntry& entry = vocab.by_id(glosses[gi]);
      auto [b, e] = rec.spans[gi];
      for (int f = b; f < e; ++f)
        rec.motion.block(f, off, 1, ch) = template_pose_at(entry, p, e - b, f - b);
    }
    // Cross-fades overwrite the frames around each internal boundary.
    for (std::size_t gi = 0; gi + 1 < glosses.size(); ++gi) {
      auto [lb, le] = rec.spans[gi];
      auto [nb, ne] = rec.spans[gi + 1];
      int len_l = le - lb, len_r = ne - nb;
      int fade = static_cast<int>(std::min(4.0, std::min(len_l, len_r) / 4.0));
      if (fade < 1) continue;
      const GlossEntry& left = vocab.by_id(glosses[gi]);
      const GlossEntry& right = vocab.by_id(glosses[gi + 1]);
      for (int k = 0; k < 2 * fade; ++k) {
        int f = le - fade + k;
        float w = (static_cast<float>(k) + 0.5f) / (2.0f * fade);
        Eigen::RowVectorXf a = template_pose_at(left, p, len_l, f - lb);
        Eigen::RowVectorXf c = template_pose_at(right, p, len_r, f - nb);
        rec.motion.block(f, off, 1, ch) = (1.0f - w) * a + w * c;
      }
    }
  }

  if (rp.noise_scale > 0.0) {
    Rng rng(seed);
    for (int f = 0; f < L; ++f)
      for (int c = 0; c < rec.motion.cols(); ++c)
        rec.motion(f, c) += static_cast<float>(rp.noise_scale * rng.gaussian());
  }
  rec.text = glosses_to_text(vocab, glosses);
  return rec;
}

struct CorpusParams {
  int n_samples = 100;
  int min_glosses = 3;
  int max_glosses = 6;
  int min_span = 12;
  int max_span = 20;
  RenderParams render;
};

// Draws gloss sequences (no immediate repeats, so duplicate-collapsing
// recognizer decoding stays lossless) and renders each sample.
inline std::vector<SampleRecord> generate_corpus(const GlossVocab& vocab, const CorpusParams& cp,
                                                 std::uint64_t seed,
                                                 const std::string& id_prefix = "s") {
  if (cp.min_glosses < 1 || cp.max_glosses < cp.min_glosses)
    throw std::invalid_argument("bad gloss count range");
  if (cp.min_span < cp.render.min_span || cp.max_span < cp.min_span)
    throw std::invalid_argument("bad span length range");
  if (static_cast<long>(cp.max_glosses) * cp.max_span > cp.render.max_frames)
    throw std::invalid_argument("max_glosses * max_span exceeds max_frames");
  if (vocab.size() < 2) throw std::invalid_argument("vocabulary too small to avoid repeats");
  Rng master(seed);
  std::vector<SampleRecord> out;
  out.reserve(static_cast<std::size_t>(cp.n_samples));
  for (int i = 0; i < cp.n_samples; ++i) {
    int n = static_cast<int>(master.uniform_int(cp.min_glosses, cp.max_glosses));
    std::vector<int> glosses(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      int g;
      do {
        g = static_cast<int>(master.uniform_int(0, vocab.size() - 1));
      } while (j > 0 && g == glosses[static_cast<std::size_t>(j - 1)]);
      glosses[static_cast<std::size_t>(j)] = g;
    }
    std::vector<int> lengths(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j)
      lengths[static_cast<std::size_t>(j)] = static_cast<int>(master.uniform_int(cp.min_span, cp.max_span));
    std::uint64_t sample_seed = master.next_u64();
    SampleRecord rec = render_sample(vocab, glosses, lengths, sample_seed, cp.render);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%05d", id_prefix.c_str(), i);
    rec.sample_id = buf;
    out.push_back(std::move(rec));
  }
  return out;
}

// ---- binary motion container ----

inline constexpr char kMotionMagic[8] = {'G', 'L', 'O', 'S', 'M', 'O', '1', '\0'};

inline void write_motion_file(const std::string& path, const MatF& motion) {
  std::vector<std::uint8_t> bytes;
  bytes.resize(8 + 4 + 4 + static_cast<std::size_t>(motion.size()) * 4);
  std::memcpy(bytes.data(), kMotionMagic, 8);
  std::uint32_t L = static_cast<std::uint32_t>(motion.rows());
  std::uint32_t D = static_cast<std::uint32_t>(motion.cols());
  std::memcpy(bytes.data() + 8, &L, 4);
  std::memcpy(bytes.data() + 12, &D, 4);
  if (motion.size() > 0)
    std::memcpy(bytes.data() + 16, motion.data(), static_cast<std::size_t>(motion.size()) * 4);
  write_file_bytes(path, bytes.data(), bytes.size());
}

inline MatF read_motion_file(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMotionMagic, 8) != 0)
    throw format_error("not a motion file: " + path);
  std::uint32_t L = 0, D = 0;
  std::memcpy(&L, bytes.data() + 8, 4);
  std::memcpy(&D, bytes.data() + 12, 4);
  std::size_t expect = 16 + static_cast<std::size_t>(L) * D * 4;
  if (bytes.size() != expect)
    throw corruption_error("motion file " + path + " has " + std::to_string(bytes.size()) +
                           " bytes, expected " + std::to_string(expect));
  MatF m(L, D);
  if (m.size() > 0) std::memcpy(m.data(), bytes.data() + 16, static_cast<std::size_t>(m.size()) * 4);
  return m;
}

// ---- dataset directory: manifest.json + motions/<id>.bin ----

inline json skeleton_to_json(const SkeletonSpec& sk) {
  return {{"joints_body", sk.joints_body},
          {"joints_lhand", sk.joints_lhand},
          {"joints_rhand", sk.joints_rhand},
          {"joints_face", sk.joints_face}};
}

inline SkeletonSpec skeleton_from_json(const json& j) {
  SkeletonSpec sk;
  sk.joints_body = j.at("joints_body").get<int>();
  sk.joints_lhand = j.at("joints_lhand").get<int>();
  sk.joints_rhand = j.at("joints_rhand").get<int>();
  sk.joints_face = j.at("joints_face").get<int>();
  sk.validate();
  return sk;
}

inline json vocab_to_json(const GlossVocab& vocab) {
  json entries = json::array();
  for (const GlossEntry& e : vocab.entries) {
    json kp = json::object();
    for (Part p : kParts) {
      const MatF& m = e.keyposes[static_cast<std::size_t>(p)];
      json rows = json::array();
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
      }
      kp[part_name(p)] = std::move(rows);
    }
    entries.push_back({{"id", e.id}, {"name", e.name}, {"keyposes", std::move(kp)}});
  }
  return {{"seed", vocab.seed}, {"skeleton", skeleton_to_json(vocab.skeleton)},
          {"entries", std::move(entries)}};
}

inline GlossVocab vocab_from_json(const json& j) {
  GlossVocab vocab;
  vocab.seed = j.at("seed").get<std::uint64_t>();
  vocab.skeleton = skeleton_from_json(j.at("skeleton"));
  for (const json& je : j.at("entries")) {
    GlossEntry e;
    e.id = je.at("id").get<int>();
    e.name = je.at("name").get<std::string>();
    const json& kp = je.at("keyposes");
    for (Part p : kParts) {
      const json& rows = kp.at(part_name(p));
      MatF m(rows.size(), vocab.skeleton.channels(p));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const json& row = rows[r];
        if (static_cast<Eigen::Index>(row.size()) != m.cols())
          throw format_error("keypose width mismatch for gloss " + e.name);
        for (std::size_t c = 0; c < row.size(); ++c)
          m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c].get<float>();
      }
      e.keyposes[static_cast<std::size_t>(p)] = std::move(m);
    }
    if (e.id != static_cast<int>(vocab.entries.size()))
      throw format_error("gloss ids must be contiguous from 0");
    vocab.entries.push_back(std::move(e));
  }
  return vocab;
}

inline void write_dataset(const std::string& dir, const GlossVocab& vocab,
                          const std::vector<SampleRecord>& samples) {
  std::filesystem::create_directories(std::filesystem::path(dir) / "motions");
  json samples_j = json::array();
  for (const SampleRecord& s : samples) {
    validate_spans_tile(s.spans, s.length());
    std::string rel = "motions/" + s.sample_id + ".bin";
    write_motion_file((std::filesystem::path(dir) / rel).string(), s.motion);
    json spans = json::array();
    for (const auto& [b, e] : s.spans) spans.push_back({b, e});
    samples_j.push_back({{"id", s.sample_id},
                         {"glosses", s.glosses},
                         {"spans", std::move(spans)},
                         {"text", s.text},
                         {"length", s.length()},
                         {"frame_rate", s.frame_rate},
                         {"motion", rel}});
  }
  json manifest = {{"format", "glosmo-dataset-v1"},
                   {"vocab", vocab_to_json(vocab)},
                   {"samples", std::move(samples_j)}};
  write_json_file((std::filesystem::path(dir) / "manifest.json").string(), manifest);
}

struct Dataset {
  GlossVocab vocab;
  std::vector<SampleRecord> samples;
};

// Vocabulary only; skips the motion files.
inline GlossVocab read_dataset_vocab(const std::string& dir) {
  std::string manifest_path = (std::filesystem::path(dir) / "manifest.json").string();
  if (!std::filesystem::exists(manifest_path))
    throw dependency_error("dataset manifest not found: " + manifest_path);
  json manifest = read_json_file(manifest_path);
  if (!manifest.contains("format") || manifest.at("format") != "glosmo-dataset-v1")
    throw format_error("unrecognized dataset format in " + manifest_path);
  return vocab_from_json(manifest.at("vocab"));
}

inline Dataset read_dataset(const std::string& dir) {
  std::string manifest_path = (std::filesystem::path(dir) / "manifest.json").string();
  if (!std::filesystem::exists(manifest_path))
    throw dependency_error("dataset manifest not found: " + manifest_path);
  json manifest = read_json_file(manifest_path);
  if (!manifest.contains("format") || manifest.at("format") != "glosmo-dataset-v1")
    throw format_error("unrecognized dataset format in " + manifest_path);
  Dataset ds;
  ds.vocab = vocab_from_json(manifest.at("vocab"));
  for (const json& js : manifest.at("samples")) {
    SampleRecord s;
    s.sample_id = js.at("id").get<std::string>();
    s.glosses = js.at("glosses").get<std::vector<int>>();
    for (const json& sp : js.at("spans")) s.spans.emplace_back(sp.at(0).get<int>(), sp.at(1).get<int>());
    s.text = js.at("text").get<std::string>();
    s.frame_rate = js.at("frame_rate").get<double>();
    s.motion = read_motion_file((std::filesystem::path(dir) / js.at("motion").get<std::string>()).string());
    if (s.length() != js.at("length").get<int>())
      throw corruption_error("sample " + s.sample_id + ": motion length disagrees with manifest");
    if (s.motion.cols() != ds.vocab.skeleton.total_channels())
      throw corruption_error("sample " + s.sample_id + ": channel count disagrees with skeleton");
    try {
      validate_spans_tile(s.spans, s.length());
    } catch (const std::invalid_argument& e) {
      throw corruption_error("sample " + s.sample_id + ": " + e.what());
    }
    for (int g : s.glosses) ds.vocab.by_id(g);
    if (s.glosses.size() != s.spans.size())
      throw corruption_error("sample " + s.sample_id + ": gloss/span count mismatch");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace glosmo
