#pragma once

// Metrics for generated motion and for the gloss sequences read back from it:
//   dtw_jpe              DTW-aligned mean per-joint position error
//   wer / bleu4 / rouge_l sequence metrics over gloss ids
//   Recognizer           small frame classifier used for back-translation
//   alignment_accuracy   are glosses where the reference says they should be
//   coordination_error   distance between each hand root and its wrist

#include <glosmo/autograd.hpp>
#include <glosmo/common.hpp>
#include <glosmo/dataset.hpp>
#include <glosmo/nn.hpp>
#include <glosmo/rng.hpp>
#include <glosmo/serialize.hpp>

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace glosmo {

// ---- DTW mean per-joint error ----

enum class JointSubset { body, hands, all };

inline std::pair<int, int> joint_range(const SkeletonSpec& sk, JointSubset subset) {
  switch (subset) {
    case JointSubset::body: return {0, sk.joints_body};
    case JointSubset::hands:
      return {sk.joints_body, sk.joints_body + sk.joints_lhand + sk.joints_rhand};
    case JointSubset::all: return {0, sk.total_joints()};
  }
  return {0, 0};
}

struct DtwResult {
  double total_cost = 0.0;
  int path_length = 0;
  double mean_cost = 0.0;
};

// Classic DTW over frames with steps (i-1,j), (i,j-1), (i-1,j-1). The frame
// cost is the mean L2 distance over the selected joints. Ties in total cost
// prefer the shorter path, and the reported value is cost per path step.
inline DtwResult dtw_jpe(const MatF& gen, const MatF& ref, const SkeletonSpec& sk,
                         JointSubset subset) {
  if (gen.cols() != sk.total_channels() || ref.cols() != sk.total_channels())
    throw std::invalid_argument("dtw_jpe: motion width does not match the skeleton");
  if (gen.rows() < 1 || ref.rows() < 1) throw std::invalid_argument("dtw_jpe: empty motion");
  auto [j0, j1] = joint_range(sk, subset);
  int n_joints = j1 - j0;
  Eigen::Index n = gen.rows(), m = ref.rows();

  MatD cost(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int jt = j0; jt < j1; ++jt) {
        double dx = static_cast<double>(gen(i, 3 * jt)) - ref(j, 3 * jt);
        double dy = static_cast<double>(gen(i, 3 * jt + 1)) - ref(j, 3 * jt + 1);
        double dz = static_cast<double>(gen(i, 3 * jt + 2)) - ref(j, 3 * jt + 2);
        acc += std::sqrt(dx * dx + dy * dy + dz * dz);
      }
      cost(i, j) = acc / n_joints;
    }

  MatD best(n, m);
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> len(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == 0 && j == 0) {
        best(0, 0) = cost(0, 0);
        len(0, 0) = 1;
        continue;
      }
      double bc = 0.0;
      int bl = 0;
      bool have = false;
      auto consider = [&](Eigen::Index pi, Eigen::Index pj) {
        if (pi < 0 || pj < 0) return;
        double c = best(pi, pj);
        int l = len(pi, pj);
        if (!have || c < bc || (c == bc && l < bl)) {
          bc = c;
          bl = l;
          have = true;
        }
      };
      consider(i - 1, j - 1);
      consider(i - 1, j);
      consider(i, j - 1);
      best(i, j) = bc + cost(i, j);
      len(i, j) = bl + 1;
    }

  DtwResult r;
  r.total_cost = best(n - 1, m - 1);
  r.path_length = len(n - 1, m - 1);
  r.mean_cost = r.total_cost / r.path_length;
  return r;
}

// ---- sequence metrics ----

struct EditCounts {
  long edits = 0;
  long ref_len = 0;
};

inline EditCounts edit_counts(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) throw std::invalid_argument("edit_counts: empty reference");
  std::size_t n = hyp.size(), m = ref.size();
  std::vector<long> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<long>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<long>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      long sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return {prev[m], static_cast<long>(m)};
}

inline double wer(const std::vector<int>& hyp, const std::vector<int>& ref) {
  EditCounts c = edit_counts(hyp, ref);
  return static_cast<double>(c.edits) / static_cast<double>(c.ref_len);
}

inline double corpus_wer(const std::vector<EditCounts>& counts) {
  long e = 0, l = 0;
  for (const auto& c : counts) {
    e += c.edits;
    l += c.ref_len;
  }
  if (l == 0) throw std::invalid_argument("corpus_wer: no reference tokens");
  return static_cast<double>(e) / static_cast<double>(l);
}

struct NgramStats {
  std::array<long, 4> clipped{};
  std::array<long, 4> total{};
  long hyp_len = 0;
  long ref_len = 0;

  void add(const NgramStats& o) {
    for (int n = 0; n < 4; ++n) {
      clipped[static_cast<std::size_t>(n)] += o.clipped[static_cast<std::size_t>(n)];
      total[static_cast<std::size_t>(n)] += o.total[static_cast<std::size_t>(n)];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
  }
};

inline NgramStats bleu_stats(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) throw std::invalid_argument("bleu_stats: empty reference");
  NgramStats s;
  s.hyp_len = static_cast<long>(hyp.size());
  s.ref_len = static_cast<long>(ref.size());
  for (int n = 1; n <= 4; ++n) {
    auto ns = static_cast<std::size_t>(n);
    if (hyp.size() < ns) break;
    std::map<std::vector<int>, long> ref_counts;
    if (ref.size() >= ns)
      for (std::size_t i = 0; i + ns <= ref.size(); ++i)
        ++ref_counts[std::vector<int>(ref.begin() + static_cast<long>(i),
                                      ref.begin() + static_cast<long>(i + ns))];
    std::map<std::vector<int>, long> hyp_counts;
    for (std::size_t i = 0; i + ns <= hyp.size(); ++i)
      ++hyp_counts[std::vector<int>(hyp.begin() + static_cast<long>(i),
                                    hyp.begin() + static_cast<long>(i + ns))];
    for (const auto& [gram, count] : hyp_counts) {
      s.total[ns - 1] += count;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) s.clipped[ns - 1] += std::min(count, it->second);
    }
  }
  return s;
}

// Geometric mean of clipped n-gram precisions with add-one smoothing for
// orders that match nothing, times the brevity penalty. Orders the hypothesis
// is too short to form are left out of the mean.
inline double bleu4_from_stats(const NgramStats& s) {
  if (s.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    auto ns = static_cast<std::size_t>(n);
    if (s.total[ns] == 0) continue;
    double p = s.clipped[ns] > 0
                   ? static_cast<double>(s.clipped[ns]) / static_cast<double>(s.total[ns])
                   : 1.0 / static_cast<double>(s.total[ns] + 1);
    log_sum += std::log(p);
    ++orders;
  }
  if (orders == 0) return 0.0;
  double precision = std::exp(log_sum / orders);
  double bp = s.hyp_len >= s.ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len));
  return precision * bp;
}

inline double bleu4(const std::vector<int>& hyp, const std::vector<int>& ref) {
  return bleu4_from_stats(bleu_stats(hyp, ref));
}

inline double rouge_l(const std::vector<int>& hyp, const std::vector<int>& ref,
                      double beta = 1.2) {
  if (ref.empty()) throw std::invalid_argument("rouge_l: empty reference");
  if (hyp.empty()) return 0.0;
  std::size_t n = hyp.size(), m = ref.size();
  std::vector<long> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j)
      cur[j] = hyp[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  double lcs = static_cast<double>(prev[m]);
  if (lcs == 0.0) return 0.0;
  double r = lcs / static_cast<double>(m);
  double p = lcs / static_cast<double>(n);
  double b2 = beta * beta;
  return (1.0 + b2) * r * p / (r + b2 * p);
}

// ---- gloss utilities shared by back-translation ----

inline std::vector<int> collapse_duplicates(const std::vector<int>& seq) {
  std::vector<int> out;
  for (int v : seq)
    if (out.empty() || out.back() != v) out.push_back(v);
  return out;
}

// Drops frames belonging to runs shorter than min_run; recognition noise
// shows up as one-or-two frame blips at gloss boundaries.
inline std::vector<int> min_run_filter(const std::vector<int>& seq, int min_run) {
  if (min_run < 1) throw std::invalid_argument("min_run_filter: min_run must be >= 1");
  std::vector<int> out;
  std::size_t i = 0;
  while (i < seq.size()) {
    std::size_t j = i;
    while (j < seq.size() && seq[j] == seq[i]) ++j;
    if (j - i >= static_cast<std::size_t>(min_run)) out.insert(out.end(), j - i, seq[i]);
    i = j;
  }
  return out;
}

// ---- frame recognizer ----

struct RecognizerConfig {
  int window = 9;  // frames per input, centered, edges clamped
  int hidden = 128;
  int vocab = 0;
  int channels = 0;

  void validate() const {
    if (window < 1 || window % 2 == 0) throw std::invalid_argument("window must be odd");
    if (hidden < 1 || vocab < 1 || channels < 1)
      throw std::invalid_argument("bad recognizer dimensions");
  }
};

inline json recognizer_config_to_json(const RecognizerConfig& c) {
  return {{"window", c.window}, {"hidden", c.hidden}, {"vocab", c.vocab}, {"channels", c.channels}};
}

inline RecognizerConfig recognizer_config_from_json(const json& j) {
  RecognizerConfig c;
  c.window = j.at("window").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.vocab = j.at("vocab").get<int>();
  c.channels = j.at("channels").get<int>();
  c.validate();
  return c;
}

struct Recognizer {
  RecognizerConfig cfg;
  nn::ParamStore<float> store;
  nn::Linear<float> l0, l1, l2;

  static Recognizer create(const RecognizerConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Recognizer r;
    r.cfg = cfg;
    Rng rng(seed);
    int in = cfg.window * cfg.channels;
    r.l0 = nn::Linear<float>::create(r.store, rng, "l0", in, cfg.hidden);
    r.l1 = nn::Linear<float>::create(r.store, rng, "l1", cfg.hidden, cfg.hidden);
    r.l2 = nn::Linear<float>::create(r.store, rng, "l2", cfg.hidden, cfg.vocab);
    return r;
  }
};

inline MatF recognizer_features(const MatF& motion, int window) {
  int half = window / 2;
  Eigen::Index L = motion.rows(), C = motion.cols();
  MatF out(L, window * C);
  for (Eigen::Index i = 0; i < L; ++i)
    for (int w = -half; w <= half; ++w) {
      Eigen::Index src = std::clamp(i + w, Eigen::Index(0), L - 1);
      out.block(i, (w + half) * C, 1, C) = motion.row(src);
    }
  return out;
}

template <typename S>
typename ag::Graph<S>::Var recognizer_logits_graph(nn::Binder<S>& ctx, const Recognizer& rec,
                                                   typename ag::Graph<S>::Var features) {
  auto& g = ctx.graph();
  auto h0 = g.relu(rec.l0.apply(ctx, features));
  auto h1 = g.relu(rec.l1.apply(ctx, h0));
  return rec.l2.apply(ctx, h1);
}

inline MatF recognizer_logits(const Recognizer& rec, const MatF& motion) {
  if (motion.cols() != rec.cfg.channels)
    throw std::invalid_argument("recognizer: motion width mismatch");
  ag::Graph<float> g;
  nn::Binder<float> ctx(g, const_cast<nn::ParamStore<float>&>(rec.store));
  auto logits = recognizer_logits_graph(ctx, rec, g.constant(recognizer_features(motion, rec.cfg.window)));
  return g.value(logits);
}

inline std::vector<int> frame_predictions(const Recognizer& rec, const MatF& motion) {
  MatF logits = recognizer_logits(rec, motion);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

inline std::vector<int> frame_labels(const SampleRecord& sample) {
  std::vector<int> labels(static_cast<std::size_t>(sample.length()), -1);
  for (std::size_t s = 0; s < sample.spans.size(); ++s)
    for (int f = sample.spans[s].first; f < sample.spans[s].second; ++f)
      labels[static_cast<std::size_t>(f)] = sample.glosses[s];
  return labels;
}

inline std::vector<int> back_translate(const Recognizer& rec, const MatF& motion,
                                       int min_run = 3) {
  return collapse_duplicates(min_run_filter(frame_predictions(rec, motion), min_run));
}

struct RecognizerTrainConfig {
  int epochs = 10;
  int batch_size = 8;  // samples per optimizer step
  float lr = 1e-3f;
  std::uint64_t seed = 0;
};

inline TrainStats train_recognizer(Recognizer& rec, const std::vector<SampleRecord>& samples,
                                   const RecognizerTrainConfig& tc) {
  if (samples.empty()) throw std::invalid_argument("no recognizer training data");
  std::vector<MatF> features;
  std::vector<std::vector<int>> labels;
  features.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.motion.cols() != rec.cfg.channels)
      throw std::invalid_argument("recognizer: motion width mismatch");
    for (int g : s.glosses)
      if (g < 0 || g >= rec.cfg.vocab)
        throw std::invalid_argument("recognizer: gloss id outside vocab");
    features.push_back(recognizer_features(s.motion, rec.cfg.window));
    labels.push_back(frame_labels(s));
  }

  nn::AdamConfig<float> ac;
  ac.lr = tc.lr;
  nn::Adam<float> opt(ac);
  Rng rng(tc.seed);
  std::vector<int> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  TrainStats stats;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_sum = 0.0;
    long epoch_frames = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(tc.batch_size)) {
      std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(tc.batch_size));
      nn::Grads<float> grads;
      grads.ensure(rec.store);
      double batch_loss = 0.0;
      for (std::size_t bi = at; bi < end; ++bi) {
        const auto& f = features[static_cast<std::size_t>(order[bi])];
        const auto& lab = labels[static_cast<std::size_t>(order[bi])];
        ag::Graph<float> g;
        nn::Binder<float> ctx(g, rec.store);
        auto logp = g.log_softmax(recognizer_logits_graph(ctx, rec, g.constant(f)));
        auto nll = g.scale(g.mean_all(g.pick(logp, lab)), -1.0f);
        batch_loss += static_cast<double>(g.value(nll)(0, 0));
        g.backward(nll);
        ctx.collect(grads);
        epoch_frames += f.rows();
      }
      if (!std::isfinite(batch_loss)) throw training_error("recognizer loss diverged");
      auto batch_n = static_cast<float>(end - at);
      for (auto& gm : grads.by_id)
        if (gm.size() != 0) gm /= batch_n;
      opt.step(rec.store, grads);
      epoch_sum += batch_loss;
    }
    stats.epoch_loss.push_back(epoch_sum / static_cast<double>(samples.size()));
    (void)epoch_frames;
  }
  return stats;
}

inline double frame_accuracy(const Recognizer& rec, const std::vector<SampleRecord>& samples) {
  if (samples.empty()) throw std::invalid_argument("frame_accuracy: no samples");
  long hit = 0, total = 0;
  for (const auto& s : samples) {
    auto pred = frame_predictions(rec, s.motion);
    auto lab = frame_labels(s);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      hit += pred[i] == lab[i];
      ++total;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

inline constexpr const char* kRecognizerFormat = "glosmo-recognizer-v1";

inline void save_recognizer(const Recognizer& rec, const std::string& dir) {
  std::filesystem::create_directories(dir);
  ArrayStore arrays;
  rec.store.save(arrays);
  json cfg = recognizer_config_to_json(rec.cfg);
  json ckpt = {{"format", kRecognizerFormat},
               {"config", cfg},
               {"config_hash", hex64(fnv1a64(cfg.dump()))},
               {"arrays", arrays.manifest()}};
  arrays.save_blob((std::filesystem::path(dir) / "arrays.bin").string());
  write_json_file((std::filesystem::path(dir) / "checkpoint.json").string(), ckpt);
}

inline Recognizer load_recognizer(const std::string& dir) {
  auto ckpt_path = (std::filesystem::path(dir) / "checkpoint.json").string();
  if (!std::filesystem::exists(ckpt_path))
    throw dependency_error("recognizer checkpoint not found: " + ckpt_path);
  json ckpt = read_json_file(ckpt_path);
  if (!ckpt.contains("format") || ckpt.at("format") != kRecognizerFormat)
    throw format_error("not a recognizer checkpoint: " + ckpt_path);
  json cfg_j = ckpt.at("config");
  if (ckpt.at("config_hash").get<std::string>() != hex64(fnv1a64(cfg_j.dump())))
    throw corruption_error("config hash mismatch in " + ckpt_path);
  Recognizer rec = Recognizer::create(recognizer_config_from_json(cfg_j), 0);
  ArrayStore arrays =
      ArrayStore::load((std::filesystem::path(dir) / "arrays.bin").string(), ckpt.at("arrays"));
  rec.store.load(arrays);
  return rec;
}

// ---- template-based alignment check ----

// Canonical full-body trajectory per gloss; a frame is classified as the
// gloss owning the nearest canonical pose.
struct TemplateBank {
  int canon_len = 64;
  std::vector<MatF> traj;  // one [canon_len x channels] block per gloss

  static TemplateBank build(const GlossVocab& vocab, int canon_len = 64) {
    if (canon_len < 2) throw std::invalid_argument("canon_len must be >= 2");
    TemplateBank bank;
    bank.canon_len = canon_len;
    for (const auto& entry : vocab.entries) {
      MatF full(canon_len, vocab.skeleton.total_channels());
      for (Part p : kParts) {
        MatF part = template_trajectory(entry, p, canon_len);
        full.block(0, vocab.skeleton.channel_offset(p), canon_len, part.cols()) = part;
      }
      bank.traj.push_back(std::move(full));
    }
    return bank;
  }

  int classify(const Eigen::Ref<const Eigen::RowVectorXf>& frame) const {
    int best_gloss = -1;
    float best = 0.0f;
    for (std::size_t gi = 0; gi < traj.size(); ++gi) {
      const MatF& tr = traj[gi];
      for (Eigen::Index r = 0; r < tr.rows(); ++r) {
        float d = (tr.row(r) - frame).squaredNorm();
        if (best_gloss < 0 || d < best) {
          best = d;
          best_gloss = static_cast<int>(gi);
        }
      }
    }
    return best_gloss;
  }
};

// Scales the reference spans onto the generated clip, trims span edges (the
// cross-fade region is genuinely ambiguous) and checks that the majority of
// the remaining frames classify as the expected gloss.
inline double alignment_accuracy(const MatF& gen, const std::vector<int>& glosses,
                                 const std::vector<Span>& ref_spans, int ref_len,
                                 const TemplateBank& bank, double trim = 0.25) {
  if (glosses.empty() || glosses.size() != ref_spans.size())
    throw std::invalid_argument("alignment_accuracy: need one span per gloss");
  if (ref_len < 1 || gen.rows() < 1) throw std::invalid_argument("alignment_accuracy: empty input");
  if (trim < 0.0 || trim >= 0.5) throw std::invalid_argument("alignment_accuracy: trim in [0, 0.5)");
  double ratio = static_cast<double>(gen.rows()) / ref_len;
  int correct = 0;
  for (std::size_t s = 0; s < glosses.size(); ++s) {
    int a = static_cast<int>(std::llround(ref_spans[s].first * ratio));
    int b = static_cast<int>(std::llround(ref_spans[s].second * ratio));
    a = std::clamp(a, 0, static_cast<int>(gen.rows()));
    b = std::clamp(b, a, static_cast<int>(gen.rows()));
    int margin = static_cast<int>(std::floor((b - a) * trim));
    int t0 = a + margin, t1 = b - margin;
    if (t1 <= t0) {
      t0 = std::min(a, static_cast<int>(gen.rows()) - 1);
      t1 = t0 + 1;
    }
    int hits = 0;
    for (int f = t0; f < t1; ++f) hits += bank.classify(gen.row(f)) == glosses[s];
    correct += 2 * hits > t1 - t0;
  }
  return static_cast<double>(correct) / static_cast<double>(glosses.size());
}

// ---- physical plausibility ----

// Mean distance between each hand's root joint and the wrist it should ride.
inline double coordination_error(const MatF& motion, const SkeletonSpec& sk) {
  if (motion.cols() != sk.total_channels())
    throw std::invalid_argument("coordination_error: motion width mismatch");
  if (motion.rows() < 1) throw std::invalid_argument("coordination_error: empty motion");
  double acc = 0.0;
  for (Eigen::Index f = 0; f < motion.rows(); ++f) {
    double frame_err = 0.0;
    for (Part hand : {Part::lhand, Part::rhand}) {
      int root = sk.channel_offset(hand);
      int wrist = 3 * sk.wrist_joint(hand);
      double dx = static_cast<double>(motion(f, root)) - motion(f, wrist);
      double dy = static_cast<double>(motion(f, root + 1)) - motion(f, wrist + 1);
      double dz = static_cast<double>(motion(f, root + 2)) - motion(f, wrist + 2);
      frame_err += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    acc += frame_err / 2.0;
  }
  return acc / static_cast<double>(motion.rows());
}

}  // namespace glosmo
