#pragma once

// Token denoiser for the discrete diffusion chain. Each part keeps its own
// stream of width d_feat; a block runs timestep modulation (AdaLN from a
// sinusoidal embedding, heads zero-initialized so t is invisible at init),
// self-attention over time with a residual from the block input, inter-part
// attention (IPA) that lets hand and body streams look at each other, and a
// conditioning fusion stage. Nothing in the model encodes absolute position:
// time structure enters only through the fused condition grid and the TAC
// convolution.
//
// Fusion variants:
//   tac              LayerNorm(X) * (1+u) + v followed by a depth-k conv,
//                    u and v per-timestep projections of the condition grid
//   adaln_fc         the same with kernel 1 (position-wise linear)
//   cross_attention  queries from LayerNorm(X), keys/values from the gloss
//                    embeddings, residual added; keys carry no positions
//                    so this variant is blind to gloss order

#include <glosmo/autograd.hpp>
#include <glosmo/common.hpp>
#include <glosmo/conditioning.hpp>
#include <glosmo/diffusion.hpp>
#include <glosmo/nn.hpp>
#include <glosmo/pvqvae.hpp>
#include <glosmo/rng.hpp>
#include <glosmo/serialize.hpp>

#include <array>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

namespace glosmo {

enum class FusionMode { tac, cross_attention, adaln_fc };
enum class IpaMode { none, b2h, h2b, both, b2h_face, h2b_face, both_face };
enum class ConditionKind { gloss, sentence };

inline const char* fusion_name(FusionMode m) {
  switch (m) {
    case FusionMode::tac: return "tac";
    case FusionMode::cross_attention: return "cross_attention";
    case FusionMode::adaln_fc: return "adaln_fc";
  }
  return "?";
}

inline FusionMode fusion_from_name(const std::string& s) {
  for (FusionMode m : {FusionMode::tac, FusionMode::cross_attention, FusionMode::adaln_fc})
    if (s == fusion_name(m)) return m;
  throw std::invalid_argument("unknown fusion mode: " + s);
}

inline const char* ipa_name(IpaMode m) {
  switch (m) {
    case IpaMode::none: return "none";
    case IpaMode::b2h: return "b2h";
    case IpaMode::h2b: return "h2b";
    case IpaMode::both: return "both";
    case IpaMode::b2h_face: return "b2h_face";
    case IpaMode::h2b_face: return "h2b_face";
    case IpaMode::both_face: return "both_face";
  }
  return "?";
}

inline IpaMode ipa_from_name(const std::string& s) {
  for (IpaMode m : {IpaMode::none, IpaMode::b2h, IpaMode::h2b, IpaMode::both, IpaMode::b2h_face,
                    IpaMode::h2b_face, IpaMode::both_face})
    if (s == ipa_name(m)) return m;
  throw std::invalid_argument("unknown inter-part attention mode: " + s);
}

inline bool ipa_hands_read_body(IpaMode m) {
  return m == IpaMode::b2h || m == IpaMode::both || m == IpaMode::b2h_face ||
         m == IpaMode::both_face;
}
inline bool ipa_body_reads_hands(IpaMode m) {
  return m == IpaMode::h2b || m == IpaMode::both || m == IpaMode::h2b_face ||
         m == IpaMode::both_face;
}
inline bool ipa_face_reads_body(IpaMode m) {
  return m == IpaMode::b2h_face || m == IpaMode::h2b_face || m == IpaMode::both_face;
}

inline const char* condition_name(ConditionKind k) {
  return k == ConditionKind::gloss ? "gloss" : "sentence";
}

inline ConditionKind condition_from_name(const std::string& s) {
  if (s == "gloss") return ConditionKind::gloss;
  if (s == "sentence") return ConditionKind::sentence;
  throw std::invalid_argument("unknown condition kind: " + s);
}

struct DenoiserConfig {
  int K = 128;       // real tokens per part; MASK = K
  int T = 100;
  int d_feat = 256;
  int n_heads = 8;
  int n_blocks = 4;
  int conv_kernel = 3;
  int d_cond = 64;
  int d_time = 128;
  int vocab_size = 0;
  FusionMode fusion = FusionMode::tac;
  IpaMode ipa = IpaMode::both;
  ConditionKind condition = ConditionKind::gloss;
  bool disable_self_attention = false;  // ablation hook used by locality tests

  void validate() const {
    if (K < 2 || T < 1 || vocab_size < 1) throw std::invalid_argument("bad denoiser dimensions");
    if (d_feat < 1 || d_feat % n_heads != 0)
      throw std::invalid_argument("d_feat must be a positive multiple of n_heads");
    if (n_blocks < 1) throw std::invalid_argument("need at least one block");
    if (conv_kernel < 1 || conv_kernel % 2 == 0)
      throw std::invalid_argument("conv kernel must be odd");
    if (d_time < 2 || d_time % 2 != 0) throw std::invalid_argument("d_time must be even");
    if (d_cond < 1) throw std::invalid_argument("d_cond must be >= 1");
  }
};

inline json denoiser_config_to_json(const DenoiserConfig& c) {
  return {{"K", c.K},
          {"T", c.T},
          {"d_feat", c.d_feat},
          {"n_heads", c.n_heads},
          {"n_blocks", c.n_blocks},
          {"conv_kernel", c.conv_kernel},
          {"d_cond", c.d_cond},
          {"d_time", c.d_time},
          {"vocab_size", c.vocab_size},
          {"fusion", fusion_name(c.fusion)},
          {"ipa", ipa_name(c.ipa)},
          {"condition", condition_name(c.condition)},
          {"disable_self_attention", c.disable_self_attention}};
}

inline DenoiserConfig denoiser_config_from_json(const json& j) {
  DenoiserConfig c;
  c.K = j.at("K").get<int>();
  c.T = j.at("T").get<int>();
  c.d_feat = j.at("d_feat").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_blocks = j.at("n_blocks").get<int>();
  c.conv_kernel = j.at("conv_kernel").get<int>();
  c.d_cond = j.at("d_cond").get<int>();
  c.d_time = j.at("d_time").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.fusion = fusion_from_name(j.at("fusion").get<std::string>());
  c.ipa = ipa_from_name(j.at("ipa").get<std::string>());
  c.condition = condition_from_name(j.at("condition").get<std::string>());
  c.disable_self_attention = j.value("disable_self_attention", false);
  c.validate();
  return c;
}

template <typename S>
struct DenoiserBlock {
  nn::Linear<S> adaln;          // d_time -> 2*d_feat, zero-init
  nn::Mha<S> self_attn;
  nn::Mha<S> ipa_attn;          // present only for parts that read another part
  bool has_ipa = false;
  // tac / adaln_fc fusion
  nn::Linear<S> u0, u1, v0, v1; // condition projections
  nn::Conv1dLayer<S> conv;
  // cross-attention fusion
  nn::Mha<S> cross_attn;
};

template <typename S>
struct DenoiserModel {
  DenoiserConfig cfg;
  nn::ParamStore<S> store;
  int gloss_embed = -1;  // [vocab_size x d_cond], trained jointly
  nn::Linear<S> time0, time1;
  std::array<int, 4> token_embed{-1, -1, -1, -1};  // [K+1 x d_feat] each
  std::array<nn::Linear<S>, 4> head;               // d_feat -> K
  std::array<std::vector<DenoiserBlock<S>>, 4> blocks;

  using Var = typename ag::Graph<S>::Var;

  static DenoiserModel create(const DenoiserConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DenoiserModel m;
    m.cfg = cfg;
    Rng rng(seed);
    m.gloss_embed = m.store.add(
        "gloss_embed", nn::xavier_init<S>(rng, cfg.vocab_size, cfg.d_cond, cfg.vocab_size, cfg.d_cond));
    m.time0 = nn::Linear<S>::create(m.store, rng, "time.l0", cfg.d_time, cfg.d_time);
    m.time1 = nn::Linear<S>::create(m.store, rng, "time.l1", cfg.d_time, cfg.d_time);
    for (Part p : kParts) {
      auto pi = static_cast<std::size_t>(p);
      std::string base = part_name(p);
      m.token_embed[pi] = m.store.add(
          base + ".embed", nn::xavier_init<S>(rng, cfg.K + 1, cfg.d_feat, cfg.K + 1, cfg.d_feat));
      for (int b = 0; b < cfg.n_blocks; ++b) {
        std::string bb = base + ".b" + std::to_string(b);
        DenoiserBlock<S> blk;
        blk.adaln = nn::Linear<S>::create_zero(m.store, bb + ".adaln", cfg.d_time, 2 * cfg.d_feat);
        blk.self_attn =
            nn::Mha<S>::create(m.store, rng, bb + ".sa", cfg.d_feat, cfg.d_feat, cfg.d_feat, cfg.n_heads);
        bool reads = (p == Part::body && ipa_body_reads_hands(cfg.ipa)) ||
                     ((p == Part::lhand || p == Part::rhand) && ipa_hands_read_body(cfg.ipa)) ||
                     (p == Part::face && ipa_face_reads_body(cfg.ipa));
        if (reads) {
          blk.ipa_attn = nn::Mha<S>::create(m.store, rng, bb + ".ipa", cfg.d_feat, cfg.d_feat,
                                            cfg.d_feat, cfg.n_heads);
          blk.has_ipa = true;
        }
        if (cfg.fusion == FusionMode::cross_attention) {
          blk.cross_attn = nn::Mha<S>::create(m.store, rng, bb + ".ca", cfg.d_feat, cfg.d_cond,
                                              cfg.d_feat, cfg.n_heads);
        } else {
          blk.u0 = nn::Linear<S>::create(m.store, rng, bb + ".tac.u0", cfg.d_cond, cfg.d_feat);
          blk.u1 = nn::Linear<S>::create(m.store, rng, bb + ".tac.u1", cfg.d_feat, cfg.d_feat);
          blk.v0 = nn::Linear<S>::create(m.store, rng, bb + ".tac.v0", cfg.d_cond, cfg.d_feat);
          blk.v1 = nn::Linear<S>::create(m.store, rng, bb + ".tac.v1", cfg.d_feat, cfg.d_feat);
          int k = cfg.fusion == FusionMode::adaln_fc ? 1 : cfg.conv_kernel;
          blk.conv = nn::Conv1dLayer<S>::create(m.store, rng, bb + ".tac.conv", cfg.d_feat,
                                                cfg.d_feat, k, 1, (k - 1) / 2);
        }
        m.blocks[pi].push_back(std::move(blk));
      }
      m.head[pi] = nn::Linear<S>::create(m.store, rng, base + ".head", cfg.d_feat, cfg.K);
    }
    return m;
  }
};

// Condition inputs at latent resolution, already inside the graph so the
// embedding table can receive gradients during training.
template <typename S>
struct CondVars {
  typename ag::Graph<S>::Var grid;    // [L' x d_cond] for tac / adaln_fc
  typename ag::Graph<S>::Var tokens;  // [J x d_cond] for cross_attention
};

// Builds the latent-resolution condition inside the graph. The gloss grid is
// gathered per frame and average-pooled by r, exactly mirroring the pure
// build_gloss_condition + downsample_condition pipeline; the sentence grid is
// the mean embedding repeated.
template <typename S>
CondVars<S> build_condition_graph(nn::Binder<S>& ctx, const DenoiserModel<S>& m,
                                  const std::vector<int>& glosses,
                                  const std::vector<Span>& frame_spans, int r, int latent_len) {
  auto& g = ctx.graph();
  if (glosses.empty() || glosses.size() != frame_spans.size())
    throw std::invalid_argument("need one frame span per gloss");
  for (int gl : glosses)
    if (gl < 0 || gl >= m.cfg.vocab_size) throw std::invalid_argument("gloss id out of range");
  CondVars<S> out;
  auto table = ctx.use(m.gloss_embed);
  out.tokens = g.gather_rows(table, glosses);
  if (m.cfg.condition == ConditionKind::sentence) {
    out.grid = g.repeat_row(g.mean_rows(out.tokens), latent_len);
    return out;
  }
  std::vector<int> frame_ids;
  frame_ids.reserve(static_cast<std::size_t>(frame_spans.back().second));
  for (std::size_t i = 0; i < glosses.size(); ++i)
    for (int f = frame_spans[i].first; f < frame_spans[i].second; ++f)
      frame_ids.push_back(glosses[i]);
  if (static_cast<int>(frame_ids.size()) / r != latent_len)
    throw std::invalid_argument("frame spans disagree with the latent length");
  out.grid = g.avgpool_rows(g.gather_rows(table, frame_ids), r);
  return out;
}

// Value-level condition for generation; same arithmetic as the graph path.
inline ConditionGrid build_condition_values(const MatF& table, ConditionKind kind,
                                            const std::vector<int>& glosses,
                                            const std::vector<int>& lengths, int r) {
  long total = 0;
  for (int l : lengths) total += l;
  ConditionGrid frame_res = kind == ConditionKind::gloss
                                ? build_gloss_condition(glosses, lengths, table)
                                : build_sentence_condition(glosses, static_cast<int>(total), table);
  return downsample_condition(frame_res, r);
}

template <typename S>
std::array<typename ag::Graph<S>::Var, 4> denoiser_forward(
    nn::Binder<S>& ctx, const DenoiserModel<S>& m, const std::array<std::vector<int>, 4>& tokens,
    int t, const CondVars<S>& cond) {
  auto& g = ctx.graph();
  const DenoiserConfig& cfg = m.cfg;
  if (t < 1 || t > cfg.T) throw std::invalid_argument("timestep out of range");
  std::size_t latent_len = tokens[0].size();
  if (latent_len == 0) throw std::invalid_argument("empty token sequence");
  for (const auto& seq : tokens) {
    if (seq.size() != latent_len) throw std::invalid_argument("parts have different lengths");
    for (int v : seq)
      if (v < 0 || v > cfg.K) throw std::invalid_argument("token id out of range");
  }
  if (cfg.fusion != FusionMode::cross_attention) {
    if (g.value(cond.grid).rows() != static_cast<Eigen::Index>(latent_len) ||
        g.value(cond.grid).cols() != cfg.d_cond)
      throw std::invalid_argument("condition grid must be [latent_len x d_cond]");
  }

  auto time_feat = m.time1.apply(
      ctx, g.relu(m.time0.apply(ctx, g.constant(nn::sinusoidal_embedding<S>(t, cfg.d_time)))));

  std::array<typename ag::Graph<S>::Var, 4> x;
  for (Part p : kParts) {
    auto pi = static_cast<std::size_t>(p);
    x[pi] = g.gather_rows(ctx.use(m.token_embed[pi]), tokens[pi]);
  }

  for (int b = 0; b < cfg.n_blocks; ++b) {
    // timestep modulation and self-attention, residual from the block input
    std::array<typename ag::Graph<S>::Var, 4> x_sa;
    for (Part p : kParts) {
      auto pi = static_cast<std::size_t>(p);
      const DenoiserBlock<S>& blk = m.blocks[pi][static_cast<std::size_t>(b)];
      if (cfg.disable_self_attention) {
        x_sa[pi] = x[pi];
        continue;
      }
      auto mod = blk.adaln.apply(ctx, time_feat);
      auto scale = g.add_scalar(g.slice_cols(mod, 0, cfg.d_feat), S(1));
      auto shift = g.slice_cols(mod, cfg.d_feat, cfg.d_feat);
      auto x_time = g.add_rowvec(g.mul_rowvec(g.layernorm(x[pi], S(1e-5)), scale), shift);
      x_sa[pi] = g.add(blk.self_attn.apply(ctx, x_time, x_time), x[pi]);
    }

    // inter-part attention; every reader sees the same pre-update snapshot
    std::array<typename ag::Graph<S>::Var, 4> x_ipa = x_sa;
    auto body = x_sa[static_cast<std::size_t>(Part::body)];
    if (ipa_hands_read_body(cfg.ipa)) {
      for (Part hand : {Part::lhand, Part::rhand}) {
        auto hi = static_cast<std::size_t>(hand);
        const DenoiserBlock<S>& blk = m.blocks[hi][static_cast<std::size_t>(b)];
        x_ipa[hi] = g.add(blk.ipa_attn.apply(ctx, g.layernorm(x_sa[hi], S(1e-5)), body), x_sa[hi]);
      }
    }
    if (ipa_body_reads_hands(cfg.ipa)) {
      auto bi = static_cast<std::size_t>(Part::body);
      const DenoiserBlock<S>& blk = m.blocks[bi][static_cast<std::size_t>(b)];
      auto hands = g.concat_rows(x_sa[static_cast<std::size_t>(Part::lhand)],
                                 x_sa[static_cast<std::size_t>(Part::rhand)]);
      x_ipa[bi] = g.add(blk.ipa_attn.apply(ctx, g.layernorm(body, S(1e-5)), hands), body);
    }
    if (ipa_face_reads_body(cfg.ipa)) {
      auto fi = static_cast<std::size_t>(Part::face);
      const DenoiserBlock<S>& blk = m.blocks[fi][static_cast<std::size_t>(b)];
      x_ipa[fi] = g.add(blk.ipa_attn.apply(ctx, g.layernorm(x_sa[fi], S(1e-5)), body), x_sa[fi]);
    }

    // conditioning fusion
    for (Part p : kParts) {
      auto pi = static_cast<std::size_t>(p);
      const DenoiserBlock<S>& blk = m.blocks[pi][static_cast<std::size_t>(b)];
      if (cfg.fusion == FusionMode::cross_attention) {
        x[pi] = g.add(blk.cross_attn.apply(ctx, g.layernorm(x_ipa[pi], S(1e-5)), cond.tokens),
                      x_ipa[pi]);
      } else {
        auto u = blk.u1.apply(ctx, g.relu(blk.u0.apply(ctx, cond.grid)));
        auto v = blk.v1.apply(ctx, g.relu(blk.v0.apply(ctx, cond.grid)));
        auto core = g.layernorm(x_ipa[pi], S(1e-5));
        auto modulated = g.add(g.add(core, g.mul(core, u)), v);
        x[pi] = blk.conv.apply(ctx, modulated);
      }
    }
  }

  std::array<typename ag::Graph<S>::Var, 4> logits;
  for (Part p : kParts) {
    auto pi = static_cast<std::size_t>(p);
    logits[pi] = m.head[pi].apply(ctx, x[pi]);
  }
  return logits;
}

// ---- training ----

struct DenoiserTrainConfig {
  int epochs = 20;
  int batch_size = 32;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
  double aux_weight = 5e-4;
  int r = 4;  // frame-to-latent pooling factor of the tokenizer
  int n_threads = 1;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace detail

template <typename S>
double denoiser_sample_pass(DenoiserModel<S>& m, const TokenizedSample& ts,
                            const DiffusionSchedule& sched, const DenoiserTrainConfig& tc,
                            std::uint64_t sample_seed, nn::Grads<S>& grads) {
  Rng rng(sample_seed);
  int t = static_cast<int>(rng.uniform_int(1, sched.T));
  ag::Graph<S> g;
  nn::Binder<S> ctx(g, m.store);
  std::array<std::vector<int>, 4> noisy;
  for (Part p : kParts) {
    auto pi = static_cast<std::size_t>(p);
    noisy[pi] = q_sample(ts.tokens[pi], t, sched, rng);
  }
  CondVars<S> cond = build_condition_graph(ctx, m, ts.glosses, ts.frame_spans, tc.r, ts.latent_len);
  auto logits = denoiser_forward(ctx, m, noisy, t, cond);
  typename ag::Graph<S>::Var total;
  for (Part p : kParts) {
    auto pi = static_cast<std::size_t>(p);
    auto terms = vlb_loss(g, logits[pi], ts.tokens[pi], noisy[pi], t, sched, tc.aux_weight);
    total = total.valid() ? g.add(total, terms.total) : terms.total;
  }
  double loss = static_cast<double>(g.value(total)(0, 0));
  g.backward(total);
  ctx.collect(grads);
  return loss;
}

template <typename S>
TrainStats train_denoiser(DenoiserModel<S>& m, const std::vector<TokenizedSample>& data,
                          const DiffusionSchedule& sched, const DenoiserTrainConfig& tc) {
  if (data.empty()) throw std::invalid_argument("no training data");
  if (sched.K != m.cfg.K || sched.T != m.cfg.T)
    throw std::invalid_argument("schedule and model disagree on K or T");
  for (const auto& ts : data) {
    if (ts.latent_len < 1) throw std::invalid_argument("empty tokenized sample " + ts.sample_id);
    if (ts.frame_len / tc.r != ts.latent_len)
      throw std::invalid_argument("pooling factor disagrees with sample " + ts.sample_id);
    check_real_tokens(ts.tokens[0], m.cfg.K, "train_denoiser");
  }
  nn::AdamConfig<S> ac;
  ac.lr = static_cast<S>(tc.lr);
  nn::Adam<S> opt(ac);
  Rng shuffle_rng(tc.seed);
  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) order[i] = static_cast<int>(i);

  TrainStats stats;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_sum = 0.0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(tc.batch_size)) {
      std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(tc.batch_size));
      int batch_n = static_cast<int>(end - at);
      // Per-sample seeds depend on (epoch, dataset index) only, so the result
      // is identical no matter how the batch is split across workers.
      std::vector<std::uint64_t> seeds(static_cast<std::size_t>(batch_n));
      for (int i = 0; i < batch_n; ++i)
        seeds[static_cast<std::size_t>(i)] = detail::splitmix64(
            tc.seed ^ detail::splitmix64(static_cast<std::uint64_t>(epoch) * 1000003ull +
                                         static_cast<std::uint64_t>(order[at + static_cast<std::size_t>(i)])));

      int n_threads = std::max(1, tc.n_threads);
      std::vector<nn::Grads<S>> worker_grads(static_cast<std::size_t>(n_threads));
      std::vector<double> worker_loss(static_cast<std::size_t>(n_threads), 0.0);
      auto run_range = [&](int w, int lo, int hi) {
        worker_grads[static_cast<std::size_t>(w)].ensure(m.store);
        for (int i = lo; i < hi; ++i)
          worker_loss[static_cast<std::size_t>(w)] += denoiser_sample_pass(
              m, data[static_cast<std::size_t>(order[at + static_cast<std::size_t>(i)])], sched,
              tc, seeds[static_cast<std::size_t>(i)], worker_grads[static_cast<std::size_t>(w)]);
      };
      if (n_threads == 1) {
        run_range(0, 0, batch_n);
      } else {
        std::vector<std::thread> pool;
        int chunk = (batch_n + n_threads - 1) / n_threads;
        for (int w = 0; w < n_threads; ++w) {
          int lo = w * chunk, hi = std::min(batch_n, lo + chunk);
          if (lo >= hi) break;
          pool.emplace_back(run_range, w, lo, hi);
        }
        for (auto& th : pool) th.join();
      }
      nn::Grads<S> grads;
      grads.ensure(m.store);
      double batch_loss = 0.0;
      for (int w = 0; w < n_threads; ++w) {
        grads.add(worker_grads[static_cast<std::size_t>(w)]);
        batch_loss += worker_loss[static_cast<std::size_t>(w)];
      }
      if (!std::isfinite(batch_loss))
        throw training_error("denoiser loss diverged at epoch " + std::to_string(epoch));
      for (auto& gm : grads.by_id)
        if (gm.size() != 0) gm /= static_cast<S>(batch_n);
      if (!grads.all_finite())
        throw training_error("denoiser gradients non-finite at epoch " + std::to_string(epoch));
      opt.step(m.store, grads);
      epoch_sum += batch_loss;
    }
    stats.epoch_loss.push_back(epoch_sum / static_cast<double>(data.size()));
  }
  return stats;
}

// ---- generation ----

// Evaluates all four logit heads without touching gradients; used by the
// sampler and by anything that wants raw scores.
template <typename S>
std::array<MatD, 4> denoiser_forward_values(const DenoiserModel<S>& m,
                                            const std::array<std::vector<int>, 4>& state, int t,
                                            const ConditionGrid& latent_cond,
                                            const std::vector<int>& glosses) {
  ag::Graph<S> g;
  nn::Binder<S> ctx(g, const_cast<nn::ParamStore<S>&>(m.store));
  CondVars<S> cond;
  cond.grid = g.constant(latent_cond.grid.template cast<S>());
  Mat<S> tok_rows(static_cast<Eigen::Index>(glosses.size()), m.cfg.d_cond);
  const Mat<S>& table = m.store.value(m.gloss_embed);
  for (std::size_t i = 0; i < glosses.size(); ++i) {
    if (glosses[i] < 0 || glosses[i] >= m.cfg.vocab_size)
      throw std::invalid_argument("gloss id out of range");
    tok_rows.row(static_cast<Eigen::Index>(i)) = table.row(glosses[i]);
  }
  cond.tokens = g.constant(tok_rows);
  auto logits = denoiser_forward(ctx, m, state, t, cond);
  std::array<MatD, 4> out;
  for (Part p : kParts) {
    auto pi = static_cast<std::size_t>(p);
    out[pi] = g.value(logits[pi]).template cast<double>();
  }
  return out;
}

struct GeneratedTokens {
  std::array<std::vector<int>, 4> tokens;
  std::array<ReverseTrace, 4> traces;
};

// Joint reverse chain over the four parts. One forward pass per step feeds
// all four samplers; parts are stepped in a fixed order with a shared rng.
template <typename S>
GeneratedTokens generate_tokens(const DenoiserModel<S>& m, const DiffusionSchedule& sched,
                                const ConditionGrid& latent_cond, const std::vector<int>& glosses,
                                int latent_len, Rng& rng, double temperature) {
  if (latent_len < 1) throw std::invalid_argument("latent length must be >= 1");
  if (m.cfg.fusion != FusionMode::cross_attention && latent_cond.grid.rows() != latent_len)
    throw std::invalid_argument("condition grid length mismatch");
  GeneratedTokens out;
  std::array<std::vector<int>, 4> state;
  for (auto& seq : state) seq.assign(static_cast<std::size_t>(latent_len), sched.mask_token());

  for (int t = sched.T; t >= 1; --t) {
    auto logits = denoiser_forward_values(m, state, t, latent_cond, glosses);
    for (Part p : kParts) {
      auto pi = static_cast<std::size_t>(p);
      state[pi] = p_sample_step(logits[pi], state[pi], t, sched, rng, temperature);
      int masked = 0;
      for (int v : state[pi]) masked += v == sched.mask_token();
      out.traces[pi].t.push_back(t);
      out.traces[pi].mask_fraction.push_back(static_cast<double>(masked) / latent_len);
    }
  }
  for (Part p : kParts)
    for (int v : state[static_cast<std::size_t>(p)])
      if (v == sched.mask_token()) throw numeric_error("reverse chain left MASK in final tokens");
  out.tokens = std::move(state);
  return out;
}

// ---- checkpointing ----

inline constexpr const char* kDenoiserFormat = "glos-denoiser-v1";

template <typename S>
void save_denoiser(const DenoiserModel<S>& m, const DiffusionSchedule& sched,
                   const LengthStats& stats, const std::string& dir,
                   const std::string& pvqvae_hash = "") {
  std::filesystem::create_directories(dir);
  ArrayStore arrays;
  m.store.save(arrays);
  json cfg = denoiser_config_to_json(m.cfg);
  json ckpt = {{"format", kDenoiserFormat},
               {"config", cfg},
               {"config_hash", hex64(fnv1a64(cfg.dump()))},
               {"schedule", schedule_to_json(sched)},
               {"length_stats", stats.to_json()},
               {"pvqvae_config_hash", pvqvae_hash},
               {"arrays", arrays.manifest()}};
  arrays.save_blob((std::filesystem::path(dir) / "arrays.bin").string());
  write_json_file((std::filesystem::path(dir) / "checkpoint.json").string(), ckpt);
}

template <typename S>
struct LoadedDenoiser {
  DenoiserModel<S> model;
  DiffusionSchedule schedule;
  LengthStats length_stats;
  std::string pvqvae_hash;
};

template <typename S>
LoadedDenoiser<S> load_denoiser(const std::string& dir) {
  auto ckpt_path = (std::filesystem::path(dir) / "checkpoint.json").string();
  if (!std::filesystem::exists(ckpt_path))
    throw dependency_error("checkpoint not found: " + ckpt_path);
  json ckpt = read_json_file(ckpt_path);
  if (!ckpt.contains("format") || ckpt.at("format") != kDenoiserFormat)
    throw format_error("not a denoiser checkpoint: " + ckpt_path);
  json cfg_j = ckpt.at("config");
  if (ckpt.at("config_hash").get<std::string>() != hex64(fnv1a64(cfg_j.dump())))
    throw corruption_error("config hash mismatch in " + ckpt_path);
  LoadedDenoiser<S> out{DenoiserModel<S>::create(denoiser_config_from_json(cfg_j), 0),
                        schedule_from_json(ckpt.at("schedule")),
                        LengthStats::from_json(ckpt.at("length_stats")),
                        ckpt.value("pvqvae_config_hash", "")};
  ArrayStore arrays =
      ArrayStore::load((std::filesystem::path(dir) / "arrays.bin").string(), ckpt.at("arrays"));
  out.model.store.load(arrays);
  return out;
}

}  // namespace glosmo
