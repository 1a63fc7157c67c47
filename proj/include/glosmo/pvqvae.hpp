#pragma once

// Part-wise vector-quantized autoencoder. Each body part gets its own 1D
// convolutional encoder/decoder pair and its own codebook; parts never see
// each other. Temporal downsampling comes from stride-2 stages, so the
// latent length is floor(L / r).
//
// The training loss per part is
//   ||X - X_hat||^2 + ||sg(Z_e) - Z_q||^2 + beta * ||Z_e - sg(Z_q)||^2
// with sums of squares, and the decoder input uses the straight-through
// trick Z_e + sg(Z_q - Z_e) so reconstruction gradients copy onto the
// encoder unchanged.

#include <glosmo/autograd.hpp>
#include <glosmo/common.hpp>
#include <glosmo/dataset.hpp>
#include <glosmo/nn.hpp>
#include <glosmo/rng.hpp>
#include <glosmo/serialize.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace glosmo {

struct PvqVaeConfig {
  int r = 4;        // temporal downsample; must be a power of two >= 2
  int hidden = 64;  // conv channel width
  int d = 64;       // latent and code width
  int K = 128;      // codebook entries per part
  float beta = 0.25f;

  int n_stages() const {
    int stages = 0, v = r;
    while (v > 1) {
      if (v % 2 != 0) throw std::invalid_argument("downsample factor must be a power of two");
      v /= 2;
      ++stages;
    }
    if (stages < 1) throw std::invalid_argument("downsample factor must be >= 2");
    return stages;
  }

  void validate() const {
    (void)n_stages();
    if (hidden < 1 || d < 1 || K < 2) throw std::invalid_argument("bad autoencoder dimensions");
    if (beta < 0) throw std::invalid_argument("beta must be >= 0");
  }
};

inline json pvqvae_config_to_json(const PvqVaeConfig& c) {
  return {{"r", c.r}, {"hidden", c.hidden}, {"d", c.d}, {"K", c.K}, {"beta", c.beta}};
}

inline PvqVaeConfig pvqvae_config_from_json(const json& j) {
  PvqVaeConfig c;
  c.r = j.at("r").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.d = j.at("d").get<int>();
  c.K = j.at("K").get<int>();
  c.beta = j.at("beta").get<float>();
  c.validate();
  return c;
}

template <typename S>
struct PartCoder {
  nn::Conv1dLayer<S> enc_in;
  std::vector<nn::Conv1dLayer<S>> enc_down;
  nn::Conv1dLayer<S> enc_out;
  nn::Conv1dLayer<S> dec_in;
  std::vector<nn::Conv1dLayer<S>> dec_up;
  nn::Conv1dLayer<S> dec_out;
  int codebook = -1;

  using Var = typename ag::Graph<S>::Var;

  Var encode(nn::Binder<S>& ctx, Var x) const {
    auto& g = ctx.graph();
    auto h = g.relu(enc_in.apply(ctx, x));
    for (const auto& down : enc_down) h = g.relu(down.apply(ctx, h));
    return enc_out.apply(ctx, h);
  }

  Var decode(nn::Binder<S>& ctx, Var zq) const {
    auto& g = ctx.graph();
    auto h = g.relu(dec_in.apply(ctx, zq));
    for (const auto& up : dec_up) h = g.relu(up.apply(ctx, g.upsample_rows(h, 2)));
    return dec_out.apply(ctx, h);
  }
};

template <typename S>
struct PvqVae {
  PvqVaeConfig cfg;
  SkeletonSpec skeleton;
  nn::ParamStore<S> store;
  std::array<PartCoder<S>, 4> parts;

  static PvqVae create(const PvqVaeConfig& cfg, const SkeletonSpec& skeleton, std::uint64_t seed) {
    cfg.validate();
    skeleton.validate();
    PvqVae m;
    m.cfg = cfg;
    m.skeleton = skeleton;
    Rng rng(seed);
    int stages = cfg.n_stages();
    for (Part p : kParts) {
      PartCoder<S>& pc = m.parts[static_cast<std::size_t>(p)];
      std::string base = part_name(p);
      int ch = skeleton.channels(p);
      pc.enc_in = nn::Conv1dLayer<S>::create(m.store, rng, base + ".enc_in", ch, cfg.hidden, 3, 1, 1);
      for (int st = 0; st < stages; ++st)
        pc.enc_down.push_back(nn::Conv1dLayer<S>::create(
            m.store, rng, base + ".enc_down" + std::to_string(st), cfg.hidden, cfg.hidden, 4, 2, 1));
      pc.enc_out = nn::Conv1dLayer<S>::create(m.store, rng, base + ".enc_out", cfg.hidden, cfg.d, 3, 1, 1);
      pc.dec_in = nn::Conv1dLayer<S>::create(m.store, rng, base + ".dec_in", cfg.d, cfg.hidden, 3, 1, 1);
      for (int st = 0; st < stages; ++st)
        pc.dec_up.push_back(nn::Conv1dLayer<S>::create(
            m.store, rng, base + ".dec_up" + std::to_string(st), cfg.hidden, cfg.hidden, 3, 1, 1));
      pc.dec_out = nn::Conv1dLayer<S>::create(m.store, rng, base + ".dec_out", cfg.hidden, ch, 3, 1, 1);
      Mat<S> cb(cfg.K, cfg.d);
      for (int i = 0; i < cb.size(); ++i) cb.data()[i] = static_cast<S>(rng.uniform(-0.1, 0.1));
      pc.codebook = m.store.add(base + ".codebook", std::move(cb));
    }
    return m;
  }

  const PartCoder<S>& coder(Part p) const { return parts[static_cast<std::size_t>(p)]; }

  Mat<S> part_slice(const MatF& motion, Part p) const {
    if (motion.cols() != skeleton.total_channels())
      throw std::invalid_argument("motion has wrong channel count for this skeleton");
    return motion.block(0, skeleton.channel_offset(p), motion.rows(), skeleton.channels(p))
        .template cast<S>();
  }
};

// Nearest codebook row by squared L2; ties go to the smallest index.
template <typename S>
std::pair<std::vector<int>, Mat<S>> quantize(const Mat<S>& z, const Mat<S>& codebook) {
  if (z.cols() != codebook.cols())
    throw std::invalid_argument("latent width does not match codebook width");
  if (codebook.rows() < 1) throw std::invalid_argument("empty codebook");
  std::vector<int> tokens(static_cast<std::size_t>(z.rows()));
  Mat<S> zq(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    int best = 0;
    S best_d = (z.row(i) - codebook.row(0)).squaredNorm();
    for (Eigen::Index k = 1; k < codebook.rows(); ++k) {
      S d = (z.row(i) - codebook.row(k)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    tokens[static_cast<std::size_t>(i)] = best;
    zq.row(i) = codebook.row(best);
  }
  return {std::move(tokens), std::move(zq)};
}

// Value-level encode/decode for inference paths; no gradients involved.
template <typename S>
Mat<S> pvqvae_encode(const PvqVae<S>& m, Part p, const Mat<S>& x) {
  if (x.rows() < m.cfg.r)
    throw std::invalid_argument("encode needs at least r frames, got " + std::to_string(x.rows()));
  ag::Graph<S> g;
  nn::Binder<S> ctx(g, const_cast<nn::ParamStore<S>&>(m.store));
  auto z = m.coder(p).encode(ctx, g.constant(x));
  return g.value(z);
}

template <typename S>
Mat<S> pvqvae_decode(const PvqVae<S>& m, Part p, const Mat<S>& zq) {
  ag::Graph<S> g;
  nn::Binder<S> ctx(g, const_cast<nn::ParamStore<S>&>(m.store));
  auto x = m.coder(p).decode(ctx, g.constant(zq));
  return g.value(x);
}

// Decode tokens straight from the codebook.
template <typename S>
Mat<S> pvqvae_decode_tokens(const PvqVae<S>& m, Part p, const std::vector<int>& tokens) {
  const Mat<S>& cb = m.store.value(m.coder(p).codebook);
  Mat<S> zq(static_cast<Eigen::Index>(tokens.size()), cb.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= cb.rows())
      throw std::invalid_argument("token out of codebook range");
    zq.row(static_cast<Eigen::Index>(i)) = cb.row(tokens[i]);
  }
  return pvqvae_decode(m, p, zq);
}

template <typename S>
struct VqLossValues {
  S recon = 0, codebook = 0, commit = 0, total = 0;
};

// Loss terms as plain numbers, matching the training-graph construction.
template <typename S>
VqLossValues<S> vq_loss_values(const Mat<S>& x, const Mat<S>& x_hat, const Mat<S>& ze,
                               const Mat<S>& zq, S beta) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols() || ze.rows() != zq.rows() ||
      ze.cols() != zq.cols())
    throw std::invalid_argument("vq_loss: shape mismatch");
  VqLossValues<S> v;
  v.recon = (x - x_hat).squaredNorm();
  v.codebook = (ze - zq).squaredNorm();
  v.commit = v.codebook;
  v.total = v.recon + v.codebook + beta * v.commit;
  return v;
}

template <typename S>
struct PartForward {
  typename ag::Graph<S>::Var loss;
  std::vector<int> tokens;
  Mat<S> ze;  // encoder output, kept for dead-code reseeding
  S recon = 0, codebook = 0, commit = 0;
};

// Builds the full VQ training graph for one part of one sample. The three
// terms route gradients exactly as the stop-gradients demand: recon to
// encoder+decoder (straight-through), codebook term to the codebook rows,
// commitment to the encoder.
template <typename S>
PartForward<S> pvqvae_part_loss(nn::Binder<S>& ctx, const PvqVae<S>& m, Part p, const Mat<S>& x) {
  auto& g = ctx.graph();
  const PartCoder<S>& pc = m.coder(p);
  if (x.rows() < m.cfg.r)
    throw std::invalid_argument("training sample shorter than the downsample factor");
  // the decoder reproduces r * floor(L/r) frames; trailing remainder frames
  // are outside the reconstructable window
  Mat<S> x_crop = x.topRows(m.cfg.r * (x.rows() / m.cfg.r));
  auto x_in = g.constant(x_crop);
  auto ze = pc.encode(ctx, x_in);
  Mat<S> ze_val = g.value(ze);
  auto [tokens, zq_val] = quantize(ze_val, ctx.store().value(pc.codebook));

  auto st = g.add(ze, g.constant(zq_val - ze_val));
  auto x_hat = pc.decode(ctx, st);
  auto rd = g.sub(x_in, x_hat);
  auto recon = g.sum(g.mul(rd, rd));

  auto zq_rows = g.gather_rows(ctx.use(pc.codebook), tokens);
  auto cd = g.sub(g.constant(ze_val), zq_rows);
  auto codebook_term = g.sum(g.mul(cd, cd));

  auto cm = g.sub(ze, g.constant(zq_val));
  auto commit = g.sum(g.mul(cm, cm));

  PartForward<S> out;
  out.tokens = std::move(tokens);
  out.ze = std::move(ze_val);
  out.recon = g.value(recon)(0, 0);
  out.codebook = g.value(codebook_term)(0, 0);
  out.commit = g.value(commit)(0, 0);
  out.loss = g.add(g.add(recon, codebook_term), g.scale(commit, static_cast<S>(m.cfg.beta)));
  return out;
}

struct PvqVaeTrainConfig {
  int epochs = 30;
  int batch_size = 32;
  float lr = 2e-4f;
  std::uint64_t seed = 0;
  int dead_code_batches = 50;
};

// Single-threaded SGD loop with Adam. Codebook rows unused for
// dead_code_batches consecutive batches are re-seeded from a random encoder
// output of the current batch, and their Adam state is cleared.
template <typename S>
TrainStats train_pvqvae(PvqVae<S>& m, const std::vector<SampleRecord>& samples,
                        const PvqVaeTrainConfig& tc) {
  if (samples.empty()) throw std::invalid_argument("no training samples");
  if (tc.epochs < 1 || tc.batch_size < 1) throw std::invalid_argument("bad training config");
  nn::AdamConfig<S> ac;
  ac.lr = static_cast<S>(tc.lr);
  nn::Adam<S> opt(ac);
  Rng rng(tc.seed);
  std::array<std::vector<int>, 4> unused_count;
  for (auto& u : unused_count) u.assign(static_cast<std::size_t>(m.cfg.K), 0);

  TrainStats stats;
  std::vector<int> order(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_sum = 0.0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(tc.batch_size)) {
      std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(tc.batch_size));
      int batch_n = static_cast<int>(end - at);
      nn::Grads<S> grads;
      grads.ensure(m.store);
      std::array<std::vector<char>, 4> used;
      for (auto& u : used) u.assign(static_cast<std::size_t>(m.cfg.K), 0);
      std::array<std::vector<Mat<S>>, 4> batch_latents;
      double batch_loss = 0.0;

      for (std::size_t si = at; si < end; ++si) {
        const SampleRecord& rec = samples[static_cast<std::size_t>(order[si])];
        ag::Graph<S> g;
        nn::Binder<S> ctx(g, m.store);
        typename ag::Graph<S>::Var total;
        for (Part p : kParts) {
          Mat<S> x = m.part_slice(rec.motion, p);
          PartForward<S> f = pvqvae_part_loss(ctx, m, p, x);
          for (int tk : f.tokens) used[static_cast<std::size_t>(p)][static_cast<std::size_t>(tk)] = 1;
          auto& pool = batch_latents[static_cast<std::size_t>(p)];
          if (pool.size() < 8) pool.push_back(std::move(f.ze));
          total = total.valid() ? g.add(total, f.loss) : f.loss;
        }
        double sample_loss = static_cast<double>(g.value(total)(0, 0));
        if (!std::isfinite(sample_loss))
          throw training_error("pvqvae loss diverged at epoch " + std::to_string(epoch) +
                               ", sample " + rec.sample_id);
        batch_loss += sample_loss;
        g.backward(total);
        ctx.collect(grads);
      }

      for (auto& gmat : grads.by_id)
        if (gmat.size() != 0) gmat /= static_cast<S>(batch_n);
      if (!grads.all_finite())
        throw training_error("pvqvae gradients non-finite at epoch " + std::to_string(epoch));
      opt.step(m.store, grads);
      epoch_sum += batch_loss;

      for (Part p : kParts) {
        auto pi = static_cast<std::size_t>(p);
        Mat<S>& cb = m.store.value(m.coder(p).codebook);
        for (int k = 0; k < m.cfg.K; ++k) {
          auto ku = static_cast<std::size_t>(k);
          if (used[pi][ku]) {
            unused_count[pi][ku] = 0;
            continue;
          }
          if (++unused_count[pi][ku] < tc.dead_code_batches) continue;
          const auto& pool = batch_latents[pi];
          const Mat<S>& z = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
          Eigen::Index row = rng.uniform_int(0, z.rows() - 1);
          cb.row(k) = z.row(row);
          m.store.reset_optimizer_row(m.coder(p).codebook, k);
          unused_count[pi][ku] = 0;
        }
      }
    }
    stats.epoch_loss.push_back(epoch_sum / static_cast<double>(samples.size()));
  }
  return stats;
}

// ---- tokenization for the diffusion stage ----

struct TokenizedSample {
  std::string sample_id;
  std::array<std::vector<int>, 4> tokens;
  int latent_len = 0;
  std::vector<Span> latent_spans;
  std::vector<int> glosses;
  std::vector<Span> frame_spans;
  int frame_len = 0;
};

template <typename S>
TokenizedSample tokenize_sample(const PvqVae<S>& m, const SampleRecord& rec) {
  TokenizedSample out;
  out.sample_id = rec.sample_id;
  out.glosses = rec.glosses;
  out.frame_spans = rec.spans;
  out.frame_len = rec.length();
  for (Part p : kParts) {
    Mat<S> z = pvqvae_encode(m, p, m.part_slice(rec.motion, p));
    auto [tokens, zq] = quantize(z, m.store.value(m.coder(p).codebook));
    (void)zq;
    out.tokens[static_cast<std::size_t>(p)] = std::move(tokens);
  }
  out.latent_len = static_cast<int>(out.tokens[0].size());
  for (Part p : kParts)
    if (static_cast<int>(out.tokens[static_cast<std::size_t>(p)].size()) != out.latent_len)
      throw numeric_error("parts produced different latent lengths");
  out.latent_spans = to_latent_spans(rec.spans, m.cfg.r, out.latent_len);
  return out;
}

template <typename S>
std::vector<TokenizedSample> tokenize_dataset(const PvqVae<S>& m,
                                              const std::vector<SampleRecord>& samples) {
  std::vector<TokenizedSample> out;
  out.reserve(samples.size());
  for (const auto& rec : samples) out.push_back(tokenize_sample(m, rec));
  return out;
}

// ---- checkpointing ----

inline constexpr const char* kPvqVaeFormat = "pvqvae-v1";

template <typename S>
void save_pvqvae(const PvqVae<S>& m, const std::string& dir) {
  std::filesystem::create_directories(dir);
  ArrayStore arrays;
  m.store.save(arrays);
  json cfg = pvqvae_config_to_json(m.cfg);
  cfg["skeleton"] = skeleton_to_json(m.skeleton);
  json ckpt = {{"format", kPvqVaeFormat},
               {"config", cfg},
               {"config_hash", hex64(fnv1a64(cfg.dump()))},
               {"arrays", arrays.manifest()}};
  arrays.save_blob((std::filesystem::path(dir) / "arrays.bin").string());
  write_json_file((std::filesystem::path(dir) / "checkpoint.json").string(), ckpt);
}

template <typename S>
PvqVae<S> load_pvqvae(const std::string& dir) {
  auto ckpt_path = (std::filesystem::path(dir) / "checkpoint.json").string();
  if (!std::filesystem::exists(ckpt_path))
    throw dependency_error("checkpoint not found: " + ckpt_path);
  json ckpt = read_json_file(ckpt_path);
  if (!ckpt.contains("format") || ckpt.at("format") != kPvqVaeFormat)
    throw format_error("not a pvqvae checkpoint: " + ckpt_path);
  json cfg_j = ckpt.at("config");
  if (ckpt.at("config_hash").get<std::string>() != hex64(fnv1a64(cfg_j.dump())))
    throw corruption_error("config hash mismatch in " + ckpt_path);
  PvqVae<S> m = PvqVae<S>::create(pvqvae_config_from_json(cfg_j),
                                  skeleton_from_json(cfg_j.at("skeleton")), 0);
  ArrayStore arrays = ArrayStore::load((std::filesystem::path(dir) / "arrays.bin").string(),
                                       ckpt.at("arrays"));
  m.store.load(arrays);
  return m;
}

}  // namespace glosmo
