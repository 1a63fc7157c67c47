// Acceptance runner. Prints one PASS/FAIL line per criterion and exits with
// the number of failures. Criteria 1-6 are exact property checks against
// independent oracles; 7-11 train the full stack on the synthetic corpus at
// a width that fits a single-core budget. The back-translation gate
// (criterion 12) is checked before 8-11; when it fails those four are
// reported INVALID rather than FAIL, since the recognizer's verdicts would
// be meaningless.

#include <glosmo/pipeline.hpp>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

using namespace glosmo;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  int id = 0;
  std::string label;
  std::string state;  // PASS | FAIL | INVALID
  std::string note;
};

std::vector<Verdict> g_results;

std::string strf(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

void record(int id, const std::string& label, bool ok, const std::string& note) {
  g_results.push_back({id, label, ok ? "PASS" : "FAIL", note});
  std::fprintf(stderr, "[%2d] %-4s %s  (%s)\n", id, ok ? "pass" : "FAIL", label.c_str(),
               note.c_str());
}

void record_invalid(int id, const std::string& label, const std::string& note) {
  g_results.push_back({id, label, "INVALID", note});
  std::fprintf(stderr, "[%2d] invalid %s  (%s)\n", id, label.c_str(), note.c_str());
}

double elapsed(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

// ---- 1: schedule algebra against explicit matrix arithmetic ----

void check_diffusion_algebra() {
  const int K = 6, T = 10;
  DiffusionSchedule s = build_schedule(T, K, 1.0);

  double row_err = 0.0;
  for (int t = 1; t <= T; ++t) {
    Eigen::MatrixXd q = s.step_matrix(t);
    for (Eigen::Index i = 0; i < q.rows(); ++i)
      row_err = std::max(row_err, std::abs(q.row(i).sum() - 1.0));
  }

  double marg_err = 0.0;
  Eigen::MatrixXd prod = Eigen::MatrixXd::Identity(K + 1, K + 1);
  for (int t = 1; t <= T; ++t) {
    prod = prod * s.step_matrix(t);
    marg_err = std::max(marg_err, (prod - s.marginal_matrix(t)).cwiseAbs().maxCoeff());
  }

  // posterior vs direct Bayes on the explicit matrices, every reachable
  // (k_t, k0, t); unreachable combinations must refuse rather than emit junk
  double post_err = 0.0;
  bool unreachable_ok = true;
  for (int t = 1; t <= T; ++t) {
    Eigen::MatrixXd step = s.step_matrix(t);
    Eigen::MatrixXd prior =
        t == 1 ? Eigen::MatrixXd::Identity(K + 1, K + 1) : s.marginal_matrix(t - 1);
    for (int k0 = 0; k0 < K; ++k0)
      for (int kt = 0; kt <= K; ++kt) {
        Eigen::VectorXd bayes(K + 1);
        for (int m = 0; m <= K; ++m) bayes(m) = step(m, kt) * prior(k0, m);
        double z = bayes.sum();
        if (z <= 0.0) {
          // at t=1 the posterior is the point mass on k0 by definition even
          // when k_t carries no mass; later steps must refuse
          if (t == 1) {
            Eigen::VectorXd point = Eigen::VectorXd::Zero(K + 1);
            point(k0) = 1.0;
            post_err = std::max(post_err,
                                (q_posterior(kt, k0, t, s) - point).cwiseAbs().maxCoeff());
          } else {
            try {
              q_posterior(kt, k0, t, s);
              unreachable_ok = false;
            } catch (const numeric_error&) {
            }
          }
          continue;
        }
        bayes /= z;
        post_err =
            std::max(post_err, (q_posterior(kt, k0, t, s) - bayes).cwiseAbs().maxCoeff());
      }
  }

  double tail = s.cum_gamma[static_cast<std::size_t>(T)];
  bool ok = row_err <= 1e-12 && marg_err <= 1e-9 && post_err <= 1e-9 &&
            tail >= 1.0 - 1e-6 && unreachable_ok;
  record(1, "diffusion algebra (row sums, marginals, posterior, terminal mask)", ok,
         strf("row %.1e, marginal %.1e, posterior %.1e, cum_gamma[T] %.8f", row_err, marg_err,
              post_err, tail));
}

// ---- 2: argmax reverse chain with an oracle predictor ----

void check_oracle_recovery() {
  const int K = 6, L = 8, T = 10;
  DiffusionSchedule s = build_schedule(T, K, 1.0);
  int recovered = 0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(4000 + static_cast<std::uint64_t>(trial));
    std::vector<int> k0(L);
    for (int& v : k0) v = static_cast<int>(rng.uniform_int(0, K - 1));
    auto oracle = [&](const std::vector<int>& state, int) {
      MatD logits = MatD::Zero(static_cast<Eigen::Index>(state.size()), K);
      for (std::size_t i = 0; i < state.size(); ++i)
        logits(static_cast<Eigen::Index>(i), k0[i]) = 50.0;
      return logits;
    };
    auto out = reverse_chain(oracle, L, s, rng, 0.0);
    recovered += out == k0;
  }
  record(2, "oracle reverse chain recovers clean tokens at temperature 0", recovered == trials,
         strf("%d/%d trials exact", recovered, trials));
}

// ---- 3: quantization vs brute force; straight-through copy ----

void check_quantization() {
  Rng rng(17);
  const int K = 64, d = 16, n = 1000;
  MatF cb(K, d), z(n, d);
  for (int i = 0; i < cb.size(); ++i) cb.data()[i] = static_cast<float>(rng.gaussian());
  for (int i = 0; i < z.size(); ++i) z.data()[i] = static_cast<float>(rng.gaussian());

  auto [tokens, zq] = quantize(z, cb);
  int mismatches = 0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    float best_d = (z.row(i) - cb.row(0)).squaredNorm();
    for (int k = 1; k < K; ++k) {
      float dd = (z.row(i) - cb.row(k)).squaredNorm();
      if (dd < best_d) {
        best_d = dd;
        best = k;
      }
    }
    mismatches += tokens[static_cast<std::size_t>(i)] != best;
  }

  auto [t2, q2] = quantize(zq, cb);
  bool idempotent = t2 == tokens && q2 == zq;

  // straight-through: grad through add(ze, const(zq - ze)) must equal the
  // downstream gradient bit for bit
  MatD ze_v(7, 5), zq_v(7, 5), w(7, 5);
  for (int i = 0; i < ze_v.size(); ++i) {
    ze_v.data()[i] = rng.gaussian();
    zq_v.data()[i] = rng.gaussian();
    w.data()[i] = rng.gaussian();
  }
  ag::Graph<double> g;
  auto ze = g.input(ze_v, true);
  auto st = g.add(ze, g.constant(zq_v - ze_v));
  g.backward(g.sum(g.mul(st, g.constant(w))));
  bool st_exact = (g.grad(ze).array() == w.array()).all();

  record(3, "quantize matches brute force; idempotent; straight-through exact",
         mismatches == 0 && idempotent && st_exact,
         strf("%d/%d assignments match, idempotent %d, st copy exact %d", n - mismatches, n,
              idempotent, st_exact));
}

// ---- 4: finite-difference gradient checks ----

void check_gradients() {
  double vlb_err = 0.0;
  {
    DiffusionSchedule s = build_schedule(10, 6, 1.0);
    Rng rng(23);
    MatD logits(5, 6);
    for (int i = 0; i < logits.size(); ++i) logits.data()[i] = 0.5 * rng.gaussian();
    std::vector<int> k0{0, 1, 2, 3, 4};
    auto kt = q_sample(k0, 7, s, rng);
    for (int t : {1, 4, 7}) {
      ag::Graph<double> g;
      auto in = g.input(logits, true);
      auto terms = vlb_loss(g, in, k0, kt, t, s, 5e-4);
      g.backward(terms.total);
      MatD analytic = g.grad(in);
      const double h = 1e-6;
      for (int i = 0; i < logits.size(); ++i) {
        auto eval = [&](double delta) {
          MatD l2 = logits;
          l2.data()[i] += delta;
          ag::Graph<double> g2;
          auto t2 = vlb_loss(g2, g2.input(l2, false), k0, kt, t, s, 5e-4);
          return g2.value(t2.total)(0, 0);
        };
        double fd = (eval(h) - eval(-h)) / (2 * h);
        double an = analytic.data()[i];
        vlb_err = std::max(vlb_err, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0}));
      }
    }
  }

  // commitment term through a real encoder; coordinates where the nudge
  // flips a codebook assignment sit on the non-differentiable seam and are
  // skipped
  double commit_err = 0.0;
  int commit_checked = 0;
  {
    SkeletonSpec sk;
    PvqVaeConfig pc;
    pc.r = 2;
    pc.hidden = 5;
    pc.d = 4;
    pc.K = 6;
    auto m = PvqVae<double>::create(pc, sk, 99);
    Rng rng(29);
    MatD x(8, sk.channels(Part::face));
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.gaussian();
    const auto& coder = m.coder(Part::face);

    auto encode_val = [&]() {
      ag::Graph<double> g;
      nn::Binder<double> ctx(g, m.store);
      auto ze = coder.encode(ctx, g.constant(x));
      return g.value(ze);
    };
    MatD ze0 = encode_val();
    auto [tok0, zq0] = quantize(ze0, m.store.value(coder.codebook));
    const double beta = static_cast<double>(pc.beta);

    nn::Grads<double> grads;
    grads.ensure(m.store);
    {
      ag::Graph<double> g;
      nn::Binder<double> ctx(g, m.store);
      auto ze = coder.encode(ctx, g.constant(x));
      auto cm = g.sub(ze, g.constant(zq0));
      g.backward(g.scale(g.sum(g.mul(cm, cm)), beta));
      ctx.collect(grads);
    }

    const double h = 1e-6;
    Rng pick(31);
    for (int pid : {coder.enc_in.w, coder.enc_in.b, coder.enc_down[0].w, coder.enc_out.w,
                    coder.enc_out.b}) {
      Mat<double>& val = m.store.value(pid);
      for (int probe = 0; probe < 5; ++probe) {
        int idx = static_cast<int>(pick.uniform_int(0, val.size() - 1));
        auto commit_at = [&](double delta) -> std::optional<double> {
          double keep = val.data()[idx];
          val.data()[idx] = keep + delta;
          MatD ze = encode_val();
          auto [tok, zq] = quantize(ze, m.store.value(coder.codebook));
          val.data()[idx] = keep;
          if (tok != tok0) return std::nullopt;
          return beta * (ze - zq).squaredNorm();
        };
        auto up = commit_at(h), down = commit_at(-h);
        if (!up || !down) continue;
        double fd = (*up - *down) / (2 * h);
        double an = grads.by_id[static_cast<std::size_t>(pid)].size() == 0
                        ? 0.0
                        : grads.by_id[static_cast<std::size_t>(pid)].data()[idx];
        commit_err =
            std::max(commit_err, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0}));
        ++commit_checked;
      }
    }
  }

  bool ok = vlb_err <= 1e-4 && commit_err <= 1e-4 && commit_checked >= 20;
  record(4, "vlb and commitment gradients match central differences", ok,
         strf("vlb rel err %.2e, commit rel err %.2e over %d coords", vlb_err, commit_err,
              commit_checked));
}

// ---- 5: conv locality, fusion equivalence, face isolation ----

struct ProbeSetup {
  std::vector<int> glosses{1, 3};
  std::vector<int> lengths{12, 12};
  int latent_len = 6;
  int r = 4;
};

DenoiserConfig probe_cfg() {
  DenoiserConfig c;
  c.K = 8;
  c.T = 6;
  c.d_feat = 16;
  c.n_heads = 2;
  c.n_blocks = 1;
  c.conv_kernel = 3;
  c.d_cond = 6;
  c.d_time = 8;
  c.vocab_size = 5;
  return c;
}

template <typename S>
ConditionGrid probe_condition(const DenoiserModel<S>& m, const ProbeSetup& ps) {
  MatF table = m.store.value(m.gloss_embed).template cast<float>();
  return build_condition_values(table, m.cfg.condition, ps.glosses, ps.lengths, ps.r);
}

std::array<std::vector<int>, 4> probe_tokens(Rng& rng, int len, int K) {
  std::array<std::vector<int>, 4> t;
  for (auto& seq : t) {
    seq.resize(static_cast<std::size_t>(len));
    for (int& v : seq) v = static_cast<int>(rng.uniform_int(0, K - 1));
  }
  return t;
}

void check_locality() {
  ProbeSetup ps;

  // token and condition pokes must stay inside n_blocks * (kernel-1)/2 with
  // self-attention ablated and no inter-part edges
  auto locality_ok = [&](int n_blocks, FusionMode fusion, int radius, std::string& why) {
    DenoiserConfig c = probe_cfg();
    c.n_blocks = n_blocks;
    c.fusion = fusion;
    c.ipa = IpaMode::none;
    c.disable_self_attention = true;
    auto m = DenoiserModel<float>::create(c, 21);
    ConditionGrid cond = probe_condition(m, ps);
    Rng rng(13);
    auto tokens = probe_tokens(rng, ps.latent_len, c.K);
    auto base = denoiser_forward_values(m, tokens, 2, cond, ps.glosses);

    const int at = 3;
    auto poked = tokens;
    poked[0][at] = (poked[0][at] + 1) % c.K;
    auto out_tok = denoiser_forward_values(m, poked, 2, cond, ps.glosses);

    ConditionGrid moved = cond;
    moved.grid.row(at).array() += 0.25f;
    auto out_cond = denoiser_forward_values(m, tokens, 2, moved, ps.glosses);

    for (int row = 0; row < ps.latent_len; ++row) {
      double dt = (out_tok[0].row(row) - base[0].row(row)).cwiseAbs().maxCoeff();
      double dc = (out_cond[0].row(row) - base[0].row(row)).cwiseAbs().maxCoeff();
      if (std::abs(row - at) > radius) {
        if (dt != 0.0 || dc != 0.0) {
          why = strf("blocks=%d row %d leaked (token %.1e cond %.1e)", n_blocks, row, dt, dc);
          return false;
        }
      } else if (row == at && (dt == 0.0 || dc == 0.0)) {
        why = strf("blocks=%d poke invisible at its own row", n_blocks);
        return false;
      }
    }
    for (std::size_t p = 1; p < 4; ++p)
      if ((out_tok[p] - base[p]).cwiseAbs().maxCoeff() != 0.0) {
        why = strf("blocks=%d cross-part leak without ipa", n_blocks);
        return false;
      }
    return true;
  };

  std::string why;
  bool local = locality_ok(1, FusionMode::tac, 1, why) &&
               locality_ok(3, FusionMode::tac, 3, why) &&
               locality_ok(1, FusionMode::adaln_fc, 0, why);

  // adaln_fc is tac with the kernel pinned to 1
  double fuse_diff = 0.0;
  {
    DenoiserConfig a = probe_cfg();
    a.fusion = FusionMode::tac;
    a.conv_kernel = 1;
    DenoiserConfig b = probe_cfg();
    b.fusion = FusionMode::adaln_fc;
    auto ma = DenoiserModel<double>::create(a, 33);
    auto mb = DenoiserModel<double>::create(b, 33);
    ConditionGrid cond = probe_condition(ma, ps);
    Rng rng(14);
    auto tokens = probe_tokens(rng, ps.latent_len, a.K);
    auto va = denoiser_forward_values(ma, tokens, 3, cond, ps.glosses);
    auto vb = denoiser_forward_values(mb, tokens, 3, cond, ps.glosses);
    for (std::size_t p = 0; p < 4; ++p)
      fuse_diff = std::max(fuse_diff, (va[p] - vb[p]).cwiseAbs().maxCoeff());
  }

  // inter-part attention has no edge into the face stream
  bool face_isolated = false, hands_react = false;
  {
    DenoiserConfig c = probe_cfg();
    c.ipa = IpaMode::both;
    auto m = DenoiserModel<float>::create(c, 35);
    ConditionGrid cond = probe_condition(m, ps);
    Rng rng(15);
    auto tokens = probe_tokens(rng, ps.latent_len, c.K);
    auto base = denoiser_forward_values(m, tokens, 2, cond, ps.glosses);
    auto poked = tokens;
    poked[0][2] = (poked[0][2] + 3) % c.K;
    auto out = denoiser_forward_values(m, poked, 2, cond, ps.glosses);
    face_isolated = (out[3] - base[3]).cwiseAbs().maxCoeff() == 0.0;
    hands_react = (out[1] - base[1]).cwiseAbs().maxCoeff() > 0.0 &&
                  (out[2] - base[2]).cwiseAbs().maxCoeff() > 0.0;
  }

  bool ok = local && fuse_diff <= 1e-12 && face_isolated && hands_react;
  record(5, "conv receptive field exact; adaln_fc == tac@k1; face untouched by ipa", ok,
         local ? strf("fusion diff %.1e, face isolated %d, hands react %d", fuse_diff,
                      face_isolated, hands_react)
               : why);
}

// ---- 6: sequence metric oracles ----

long edit_oracle(const std::vector<int>& a, const std::vector<int>& b, std::size_t i,
                 std::size_t j, std::map<std::pair<std::size_t, std::size_t>, long>& memo) {
  if (i == 0) return static_cast<long>(j);
  if (j == 0) return static_cast<long>(i);
  auto key = std::make_pair(i, j);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  long sub = edit_oracle(a, b, i - 1, j - 1, memo) + (a[i - 1] == b[j - 1] ? 0 : 1);
  long del = edit_oracle(a, b, i - 1, j, memo) + 1;
  long ins = edit_oracle(a, b, i, j - 1, memo) + 1;
  long best = std::min({sub, del, ins});
  memo.emplace(key, best);
  return best;
}

void dtw_paths(const MatD& cost, Eigen::Index i, Eigen::Index j, double acc, int steps,
               double& best_cost, int& best_len) {
  acc += cost(i, j);
  steps += 1;
  if (i == cost.rows() - 1 && j == cost.cols() - 1) {
    if (best_len == 0 || acc < best_cost || (acc == best_cost && steps < best_len)) {
      best_cost = acc;
      best_len = steps;
    }
    return;
  }
  if (i + 1 < cost.rows() && j + 1 < cost.cols())
    dtw_paths(cost, i + 1, j + 1, acc, steps, best_cost, best_len);
  if (i + 1 < cost.rows()) dtw_paths(cost, i + 1, j, acc, steps, best_cost, best_len);
  if (j + 1 < cost.cols()) dtw_paths(cost, i, j + 1, acc, steps, best_cost, best_len);
}

void check_metric_oracles() {
  SkeletonSpec sk;
  Rng rng(404);

  bool dtw_ok = true;
  for (int trial = 0; trial < 12 && dtw_ok; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_int(0, 4));
    int m = 2 + static_cast<int>(rng.uniform_int(0, 4));
    MatF gen(n, sk.total_channels()), ref(m, sk.total_channels());
    for (int i = 0; i < gen.size(); ++i) gen.data()[i] = static_cast<float>(rng.gaussian());
    for (int i = 0; i < ref.size(); ++i) ref.data()[i] = static_cast<float>(rng.gaussian());
    for (JointSubset subset : {JointSubset::body, JointSubset::hands, JointSubset::all}) {
      auto [j0, j1] = joint_range(sk, subset);
      MatD cost(n, m);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          double acc = 0.0;
          for (int jt = j0; jt < j1; ++jt) {
            double dx = static_cast<double>(gen(i, 3 * jt)) - ref(j, 3 * jt);
            double dy = static_cast<double>(gen(i, 3 * jt + 1)) - ref(j, 3 * jt + 1);
            double dz = static_cast<double>(gen(i, 3 * jt + 2)) - ref(j, 3 * jt + 2);
            acc += std::sqrt(dx * dx + dy * dy + dz * dz);
          }
          cost(i, j) = acc / (j1 - j0);
        }
      double best_cost = 0.0;
      int best_len = 0;
      dtw_paths(cost, 0, 0, 0.0, 0, best_cost, best_len);
      DtwResult r = dtw_jpe(gen, ref, sk, subset);
      dtw_ok = dtw_ok && r.total_cost == best_cost && r.path_length == best_len &&
               r.mean_cost == best_cost / best_len;
    }
  }

  // exhaustive over the binary alphabet up to length 6
  bool wer_ok = true;
  {
    std::vector<std::vector<int>> seqs{{}};
    std::vector<std::vector<int>> frontier{{}};
    for (int l = 0; l < 6; ++l) {
      std::vector<std::vector<int>> next;
      for (const auto& s : frontier)
        for (int a = 0; a < 2; ++a) {
          auto s2 = s;
          s2.push_back(a);
          seqs.push_back(s2);
          next.push_back(std::move(s2));
        }
      frontier = std::move(next);
    }
    for (const auto& hyp : seqs)
      for (const auto& ref : seqs) {
        if (ref.empty()) continue;
        std::map<std::pair<std::size_t, std::size_t>, long> memo;
        long want = edit_oracle(hyp, ref, hyp.size(), ref.size(), memo);
        EditCounts c = edit_counts(hyp, ref);
        wer_ok = wer_ok && c.edits == want && c.ref_len == static_cast<long>(ref.size());
      }
  }

  MatF self(5, sk.total_channels());
  for (int i = 0; i < self.size(); ++i) self.data()[i] = static_cast<float>(rng.gaussian());
  DtwResult self_dtw = dtw_jpe(self, self, sk, JointSubset::all);
  std::vector<int> seq{3, 1, 4, 1, 5, 9};
  bool ident_ok = self_dtw.total_cost == 0.0 && self_dtw.mean_cost == 0.0 &&
                  wer(seq, seq) == 0.0 && bleu4(seq, seq) == 1.0 && rouge_l(seq, seq) == 1.0;

  record(6, "dtw and wer match exhaustive oracles; identities exact",
         dtw_ok && wer_ok && ident_ok,
         strf("dtw %d, wer %d, identities %d", dtw_ok, wer_ok, ident_ok));
}

// ---- desk-scale corpus runs (criteria 7-12) ----

// Widths are sized for a single core; the library defaults stay at the
// full-scale values. One seed drives corpus, training, and sampling, so a
// rerun reproduces these numbers exactly.
RunConfig desk_config() {
  RunConfig cfg;
  cfg.seed = 1;
  cfg.pvqvae.model.r = 4;
  cfg.pvqvae.model.hidden = 64;
  cfg.pvqvae.model.d = 64;
  cfg.pvqvae.model.K = 256;
  cfg.pvqvae.epochs = 30;
  cfg.pvqvae.batch_size = 4;
  cfg.pvqvae.lr = 3e-4f;
  cfg.diffusion.T = 32;
  cfg.denoiser.model.d_feat = 64;
  cfg.denoiser.model.n_heads = 4;
  cfg.denoiser.model.n_blocks = 2;
  cfg.denoiser.model.d_cond = 32;
  cfg.denoiser.model.d_time = 64;
  cfg.denoiser.epochs = 30;
  cfg.recognizer.hidden = 96;
  cfg.recognizer.epochs = 8;
  return cfg;
}

void check_reconstruction(const RunConfig& cfg, const std::string& vq_dir, const Dataset& test) {
  auto vae = load_pvqvae<float>(vq_dir);
  const SkeletonSpec& sk = test.vocab.skeleton;
  auto [j0, j1] = joint_range(sk, JointSubset::all);
  const int J = j1 - j0;

  Eigen::VectorXd err_sum = Eigen::VectorXd::Zero(J);
  Eigen::VectorXd mean_sum = Eigen::VectorXd::Zero(3 * J);
  Eigen::VectorXd sq_sum = Eigen::VectorXd::Zero(3 * J);
  long frames = 0;

  for (const auto& s : test.samples) {
    Eigen::Index rows = vae.cfg.r * (s.motion.rows() / vae.cfg.r);
    MatF recon(rows, sk.total_channels());
    for (Part p : kParts) {
      Mat<float> x = vae.part_slice(s.motion, p);
      Mat<float> z = pvqvae_encode(vae, p, x);
      auto [tok, zq] = quantize(z, vae.store.value(vae.coder(p).codebook));
      (void)tok;
      Mat<float> xh = pvqvae_decode(vae, p, zq);
      recon.block(0, sk.channel_offset(p), xh.rows(), xh.cols()) = xh;
    }
    for (Eigen::Index f = 0; f < rows; ++f) {
      for (int j = 0; j < J; ++j) {
        double dx = static_cast<double>(recon(f, 3 * j)) - s.motion(f, 3 * j);
        double dy = static_cast<double>(recon(f, 3 * j + 1)) - s.motion(f, 3 * j + 1);
        double dz = static_cast<double>(recon(f, 3 * j + 2)) - s.motion(f, 3 * j + 2);
        err_sum(j) += std::sqrt(dx * dx + dy * dy + dz * dz);
        for (int c = 0; c < 3; ++c) {
          double v = s.motion(f, 3 * j + c);
          mean_sum(3 * j + c) += v;
          sq_sum(3 * j + c) += v * v;
        }
      }
      ++frames;
    }
  }

  double err = 0.0, spread = 0.0;
  for (int j = 0; j < J; ++j) {
    err += err_sum(j) / static_cast<double>(frames);
    double var = 0.0;
    for (int c = 0; c < 3; ++c) {
      double mu = mean_sum(3 * j + c) / static_cast<double>(frames);
      var += sq_sum(3 * j + c) / static_cast<double>(frames) - mu * mu;
    }
    spread += std::sqrt(std::max(0.0, var));
  }
  err /= J;
  spread /= J;

  bool ok = err <= 0.15 * spread;
  record(7, "held-out reconstruction error within 15% of per-joint motion spread", ok,
         strf("err %.4f vs 0.15*std %.4f (ratio %.1f%%, %d epochs)", err, 0.15 * spread,
              100.0 * err / spread, cfg.pvqvae.epochs));
}

int main_desk() {
  auto t0 = std::chrono::steady_clock::now();
  fs::path root = fs::temp_directory_path() / "glosmo_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  RunConfig cfg = desk_config();

  const std::string data = (root / "data").string();
  run_gen_data(cfg, data);
  std::fprintf(stderr, "  corpus ready (%.0fs)\n", elapsed(t0));

  const std::string vq = (root / "pvqvae").string();
  run_train_pvqvae(cfg, data, vq);
  std::fprintf(stderr, "  pvqvae trained (%.0fs)\n", elapsed(t0));

  Dataset test = read_dataset(data + "/test");
  check_reconstruction(cfg, vq, test);

  // gate before anything that depends on recognizer verdicts
  const std::string rec_dir = (root / "recognizer").string();
  Recognizer rec = obtain_recognizer(cfg, data, rec_dir);
  double fa = frame_accuracy(rec, test.samples);
  std::vector<EditCounts> gt_counts;
  for (const auto& s : test.samples)
    gt_counts.push_back(edit_counts(back_translate(rec, s.motion, cfg.eval.min_run), s.glosses));
  double gt_wer = corpus_wer(gt_counts);
  bool gate = fa >= cfg.eval.gate_frame_accuracy && gt_wer <= cfg.eval.gate_wer;
  record(12, "recognizer gate: frame accuracy >= 95%, ground-truth wer <= 5%", gate,
         strf("frame accuracy %.4f, ground-truth wer %.4f", fa, gt_wer));
  std::fprintf(stderr, "  recognizer ready (%.0fs)\n", elapsed(t0));

  const char* l8 = "gloss+tac beats sentence-level and cross-attention by >= 15 wer points";
  const char* l9 = "tac at kernel 3 not worse than adaln+fc (2 point tie band)";
  const char* l10 = "inter-part attention: wer within 2 points and coordination not worse";
  const char* l11 = "wer degradation <= 15 points across length deltas -4..+8";
  if (!gate) {
    const std::string note = "gate failed; run invalid for ablation criteria";
    record_invalid(8, l8, note);
    record_invalid(9, l9, note);
    record_invalid(10, l10, note);
    record_invalid(11, l11, note);
    return 0;
  }

  auto variant = [&](const char* name, FusionMode fusion, ConditionKind condition, IpaMode ipa) {
    RunConfig v = cfg;
    v.denoiser.model.fusion = fusion;
    v.denoiser.model.condition = condition;
    v.denoiser.model.ipa = ipa;
    const std::string den = (root / name / "denoiser").string();
    run_train_denoiser(v, data, vq, den);
    EvalSummary s = run_eval(v, data, vq, den, rec_dir, (root / name / "eval").string());
    std::fprintf(stderr, "  %s: wer %.4f align %.4f coord %.4f (%.0fs)\n", name, s.wer,
                 s.alignment, s.coordination, elapsed(t0));
    return s;
  };

  EvalSummary s_tac = variant("tac", FusionMode::tac, ConditionKind::gloss, IpaMode::both);
  EvalSummary s_sent = variant("sentence", FusionMode::tac, ConditionKind::sentence, IpaMode::both);
  EvalSummary s_ca =
      variant("cross_attention", FusionMode::cross_attention, ConditionKind::gloss, IpaMode::both);
  EvalSummary s_fc = variant("adaln_fc", FusionMode::adaln_fc, ConditionKind::gloss, IpaMode::both);
  EvalSummary s_none = variant("ipa_none", FusionMode::tac, ConditionKind::gloss, IpaMode::none);

  double w_tac = 100.0 * s_tac.wer, w_sent = 100.0 * s_sent.wer, w_ca = 100.0 * s_ca.wer;
  double w_fc = 100.0 * s_fc.wer, w_none = 100.0 * s_none.wer;

  record(8, l8,
         w_sent - w_tac >= 15.0 && w_ca - w_tac >= 15.0 && s_tac.alignment >= 0.8 &&
             s_sent.alignment <= 0.6,
         strf("wer tac %.1f vs sentence %.1f vs cross-attn %.1f; align tac %.2f sentence %.2f",
              w_tac, w_sent, w_ca, s_tac.alignment, s_sent.alignment));

  record(9, l9, w_tac <= w_fc + 2.0,
         strf("wer tac %.1f vs adaln+fc %.1f%s", w_tac, w_fc,
              w_tac > w_fc ? " (tie within tolerance)" : ""));

  record(10, l10, w_tac <= w_none + 2.0 && s_tac.coordination <= s_none.coordination + 1e-9,
         strf("wer both %.1f vs none %.1f; coordination both %.4f vs none %.4f", w_tac, w_none,
              s_tac.coordination, s_none.coordination));

  double worst = 0.0;
  int worst_delta = 0;
  for (int delta : {-4, -2, 2, 4, 8}) {
    RunConfig v = cfg;
    v.generate.length_delta = delta;
    std::string name = "delta_" + std::to_string(delta);
    EvalSummary s = run_eval(v, data, vq, (root / "tac" / "denoiser").string(), rec_dir,
                             (root / name / "eval").string());
    std::fprintf(stderr, "  %s: wer %.4f (%.0fs)\n", name.c_str(), s.wer, elapsed(t0));
    double deg = 100.0 * s.wer - w_tac;
    if (deg > worst) {
      worst = deg;
      worst_delta = delta;
    }
  }
  record(11, l11, worst <= 15.0,
         strf("worst degradation %.1f points at delta %+d (base wer %.1f)", worst, worst_delta,
              w_tac));
  return 0;
}

}  // namespace

void guarded(int id, const char* label, void (*fn)()) {
  try {
    fn();
  } catch (const std::exception& e) {
    record(id, label, false, std::string("threw: ") + e.what());
  }
}

int main() {
  guarded(1, "diffusion algebra", check_diffusion_algebra);
  guarded(2, "oracle reverse chain", check_oracle_recovery);
  guarded(3, "quantization", check_quantization);
  guarded(4, "gradient checks", check_gradients);
  guarded(5, "locality and fusion equivalence", check_locality);
  guarded(6, "metric oracles", check_metric_oracles);

  try {
    main_desk();
  } catch (const std::exception& e) {
    // anything unhandled poisons the remaining criteria rather than
    // aborting the report
    std::vector<bool> seen(13, false);
    for (const auto& v : g_results) seen[static_cast<std::size_t>(v.id)] = true;
    for (int id = 7; id <= 12; ++id)
      if (!seen[static_cast<std::size_t>(id)])
        record(id, "desk-scale criterion", false, std::string("aborted: ") + e.what());
  }

  std::sort(g_results.begin(), g_results.end(),
            [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  int failures = 0;
  std::printf("\n");
  for (const auto& v : g_results) {
    failures += v.state == "FAIL";
    std::printf("%-7s %2d  %s  [%s]\n", v.state.c_str(), v.id, v.label.c_str(), v.note.c_str());
  }
  std::printf("\n%d/%zu criteria passed\n",
              static_cast<int>(g_results.size()) - failures -
                  static_cast<int>(std::count_if(g_results.begin(), g_results.end(),
                                                 [](const Verdict& v) { return v.state == "INVALID"; })),
              g_results.size());
  return failures;
}
