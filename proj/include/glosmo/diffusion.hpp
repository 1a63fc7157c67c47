#pragma once

// Absorbing-state discrete diffusion over token sequences. States are the K
// codebook indices plus MASK (= index K). A forward step keeps a token with
// probability alpha_t, resamples it uniformly with K*beta_t, and masks it
// with gamma_t; MASK is absorbing. The schedule keeps closed-form cumulative
// marginals so q(k_t | k_0) and the exact posterior q(k_{t-1} | k_t, k_0)
// never require matrix products.

#include <glosmo/autograd.hpp>
#include <glosmo/common.hpp>
#include <glosmo/rng.hpp>
#include <glosmo/serialize.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace glosmo {

struct DiffusionSchedule {
  int T = 0;
  int K = 0;  // real token count; MASK sits at index K
  double gamma_final = 1.0;
  // Per-step and cumulative quantities, indexed 1..T ([0] holds the t=0
  // identity: cum_alpha=1, cum_beta=cum_gamma=0).
  std::vector<double> alpha, beta, gamma;
  std::vector<double> cum_alpha, cum_beta, cum_gamma;

  int mask_token() const { return K; }

  void check_t(int t) const {
    if (t < 1 || t > T)
      throw std::invalid_argument("timestep " + std::to_string(t) + " outside [1," +
                                  std::to_string(T) + "]");
  }

  // Row-stochastic one-step transition: row = from-state, column = to-state.
  Eigen::MatrixXd step_matrix(int t) const {
    check_t(t);
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(K + 1, K + 1);
    for (int m = 0; m < K; ++m) {
      for (int j = 0; j < K; ++j) q(m, j) = beta[static_cast<std::size_t>(t)];
      q(m, m) = alpha[static_cast<std::size_t>(t)] + beta[static_cast<std::size_t>(t)];
      q(m, K) = gamma[static_cast<std::size_t>(t)];
    }
    q(K, K) = 1.0;
    return q;
  }

  // Row-stochastic t-step marginal q(k_t | k_0) from the cumulative terms.
  Eigen::MatrixXd marginal_matrix(int t) const {
    check_t(t);
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(K + 1, K + 1);
    for (int m = 0; m < K; ++m) {
      for (int j = 0; j < K; ++j) q(m, j) = cum_beta[static_cast<std::size_t>(t)];
      q(m, m) = cum_alpha[static_cast<std::size_t>(t)] + cum_beta[static_cast<std::size_t>(t)];
      q(m, K) = cum_gamma[static_cast<std::size_t>(t)];
    }
    q(K, K) = 1.0;
    return q;
  }
};

// Linear schedules: the cumulative mask probability rises linearly to
// gamma_final and per-step retention decays linearly to zero, which leaves a
// live uniform-resample channel (beta_t > 0) at intermediate steps. The
// cumulative identities cum_alpha = prod(alpha), cum_gamma = 1 - prod(1 -
// gamma) and cum_beta = (1 - cum_alpha - cum_gamma)/K hold exactly because
// they telescope step by step.
inline DiffusionSchedule build_schedule(int T, int K, double gamma_final = 1.0) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (K < 2) throw std::invalid_argument("schedule needs K >= 2");
  if (!(gamma_final > 0.0) || gamma_final > 1.0)
    throw std::invalid_argument("gamma_final must lie in (0, 1]");
  DiffusionSchedule s;
  s.T = T;
  s.K = K;
  s.gamma_final = gamma_final;
  s.alpha.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.beta = s.alpha;
  s.gamma = s.alpha;
  s.cum_alpha = s.alpha;
  s.cum_beta = s.alpha;
  s.cum_gamma = s.alpha;
  s.cum_alpha[0] = 1.0;

  double prev_keep = 1.0;  // 1 - cumulative gamma so far
  for (int t = 1; t <= T; ++t) {
    double cg = gamma_final * t / T;
    double keep = 1.0 - cg;
    double g = prev_keep <= 0.0 ? 1.0 : 1.0 - keep / prev_keep;
    double a = 1.0 - static_cast<double>(t) / T;
    double b = (1.0 - a - g) / K;
    auto in_unit = [](double x) { return x >= -1e-12 && x <= 1.0 + 1e-12; };
    if (!in_unit(a) || !in_unit(b) || !in_unit(g))
      throw std::invalid_argument("transition probability outside [0,1] at t=" +
                                  std::to_string(t));
    s.alpha[static_cast<std::size_t>(t)] = std::clamp(a, 0.0, 1.0);
    s.beta[static_cast<std::size_t>(t)] = std::clamp(b, 0.0, 1.0);
    s.gamma[static_cast<std::size_t>(t)] = std::clamp(g, 0.0, 1.0);
    s.cum_alpha[static_cast<std::size_t>(t)] =
        s.cum_alpha[static_cast<std::size_t>(t - 1)] * s.alpha[static_cast<std::size_t>(t)];
    prev_keep *= 1.0 - s.gamma[static_cast<std::size_t>(t)];
    s.cum_gamma[static_cast<std::size_t>(t)] = 1.0 - prev_keep;
    s.cum_beta[static_cast<std::size_t>(t)] =
        (1.0 - s.cum_alpha[static_cast<std::size_t>(t)] - s.cum_gamma[static_cast<std::size_t>(t)]) / K;
    if (s.cum_beta[static_cast<std::size_t>(t)] < -1e-12)
      throw std::invalid_argument("cumulative uniform mass negative at t=" + std::to_string(t));
    s.cum_beta[static_cast<std::size_t>(t)] = std::max(s.cum_beta[static_cast<std::size_t>(t)], 0.0);
  }
  if (s.cum_gamma[static_cast<std::size_t>(T)] < 1.0 - 1e-6)
    throw std::invalid_argument("schedule does not reach full masking at t=T (cumulative gamma " +
                                std::to_string(s.cum_gamma[static_cast<std::size_t>(T)]) + ")");
  return s;
}

inline json schedule_to_json(const DiffusionSchedule& s) {
  return {{"T", s.T}, {"K", s.K}, {"gamma_final", s.gamma_final}};
}

inline DiffusionSchedule schedule_from_json(const json& j) {
  return build_schedule(j.at("T").get<int>(), j.at("K").get<int>(),
                        j.at("gamma_final").get<double>());
}

inline void check_real_tokens(const std::vector<int>& k, int K, const char* what) {
  if (k.empty()) throw std::invalid_argument(std::string(what) + ": empty token sequence");
  for (int v : k)
    if (v < 0 || v >= K)
      throw std::invalid_argument(std::string(what) + ": token " + std::to_string(v) +
                                  " outside [0," + std::to_string(K) + ")");
}

// Forward corruption of a clean sequence straight to step t, using the
// cumulative marginal.
inline std::vector<int> q_sample(const std::vector<int>& k0, int t, const DiffusionSchedule& s,
                                 Rng& rng) {
  s.check_t(t);
  check_real_tokens(k0, s.K, "q_sample");
  double ca = s.cum_alpha[static_cast<std::size_t>(t)];
  double cb = s.cum_beta[static_cast<std::size_t>(t)];
  std::vector<int> out(k0.size());
  for (std::size_t i = 0; i < k0.size(); ++i) {
    double u = rng.uniform();
    if (u < ca)
      out[i] = k0[i];
    else if (u < ca + s.K * cb)
      out[i] = static_cast<int>(rng.uniform_int(0, s.K - 1));
    else
      out[i] = s.mask_token();
  }
  return out;
}

// Exact Bayes posterior q(k_{t-1} = m | k_t, k_0) over the K+1 states.
// At t=1 the posterior is the point mass on k_0 by definition.
inline Eigen::VectorXd q_posterior(int kt, int k0, int t, const DiffusionSchedule& s) {
  s.check_t(t);
  if (k0 < 0 || k0 >= s.K) throw std::invalid_argument("q_posterior: k0 must be a real token");
  if (kt < 0 || kt > s.K) throw std::invalid_argument("q_posterior: k_t out of range");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(s.K + 1);
  if (t == 1) {
    p(k0) = 1.0;
    return p;
  }
  std::size_t ti = static_cast<std::size_t>(t);
  double ca_prev = s.cum_alpha[ti - 1], cb_prev = s.cum_beta[ti - 1], cg_prev = s.cum_gamma[ti - 1];
  for (int m = 0; m < s.K; ++m) {
    double step = kt == s.mask_token() ? s.gamma[ti] : (kt == m ? s.alpha[ti] + s.beta[ti] : s.beta[ti]);
    double prior = m == k0 ? ca_prev + cb_prev : cb_prev;
    p(m) = step * prior;
  }
  if (kt == s.mask_token()) p(s.K) = cg_prev;
  double z = p.sum();
  if (!(z > 0.0))
    throw numeric_error("q_posterior: zero normalizer at t=" + std::to_string(t) +
                        ", k_t=" + std::to_string(kt) + ", k0=" + std::to_string(k0) +
                        " (k_t unreachable under this schedule)");
  return p / z;
}

// Rows are candidate clean tokens: M(c, m) = q(k_{t-1} = m | k_t, c).
// Multiplying predicted clean-token probabilities by M marginalizes the
// posterior over the prediction.
inline Eigen::MatrixXd posterior_mix_matrix(int kt, int t, const DiffusionSchedule& s) {
  Eigen::MatrixXd m(s.K, s.K + 1);
  for (int c = 0; c < s.K; ++c) m.row(c) = q_posterior(kt, c, t, s).transpose();
  return m;
}

template <typename S>
struct VlbTerms {
  typename ag::Graph<S>::Var total;
  typename ag::Graph<S>::Var main;  // KL for t>1, NLL at t=1
  typename ag::Graph<S>::Var aux;   // cross entropy of the clean tokens
};

// Variational bound for one sequence at one timestep, differentiable w.r.t.
// the logits. For t>1 the model distribution over k_{t-1} is the posterior
// marginalized over predicted clean tokens; the loss is the mean KL from
// the true posterior. Entries where the target is zero are excluded exactly
// (the +1 shift below only touches entries whose weight is zero).
template <typename S>
VlbTerms<S> vlb_loss(ag::Graph<S>& g, typename ag::Graph<S>::Var logits,
                     const std::vector<int>& k0, const std::vector<int>& kt, int t,
                     const DiffusionSchedule& s, double aux_weight) {
  s.check_t(t);
  check_real_tokens(k0, s.K, "vlb_loss");
  // shape copied out: value() references go stale as ops extend the graph
  Eigen::Index n = g.value(logits).rows();
  if (n != static_cast<Eigen::Index>(k0.size()) || g.value(logits).cols() != s.K)
    throw std::invalid_argument("vlb_loss: logits must be [len x K]");
  if (kt.size() != k0.size()) throw std::invalid_argument("vlb_loss: k_t/k_0 length mismatch");
  for (int v : kt)
    if (v < 0 || v > s.K) throw std::invalid_argument("vlb_loss: k_t token out of range");

  auto logp = g.log_softmax(logits);
  auto nll = g.scale(g.mean_all(g.pick(logp, k0)), S(-1));

  typename ag::Graph<S>::Var main;
  if (t == 1) {
    main = nll;
  } else {
    // Marginalizing the posterior over predicted clean tokens looks like a
    // [K x K+1] mix per row, but it collapses to O(K): the step likelihood
    // u(j) = q(k_t | k_{t-1}=j) takes at most two distinct values over real
    // tokens, and the t-1 prior is ca*d(j,c) + cb + cg*d(j,MASK), so with
    // Z(c) = ca*u(c) + cb*sum_j u(j) + cg*u(MASK) and S = sum_c p0(c)/Z(c):
    //   pred(j<K)  = u(j) * (ca * p0(j)/Z(j) + cb * S)
    //   pred(MASK) = u(MASK) * cg * S
    std::size_t ti = static_cast<std::size_t>(t);
    const double at = s.alpha[ti], bt = s.beta[ti], gt = s.gamma[ti];
    const double ca = s.cum_alpha[ti - 1], cb = s.cum_beta[ti - 1], cg = s.cum_gamma[ti - 1];
    Mat<S> U(n, s.K), invZ(n, s.K), mask_coef(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      int v = kt[static_cast<std::size_t>(i)];
      bool masked = v == s.mask_token();
      double u_diag = masked ? gt : at + bt;
      double u_off = masked ? gt : bt;
      double u_mask = masked ? 1.0 : 0.0;
      double sum_u = masked ? s.K * gt : at + s.K * bt;
      double base = cb * sum_u + cg * u_mask;
      double z_off = ca * u_off + base, z_diag = ca * u_diag + base;
      if (!(z_off > 0.0) || !(z_diag > 0.0))
        throw numeric_error("vlb_loss: k_t=" + std::to_string(v) + " unreachable at t=" +
                            std::to_string(t));
      U.row(i).setConstant(static_cast<S>(u_off));
      invZ.row(i).setConstant(static_cast<S>(1.0 / z_off));
      if (!masked) {
        U(i, v) = static_cast<S>(u_diag);
        invZ(i, v) = static_cast<S>(1.0 / z_diag);
      }
      mask_coef(i, 0) = static_cast<S>(cg * u_mask);
    }
    auto p0 = g.softmax(logits);
    auto w = g.mul(p0, g.constant(std::move(invZ)));
    auto s1 = g.matmul(w, g.constant(Mat<S>::Ones(s.K, 1)));
    auto uc = g.constant(std::move(U));
    auto spread = g.matmul(s1, g.constant(Mat<S>::Ones(1, s.K)));
    auto pred_real = g.add(g.scale(g.mul(w, uc), static_cast<S>(ca)),
                           g.scale(g.mul(spread, uc), static_cast<S>(cb)));
    auto pred_mask = g.mul(s1, g.constant(std::move(mask_coef)));
    auto pred = g.concat_cols({pred_real, pred_mask});

    Mat<S> target(n, s.K + 1);
    Mat<S> zero_mask(n, s.K + 1);
    double entropy_sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd q = q_posterior(kt[static_cast<std::size_t>(i)],
                                      k0[static_cast<std::size_t>(i)], t, s);
      for (int m = 0; m <= s.K; ++m) {
        target(i, m) = static_cast<S>(q(m));
        zero_mask(i, m) = q(m) == 0.0 ? S(1) : S(0);
        if (q(m) > 0.0) entropy_sum += q(m) * std::log(q(m));
      }
    }
    auto log_pred = g.log(g.add(pred, g.constant(zero_mask)));
    auto cross = g.sum_weighted(log_pred, target);
    auto h = g.constant_scalar(static_cast<S>(entropy_sum));
    main = g.scale(g.sub(h, cross), S(1) / static_cast<S>(n));
  }
  VlbTerms<S> out;
  out.main = main;
  out.aux = nll;
  out.total = g.add(main, g.scale(nll, static_cast<S>(aux_weight)));
  return out;
}

// One reverse step: p(k_{t-1} | k_t) assembled from predicted clean-token
// logits. temperature scales the logits; 0 means take the argmax of the
// assembled distribution (ties to the smallest index). The t=1 step samples
// the predicted clean tokens directly, so its output never contains MASK.
inline std::vector<int> p_sample_step(const MatD& logits, const std::vector<int>& kt, int t,
                                      const DiffusionSchedule& s, Rng& rng, double temperature) {
  s.check_t(t);
  if (temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
  if (logits.rows() != static_cast<Eigen::Index>(kt.size()) || logits.cols() != s.K)
    throw std::invalid_argument("p_sample_step: logits must be [len x K]");
  for (int v : kt)
    if (v < 0 || v > s.K) throw std::invalid_argument("p_sample_step: token out of range");

  std::size_t ti = static_cast<std::size_t>(t);
  const double at = s.alpha[ti], bt = s.beta[ti], gt = s.gamma[ti];
  const double ca = t > 1 ? s.cum_alpha[ti - 1] : 0.0;
  const double cb = t > 1 ? s.cum_beta[ti - 1] : 0.0;
  const double cg = t > 1 ? s.cum_gamma[ti - 1] : 0.0;

  std::vector<int> out(kt.size());
  for (std::size_t i = 0; i < kt.size(); ++i) {
    Eigen::RowVectorXd row = logits.row(static_cast<Eigen::Index>(i));
    if (temperature > 0.0) row /= temperature;
    row.array() -= row.maxCoeff();
    Eigen::RowVectorXd p0 = row.array().exp();
    p0 /= p0.sum();

    Eigen::RowVectorXd dist;
    if (t == 1) {
      dist = p0;  // over the K real tokens
    } else {
      // same O(K) collapse of the candidate mixture as in vlb_loss
      bool masked = kt[i] == s.mask_token();
      double u_diag = masked ? gt : at + bt;
      double u_off = masked ? gt : bt;
      double u_mask = masked ? 1.0 : 0.0;
      double sum_u = masked ? s.K * gt : at + s.K * bt;
      double base = cb * sum_u + cg * u_mask;
      double z_off = ca * u_off + base, z_diag = ca * u_diag + base;
      if (!(z_off > 0.0) || !(z_diag > 0.0))
        throw numeric_error("p_sample_step: k_t=" + std::to_string(kt[i]) +
                            " unreachable at t=" + std::to_string(t));
      double p_diag = masked ? 0.0 : p0(kt[i]);
      double s1 = (1.0 - p_diag) / z_off + p_diag / z_diag;
      dist.resize(s.K + 1);
      dist.head(s.K).array() = u_off * (ca / z_off * p0.array() + cb * s1);
      if (!masked)
        dist(kt[i]) = u_diag * (ca * p_diag / z_diag + cb * s1);
      dist(s.K) = u_mask * cg * s1;
    }

    if (temperature == 0.0) {
      Eigen::Index best = 0;
      dist.maxCoeff(&best);
      out[i] = static_cast<int>(best);
    } else {
      double u = rng.uniform() * dist.sum();
      double acc = 0.0;
      int pick = static_cast<int>(dist.size()) - 1;
      for (Eigen::Index m = 0; m < dist.size(); ++m) {
        acc += dist(m);
        if (u < acc) {
          pick = static_cast<int>(m);
          break;
        }
      }
      out[i] = pick;
    }
  }
  return out;
}

// Predicts clean-token logits [len x K] for the current noisy sequence.
using PredictorFn = std::function<MatD(const std::vector<int>& state, int t)>;

struct ReverseTrace {
  std::vector<int> t;                 // T..1
  std::vector<double> mask_fraction;  // after each step
};

// Full reverse chain from all-MASK. Deterministic given the rng state.
inline std::vector<int> reverse_chain(const PredictorFn& predict, int len,
                                      const DiffusionSchedule& s, Rng& rng, double temperature,
                                      ReverseTrace* trace = nullptr) {
  if (len < 1) throw std::invalid_argument("reverse_chain: length must be >= 1");
  std::vector<int> state(static_cast<std::size_t>(len), s.mask_token());
  for (int t = s.T; t >= 1; --t) {
    MatD logits = predict(state, t);
    state = p_sample_step(logits, state, t, s, rng, temperature);
    if (trace) {
      int masked = 0;
      for (int v : state) masked += v == s.mask_token();
      trace->t.push_back(t);
      trace->mask_fraction.push_back(static_cast<double>(masked) / len);
    }
  }
  for (int v : state)
    if (v == s.mask_token()) throw numeric_error("reverse chain left MASK in final sequence");
  return state;
}

}  // namespace glosmo
