#pragma once

// Parameter storage, Adam, and the handful of layer wrappers used by the
// models. Layers are plain structs of parameter ids; a Binder turns a
// parameter into a graph input on first use and collects its gradient after
// backward.

#include <glosmo/autograd.hpp>
#include <glosmo/rng.hpp>
#include <glosmo/serialize.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace glosmo::nn {

using ag::Graph;

template <typename S>
class ParamStore {
 public:
  int add(const std::string& name, Mat<S> init) {
    Entry e;
    e.name = name;
    e.m = Mat<S>::Zero(init.rows(), init.cols());
    e.v = e.m;
    e.value = std::move(init);
    entries_.push_back(std::move(e));
    return static_cast<int>(entries_.size()) - 1;
  }

  int size() const { return static_cast<int>(entries_.size()); }
  Mat<S>& value(int id) { return entries_.at(id).value; }
  const Mat<S>& value(int id) const { return entries_.at(id).value; }
  const std::string& name(int id) const { return entries_.at(id).name; }

  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (entries_[i].name == name) return i;
    return -1;
  }

  // Used when a codebook row is re-seeded: its optimizer history is stale.
  void reset_optimizer_row(int id, int row) {
    entries_.at(id).m.row(row).setZero();
    entries_.at(id).v.row(row).setZero();
  }

  void save(ArrayStore& store) const {
    for (const Entry& e : entries_) store.put(e.name, e.value);
  }

  void load(const ArrayStore& store) {
    for (Entry& e : entries_) {
      Mat<S> m;
      if constexpr (std::is_same_v<S, float>)
        m = store.get_f32(e.name);
      else
        m = store.get_f64(e.name);
      if (m.rows() != e.value.rows() || m.cols() != e.value.cols())
        throw corruption_error("parameter " + e.name + " has unexpected shape");
      e.value = std::move(m);
    }
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

  template <typename Fn>
  void adam_step(Fn&& grad_of, S lr, S beta1, S beta2, S eps, long step) {
    S c1 = S(1) - std::pow(beta1, static_cast<S>(step));
    S c2 = S(1) - std::pow(beta2, static_cast<S>(step));
    for (int i = 0; i < size(); ++i) {
      const Mat<S>* g = grad_of(i);
      if (!g || g->size() == 0) continue;
      Entry& e = entries_[i];
      e.m = beta1 * e.m + (S(1) - beta1) * (*g);
      e.v = beta2 * e.v + (S(1) - beta2) * g->cwiseProduct(*g);
      Mat<S> mhat = e.m / c1;
      Mat<S> vhat = e.v / c2;
      e.value -= lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps).matrix());
    }
  }

 private:
  struct Entry {
    std::string name;
    Mat<S> value;
    Mat<S> m, v;
  };
  std::vector<Entry> entries_;
};

template <typename S>
struct Grads {
  std::vector<Mat<S>> by_id;

  void ensure(const ParamStore<S>& store) { by_id.resize(static_cast<std::size_t>(store.size())); }

  void accumulate(int id, const Mat<S>& g) {
    Mat<S>& slot = by_id.at(static_cast<std::size_t>(id));
    if (slot.size() == 0)
      slot = g;
    else
      slot += g;
  }

  void add(const Grads& other) {
    if (by_id.size() < other.by_id.size()) by_id.resize(other.by_id.size());
    for (std::size_t i = 0; i < other.by_id.size(); ++i)
      if (other.by_id[i].size() != 0) {
        if (by_id[i].size() == 0)
          by_id[i] = other.by_id[i];
        else
          by_id[i] += other.by_id[i];
      }
  }

  void clear() {
    for (auto& g : by_id) g.resize(0, 0);
  }

  bool all_finite() const {
    for (const auto& g : by_id)
      if (g.size() != 0 && !g.allFinite()) return false;
    return true;
  }
};

// Per-graph view of a ParamStore. Each parameter becomes a graph input the
// first time it is touched, so untouched parameters cost nothing.
template <typename S>
class Binder {
 public:
  Binder(Graph<S>& g, ParamStore<S>& store) : g_(g), store_(store) {
    vars_.resize(static_cast<std::size_t>(store.size()));
  }

  typename Graph<S>::Var use(int id) {
    auto& slot = vars_.at(static_cast<std::size_t>(id));
    if (!slot.valid()) slot = g_.input(store_.value(id), true);
    return slot;
  }

  void collect(Grads<S>& grads) const {
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i].valid()) {
        const Mat<S>& g = g_.grad(vars_[i]);
        if (g.size() != 0) grads.accumulate(static_cast<int>(i), g);
      }
  }

  Graph<S>& graph() { return g_; }
  ParamStore<S>& store() { return store_; }

 private:
  Graph<S>& g_;
  ParamStore<S>& store_;
  std::vector<typename Graph<S>::Var> vars_;
};

template <typename S>
struct AdamConfig {
  S lr = S(2e-4);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

template <typename S>
class Adam {
 public:
  explicit Adam(AdamConfig<S> cfg) : cfg_(cfg) {}

  void step(ParamStore<S>& store, const Grads<S>& grads) {
    ++steps_;
    store.adam_step(
        [&](int id) -> const Mat<S>* {
          std::size_t i = static_cast<std::size_t>(id);
          return i < grads.by_id.size() ? &grads.by_id[i] : nullptr;
        },
        cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps, steps_);
  }

  long steps() const { return steps_; }

 private:
  AdamConfig<S> cfg_;
  long steps_ = 0;
};

template <typename S>
Mat<S> xavier_init(Rng& rng, Eigen::Index rows, Eigen::Index cols, double fan_in,
                   double fan_out) {
  double s = std::sqrt(6.0 / (fan_in + fan_out));
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<S>(rng.uniform(-s, s));
  return m;
}

template <typename S>
struct Linear {
  int w = -1;
  int b = -1;

  static Linear create(ParamStore<S>& store, Rng& rng, const std::string& name, int in, int out,
                       bool bias = true) {
    Linear l;
    l.w = store.add(name + ".w", xavier_init<S>(rng, in, out, in, out));
    if (bias) l.b = store.add(name + ".b", Mat<S>::Zero(1, out));
    return l;
  }

  // All-zero weights; used for modulation heads that must start as identity.
  static Linear create_zero(ParamStore<S>& store, const std::string& name, int in, int out,
                            bool bias = true) {
    Linear l;
    l.w = store.add(name + ".w", Mat<S>::Zero(in, out));
    if (bias) l.b = store.add(name + ".b", Mat<S>::Zero(1, out));
    return l;
  }

  typename Graph<S>::Var apply(Binder<S>& ctx, typename Graph<S>::Var x) const {
    auto y = ctx.graph().matmul(x, ctx.use(w));
    if (b >= 0) y = ctx.graph().add_rowvec(y, ctx.use(b));
    return y;
  }
};

template <typename S>
struct Conv1dLayer {
  int w = -1;
  int b = -1;
  int kernel = 1, stride = 1, pad = 0;

  static Conv1dLayer create(ParamStore<S>& store, Rng& rng, const std::string& name, int cin,
                            int cout, int kernel, int stride, int pad) {
    Conv1dLayer c;
    c.kernel = kernel;
    c.stride = stride;
    c.pad = pad;
    c.w = store.add(name + ".w",
                    xavier_init<S>(rng, static_cast<Eigen::Index>(kernel) * cin, cout,
                                   static_cast<double>(kernel) * cin, cout));
    c.b = store.add(name + ".b", Mat<S>::Zero(1, cout));
    return c;
  }

  typename Graph<S>::Var apply(Binder<S>& ctx, typename Graph<S>::Var x) const {
    return ctx.graph().conv1d(x, ctx.use(w), ctx.use(b), kernel, stride, pad);
  }
};

// Multi-head attention without positional encodings. Query and key/value
// streams may have different widths; output width equals the query width.
template <typename S>
struct Mha {
  Linear<S> q, k, v, o;
  int heads = 1;
  int dim = 0;

  static Mha create(ParamStore<S>& store, Rng& rng, const std::string& name, int q_dim, int kv_dim,
                    int dim, int heads) {
    if (dim % heads != 0) throw std::invalid_argument("attention width must divide by head count");
    Mha a;
    a.heads = heads;
    a.dim = dim;
    a.q = Linear<S>::create(store, rng, name + ".q", q_dim, dim);
    a.k = Linear<S>::create(store, rng, name + ".k", kv_dim, dim);
    a.v = Linear<S>::create(store, rng, name + ".v", kv_dim, dim);
    a.o = Linear<S>::create(store, rng, name + ".o", dim, q_dim);
    return a;
  }

  typename Graph<S>::Var apply(Binder<S>& ctx, typename Graph<S>::Var q_in,
                               typename Graph<S>::Var kv_in) const {
    Graph<S>& g = ctx.graph();
    auto Q = q.apply(ctx, q_in);
    auto K = k.apply(ctx, kv_in);
    auto V = v.apply(ctx, kv_in);
    int dh = dim / heads;
    S inv_sqrt = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
    std::vector<typename Graph<S>::Var> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      auto Qh = g.slice_cols(Q, h * dh, dh);
      auto Kh = g.slice_cols(K, h * dh, dh);
      auto Vh = g.slice_cols(V, h * dh, dh);
      auto attn = g.softmax(g.scale(g.matmul_nt(Qh, Kh), inv_sqrt));
      head_outs.push_back(g.matmul(attn, Vh));
    }
    auto cat = heads == 1 ? head_outs[0] : g.concat_cols(head_outs);
    return o.apply(ctx, cat);
  }
};

// Classic transformer timestep features: sin/cos at geometrically spaced
// frequencies, computed in double then cast.
template <typename S>
Mat<S> sinusoidal_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("embedding dim must be even");
  int half = dim / 2;
  Mat<S> out(1, dim);
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    out(0, i) = static_cast<S>(std::sin(t * freq));
    out(0, half + i) = static_cast<S>(std::cos(t * freq));
  }
  return out;
}

}  // namespace glosmo::nn
