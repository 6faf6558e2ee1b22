#pragma once

// Dense double-precision building blocks: vectors, parameter matrices, a
// reverse-mode gradient tape over vector ops, small MLPs, softmax, scaled
// dot-product attention, and a central-difference gradient checker.
// Everything trainable in this project is expressed through the tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace affect {

using Vec = std::vector<double>;

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

inline double dot(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "dot: dim mismatch " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const Vec& a) { return std::sqrt(dot(a, a)); }

// Deterministic RNG (splitmix64). The uniform/normal transforms are
// hand-rolled so results do not depend on libstdc++'s distribution
// implementations; the bit stream is identical on any conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, cosine branch only (two draws per sample; simple and portable)
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  std::uint64_t integer(std::uint64_t n) {
    require(n > 0, "Rng::integer: n must be positive");
    return next_u64() % n;
  }

  // Independent derived stream, for per-episode rngs.
  Rng spawn(std::uint64_t stream) const {
    Rng r(state_ ^ (0xA24BAED4963EE407ull + stream * 0x9FB21C651E98DF25ull));
    r.next_u64();
    return r;
  }

 private:
  std::uint64_t state_;
};

// A named trainable array. Matrices are row-major rows x cols; plain vectors
// use cols == 1.
struct Param {
  std::string name;
  std::size_t rows = 0, cols = 1;
  Vec value;
  Vec grad;

  Param() = default;
  Param(std::string n, std::size_t r, std::size_t c)
      : name(std::move(n)), rows(r), cols(c), value(r * c, 0.0), grad(r * c, 0.0) {}

  std::size_t size() const { return rows * cols; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

inline void init_uniform(Param& p, double r, Rng& rng) {
  for (double& x : p.value) x = rng.uniform(-r, r);
}

inline void init_xavier(Param& p, Rng& rng) {
  double r = std::sqrt(6.0 / double(p.rows + p.cols));
  init_uniform(p, r, rng);
}

// Reverse-mode tape over vector-valued nodes. Single-writer per episode;
// nodes are created in forward order and replayed in reverse on backward().
class Tape {
 public:
  using Id = int;

  Id constant(Vec v) { return push(std::move(v), nullptr); }

  Id constant(double x) { return push(Vec{x}, nullptr); }

  // Leaf node for a trainable parameter; backward accumulates into p.grad.
  Id leaf(Param& p) {
    Param* pp = &p;
    Id id = push(p.value, nullptr);
    nodes_[id].back = [this, id, pp]() {
      const Vec& g = nodes_[id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) pp->grad[i] += g[i];
    };
    return id;
  }

  const Vec& value(Id id) const { return nodes_[id].val; }
  const Vec& grad(Id id) const { return nodes_[id].grad; }
  std::size_t dim(Id id) const { return nodes_[id].val.size(); }

  // y = W x, where w holds a rows x cols matrix (row-major).
  Id matvec(Id w, std::size_t rows, std::size_t cols, Id x) {
    require(dim(w) == rows * cols, "matvec: weight size mismatch");
    require(dim(x) == cols, "matvec: input dim " + std::to_string(dim(x)) +
                                " != cols " + std::to_string(cols));
    Vec y(rows, 0.0);
    const Vec& W = value(w);
    const Vec& X = value(x);
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      const double* row = W.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) s += row[j] * X[j];
      y[i] = s;
    }
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, w, x, rows, cols]() {
      const Vec& g = nodes_[id].grad;
      const Vec& W = nodes_[w].val;
      const Vec& X = nodes_[x].val;
      Vec& gw = nodes_[w].grad;
      Vec& gx = nodes_[x].grad;
      for (std::size_t i = 0; i < rows; ++i) {
        double gi = g[i];
        if (gi == 0.0) continue;
        for (std::size_t j = 0; j < cols; ++j) {
          gw[i * cols + j] += gi * X[j];
          gx[j] += gi * W[i * cols + j];
        }
      }
    };
    return id;
  }

  Id add(Id a, Id b) {
    require(dim(a) == dim(b), "add: dim mismatch");
    Vec y = value(a);
    const Vec& B = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += B[i];
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a, b]() {
      const Vec& g = nodes_[id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        nodes_[a].grad[i] += g[i];
        nodes_[b].grad[i] += g[i];
      }
    };
    return id;
  }

  Id sub(Id a, Id b) {
    require(dim(a) == dim(b), "sub: dim mismatch");
    Vec y = value(a);
    const Vec& B = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= B[i];
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a, b]() {
      const Vec& g = nodes_[id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        nodes_[a].grad[i] += g[i];
        nodes_[b].grad[i] -= g[i];
      }
    };
    return id;
  }

  // Elementwise (Hadamard) product.
  Id mul(Id a, Id b) {
    require(dim(a) == dim(b), "mul: dim mismatch");
    Vec y = value(a);
    const Vec& B = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= B[i];
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a, b]() {
      const Vec& g = nodes_[id].grad;
      const Vec& A = nodes_[a].val;
      const Vec& B = nodes_[b].val;
      for (std::size_t i = 0; i < g.size(); ++i) {
        nodes_[a].grad[i] += g[i] * B[i];
        nodes_[b].grad[i] += g[i] * A[i];
      }
    };
    return id;
  }

  Id scale(Id a, double c) {
    Vec y = value(a);
    for (double& x : y) x *= c;
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a, c]() {
      const Vec& g = nodes_[id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) nodes_[a].grad[i] += c * g[i];
    };
    return id;
  }

  Id concat(Id a, Id b) {
    Vec y = value(a);
    const Vec& B = value(b);
    y.insert(y.end(), B.begin(), B.end());
    std::size_t na = dim(a);
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a, b, na]() {
      const Vec& g = nodes_[id].grad;
      for (std::size_t i = 0; i < na; ++i) nodes_[a].grad[i] += g[i];
      for (std::size_t i = na; i < g.size(); ++i) nodes_[b].grad[i - na] += g[i];
    };
    return id;
  }

  Id sigmoid(Id a) {
    Vec y = value(a);
    for (double& x : y) x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                     : std::exp(x) / (1.0 + std::exp(x));
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a]() {
      const Vec& g = nodes_[id].grad;
      const Vec& Y = nodes_[id].val;
      for (std::size_t i = 0; i < g.size(); ++i)
        nodes_[a].grad[i] += g[i] * Y[i] * (1.0 - Y[i]);
    };
    return id;
  }

  Id tanh_(Id a) {
    Vec y = value(a);
    for (double& x : y) x = std::tanh(x);
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a]() {
      const Vec& g = nodes_[id].grad;
      const Vec& Y = nodes_[id].val;
      for (std::size_t i = 0; i < g.size(); ++i)
        nodes_[a].grad[i] += g[i] * (1.0 - Y[i] * Y[i]);
    };
    return id;
  }

  // Max-shifted softmax; sums to 1 within rounding regardless of input scale.
  Id softmax(Id a) {
    require(dim(a) > 0, "softmax: empty input");
    const Vec& Z = value(a);
    require(all_finite(Z), "softmax: non-finite input");
    double m = *std::max_element(Z.begin(), Z.end());
    Vec y(Z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i) {
      y[i] = std::exp(Z[i] - m);
      s += y[i];
    }
    for (double& x : y) x /= s;
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a]() {
      const Vec& g = nodes_[id].grad;
      const Vec& Y = nodes_[id].val;
      double gy = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * Y[i];
      for (std::size_t i = 0; i < g.size(); ++i)
        nodes_[a].grad[i] += Y[i] * (g[i] - gy);
    };
    return id;
  }

  Id log_softmax(Id a) {
    require(dim(a) > 0, "log_softmax: empty input");
    const Vec& Z = value(a);
    double m = *std::max_element(Z.begin(), Z.end());
    double s = 0.0;
    for (double z : Z) s += std::exp(z - m);
    double lse = m + std::log(s);
    Vec y(Z.size());
    for (std::size_t i = 0; i < Z.size(); ++i) y[i] = Z[i] - lse;
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a]() {
      const Vec& g = nodes_[id].grad;
      const Vec& Y = nodes_[id].val;
      double gs = 0.0;
      for (double gi : g) gs += gi;
      for (std::size_t i = 0; i < g.size(); ++i)
        nodes_[a].grad[i] += g[i] - std::exp(Y[i]) * gs;
    };
    return id;
  }

  // Scalar dot product of two vector nodes.
  Id dot_(Id a, Id b) {
    require(dim(a) == dim(b), "dot_: dim mismatch");
    double s = dot(value(a), value(b));
    Id id = push(Vec{s}, nullptr);
    nodes_[id].back = [this, id, a, b]() {
      double g = nodes_[id].grad[0];
      const Vec& A = nodes_[a].val;
      const Vec& B = nodes_[b].val;
      for (std::size_t i = 0; i < A.size(); ++i) {
        nodes_[a].grad[i] += g * B[i];
        nodes_[b].grad[i] += g * A[i];
      }
    };
    return id;
  }

  Id sum(Id a) {
    double s = std::accumulate(value(a).begin(), value(a).end(), 0.0);
    Id id = push(Vec{s}, nullptr);
    nodes_[id].back = [this, id, a]() {
      double g = nodes_[id].grad[0];
      for (double& x : nodes_[a].grad) x += g;
    };
    return id;
  }

  Id mean(Id a) { return scale(sum(a), 1.0 / double(dim(a))); }

  // Single entry of a vector node, as a scalar node.
  Id pick(Id a, std::size_t i) {
    require(i < dim(a), "pick: index out of range");
    Id id = push(Vec{value(a)[i]}, nullptr);
    nodes_[id].back = [this, id, a, i]() { nodes_[a].grad[i] += nodes_[id].grad[0]; };
    return id;
  }

  Id gather(Id a, std::vector<std::size_t> idx) {
    Vec y(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      require(idx[k] < dim(a), "gather: index out of range");
      y[k] = value(a)[idx[k]];
    }
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a, idx = std::move(idx)]() {
      const Vec& g = nodes_[id].grad;
      for (std::size_t k = 0; k < idx.size(); ++k) nodes_[a].grad[idx[k]] += g[k];
    };
    return id;
  }

  // Vector node from scalar nodes.
  Id stack(const std::vector<Id>& scalars) {
    Vec y(scalars.size());
    for (std::size_t k = 0; k < scalars.size(); ++k) {
      require(dim(scalars[k]) == 1, "stack: non-scalar element");
      y[k] = value(scalars[k])[0];
    }
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, ids = scalars]() {
      const Vec& g = nodes_[id].grad;
      for (std::size_t k = 0; k < ids.size(); ++k) nodes_[ids[k]].grad[0] += g[k];
    };
    return id;
  }

  // out = sum_j alpha[j] * items[j]
  Id weighted_sum(Id alpha, const std::vector<Id>& items) {
    require(dim(alpha) == items.size(), "weighted_sum: weight/item count mismatch");
    require(!items.empty(), "weighted_sum: empty items");
    Vec y(dim(items[0]), 0.0);
    const Vec& A = value(alpha);
    for (std::size_t j = 0; j < items.size(); ++j) {
      const Vec& V = value(items[j]);
      require(V.size() == y.size(), "weighted_sum: item dim mismatch");
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += A[j] * V[i];
    }
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, alpha, ids = items]() {
      const Vec& g = nodes_[id].grad;
      const Vec& A = nodes_[alpha].val;
      for (std::size_t j = 0; j < ids.size(); ++j) {
        const Vec& V = nodes_[ids[j]].val;
        double ga = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga += g[i] * V[i];
          nodes_[ids[j]].grad[i] += A[j] * g[i];
        }
        nodes_[alpha].grad[j] += ga;
      }
    };
    return id;
  }

  Id exp_(Id a) {
    Vec y = value(a);
    for (double& x : y) x = std::exp(x);
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a]() {
      const Vec& g = nodes_[id].grad;
      const Vec& Y = nodes_[id].val;
      for (std::size_t i = 0; i < g.size(); ++i) nodes_[a].grad[i] += g[i] * Y[i];
    };
    return id;
  }

  Id neg(Id a) { return scale(a, -1.0); }

  // Elementwise clip to constant bounds; gradient 1 strictly inside, 0 outside.
  Id clip(Id a, double lo, double hi) {
    Vec y = value(a);
    for (double& x : y) x = std::clamp(x, lo, hi);
    Id id = push(std::move(y), nullptr);
    nodes_[id].back = [this, id, a, lo, hi]() {
      const Vec& g = nodes_[id].grad;
      const Vec& A = nodes_[a].val;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (A[i] > lo && A[i] < hi) nodes_[a].grad[i] += g[i];
    };
    return id;
  }

  // Scalar min/max; gradient flows to the selected branch (ties: first arg).
  Id min2(Id a, Id b) { return select2(a, b, true); }
  Id max2(Id a, Id b) { return select2(a, b, false); }

  // Joint log-mass of independent Bernoullis given logits and 0/1 decisions.
  Id bernoulli_logprob(Id logits, const std::vector<std::uint8_t>& decisions) {
    require(dim(logits) == decisions.size(), "bernoulli_logprob: size mismatch");
    const Vec& Z = value(logits);
    auto softplus = [](double z) {
      return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    };
    double lp = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i)
      lp += (decisions[i] ? Z[i] : 0.0) - softplus(Z[i]);
    Id id = push(Vec{lp}, nullptr);
    nodes_[id].back = [this, id, logits, decisions]() {
      double g = nodes_[id].grad[0];
      const Vec& Z = nodes_[logits].val;
      for (std::size_t i = 0; i < Z.size(); ++i) {
        double p = Z[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-Z[i]))
                               : std::exp(Z[i]) / (1.0 + std::exp(Z[i]));
        nodes_[logits].grad[i] += g * (double(decisions[i]) - p);
      }
    };
    return id;
  }

  // Log-density of a diagonal Gaussian with fixed sigma at a constant action.
  Id gaussian_logprob(Id mean, const Vec& action, double sigma) {
    require(dim(mean) == action.size(), "gaussian_logprob: dim mismatch");
    const Vec& M = value(mean);
    double lp = 0.0;
    double inv2 = 1.0 / (2.0 * sigma * sigma);
    double logz = std::log(sigma) + 0.5 * std::log(6.283185307179586476925287);
    for (std::size_t i = 0; i < M.size(); ++i) {
      double d = action[i] - M[i];
      lp += -d * d * inv2 - logz;
    }
    Id id = push(Vec{lp}, nullptr);
    nodes_[id].back = [this, id, mean, action, sigma]() {
      double g = nodes_[id].grad[0];
      const Vec& M = nodes_[mean].val;
      double invs2 = 1.0 / (sigma * sigma);
      for (std::size_t i = 0; i < M.size(); ++i)
        nodes_[mean].grad[i] += g * (action[i] - M[i]) * invs2;
    };
    return id;
  }

  // Seed the root (must be scalar) and replay the tape in reverse.
  void backward(Id root) {
    require(dim(root) == 1, "backward: root must be scalar");
    require(std::isfinite(value(root)[0]), "backward: non-finite root value");
    nodes_[root].grad[0] = 1.0;
    for (Id id = Id(nodes_.size()) - 1; id >= 0; --id)
      if (nodes_[id].back) nodes_[id].back();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Vec val;
    Vec grad;
    std::function<void()> back;
  };

  Id push(Vec v, std::function<void()> back) {
    Node n;
    n.grad.assign(v.size(), 0.0);
    n.val = std::move(v);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Id(nodes_.size()) - 1;
  }

  Id select2(Id a, Id b, bool take_min) {
    require(dim(a) == 1 && dim(b) == 1, "min2/max2: scalars only");
    double va = value(a)[0], vb = value(b)[0];
    bool pick_a = take_min ? (va <= vb) : (va >= vb);
    Id id = push(Vec{pick_a ? va : vb}, nullptr);
    Id sel = pick_a ? a : b;
    nodes_[id].back = [this, id, sel]() { nodes_[sel].grad[0] += nodes_[id].grad[0]; };
    return id;
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// MLP

struct MLPParams {
  std::vector<Param> weights;  // layer i: out_i x in_i
  std::vector<Param> biases;   // layer i: out_i

  std::size_t input_dim() const { return weights.empty() ? 0 : weights.front().cols; }
  std::size_t output_dim() const { return weights.empty() ? 0 : weights.back().rows; }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& w : weights) out.push_back(&w);
    for (auto& b : biases) out.push_back(&b);
    return out;
  }
};

inline MLPParams make_mlp(const std::string& name, const std::vector<std::size_t>& dims,
                          Rng& rng) {
  require(dims.size() >= 2, "make_mlp: need at least input and output dims");
  MLPParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    p.weights.emplace_back(name + ".w" + std::to_string(l), dims[l + 1], dims[l]);
    p.biases.emplace_back(name + ".b" + std::to_string(l), dims[l + 1], 1);
    init_xavier(p.weights.back(), rng);
  }
  return p;
}

// tanh hidden layers, linear output.
inline Tape::Id mlp_forward(Tape& tape, MLPParams& p, Tape::Id x) {
  require(!p.weights.empty(), "mlp_forward: empty params");
  require(tape.dim(x) == p.input_dim(),
          "mlp_forward: input dim " + std::to_string(tape.dim(x)) + " != expected " +
              std::to_string(p.input_dim()));
  Tape::Id h = x;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    Tape::Id w = tape.leaf(p.weights[l]);
    Tape::Id b = tape.leaf(p.biases[l]);
    h = tape.add(tape.matvec(w, p.weights[l].rows, p.weights[l].cols, h), b);
    if (l + 1 < p.weights.size()) h = tape.tanh_(h);
  }
  return h;
}

inline Vec mlp_forward(MLPParams& p, const Vec& x) {
  Tape tape;
  return tape.value(mlp_forward(tape, p, tape.constant(x)));
}

// Plain (non-tape) softmax, shared by tests and rollout-only paths.
inline Vec softmax(const Vec& z) {
  Tape tape;
  return tape.value(tape.softmax(tape.constant(z)));
}

// Scaled dot-product attention over a list of key/value nodes, parameter-free:
// out = sum_i softmax(q . k_i / sqrt(d))_i v_i.
inline Tape::Id attention(Tape& tape, Tape::Id query, const std::vector<Tape::Id>& keys,
                          const std::vector<Tape::Id>& values) {
  require(!keys.empty(), "attention: empty keys");
  require(keys.size() == values.size(), "attention: key/value count mismatch");
  double inv_sqrt_d = 1.0 / std::sqrt(double(tape.dim(query)));
  std::vector<Tape::Id> scores;
  scores.reserve(keys.size());
  for (Tape::Id k : keys) scores.push_back(tape.scale(tape.dot_(query, k), inv_sqrt_d));
  Tape::Id alpha = tape.softmax(tape.stack(scores));
  return tape.weighted_sum(alpha, values);
}

inline Vec attention(const Vec& query, const std::vector<Vec>& keys,
                     const std::vector<Vec>& values) {
  Tape tape;
  std::vector<Tape::Id> ks, vs;
  for (const Vec& k : keys) ks.push_back(tape.constant(k));
  for (const Vec& v : values) vs.push_back(tape.constant(v));
  return tape.value(attention(tape, tape.constant(query), ks, vs));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct ScalarFn {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
};

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |cdiff| + 1e-12).
inline double finite_diff_check(const ScalarFn& f, const Vec& x, double h) {
  require(h >= 1e-7 && h <= 1e-4, "finite_diff_check: h out of [1e-7, 1e-4]");
  Vec analytic = f.grad(x);
  require(analytic.size() == x.size(), "finite_diff_check: grad size mismatch");
  double worst = 0.0;
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    double fp = f.value(probe);
    probe[i] = x[i] - h;
    double fm = f.value(probe);
    probe[i] = x[i];
    require(std::isfinite(fp) && std::isfinite(fm),
            "finite_diff_check: non-finite function value at probe " + std::to_string(i));
    double cdiff = (fp - fm) / (2.0 * h);
    double err = std::abs(analytic[i] - cdiff) /
                 (std::abs(analytic[i]) + std::abs(cdiff) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

// Flatten/unflatten helpers for checking gradients of parameter collections.
inline Vec flatten(const std::vector<Param*>& ps) {
  Vec out;
  for (const Param* p : ps) out.insert(out.end(), p->value.begin(), p->value.end());
  return out;
}

inline void unflatten(const Vec& flat, const std::vector<Param*>& ps) {
  std::size_t off = 0;
  for (Param* p : ps) {
    std::copy(flat.begin() + off, flat.begin() + off + p->size(), p->value.begin());
    off += p->size();
  }
  require(off == flat.size(), "unflatten: size mismatch");
}

inline Vec flatten_grads(const std::vector<Param*>& ps) {
  Vec out;
  for (const Param* p : ps) out.insert(out.end(), p->grad.begin(), p->grad.end());
  return out;
}

inline void zero_grads(const std::vector<Param*>& ps) {
  for (Param* p : ps) p->zero_grad();
}

// ScalarFn over a parameter collection: `loss` runs a fresh forward+backward
// and returns the scalar; grads are read from the params afterwards.
inline ScalarFn param_scalar_fn(std::vector<Param*> ps, std::function<double()> loss) {
  auto run = [ps, loss](const Vec& flat) {
    unflatten(flat, ps);
    zero_grads(ps);
    return loss();
  };
  ScalarFn fn;
  fn.value = run;
  fn.grad = [ps, run](const Vec& flat) {
    run(flat);
    return flatten_grads(ps);
  };
  return fn;
}

}  // namespace affect
