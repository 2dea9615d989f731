#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "dtzf/common.hpp"

// Recurrent cells (LSTM and GRU) with truncated backpropagation through time,
// batched over sequences as matrix columns. Everything is double precision;
// gradient correctness is pinned by finite-difference tests.
namespace dtzf::neuralpredict {

using Eigen::MatrixXd;

enum class CellType { lstm, gru };

// Biases are stored as n x 1 matrices so every parameter tensor has one type.
struct Affine {
  MatrixXd W;
  MatrixXd b;
};

// Gate-stacked weights. Row blocks: LSTM [input, forget, candidate, output],
// GRU [reset, update, candidate]. The GRU candidate block of Wh multiplies
// the reset-gated state r .* h, the rest multiply h directly.
struct CellParams {
  CellType type = CellType::lstm;
  MatrixXd Wx;  // gates*H x in
  MatrixXd Wh;  // gates*H x H
  MatrixXd b;   // gates*H x 1
  int hidden() const { return static_cast<int>(Wh.cols()); }
  int gate_rows() const { return static_cast<int>(Wx.rows()); }
};

struct ModuleParams {
  Affine input;                   // in -> H, tanh
  std::vector<CellParams> cells;  // H -> H each
  Affine output;                  // H -> out, identity
  int hidden() const { return static_cast<int>(input.W.rows()); }
  int layers() const { return static_cast<int>(cells.size()); }
  int in_dim() const { return static_cast<int>(input.W.cols()); }
  int out_dim() const { return static_cast<int>(output.W.rows()); }
  CellType cell_type() const {
    return cells.empty() ? CellType::lstm : cells.front().type;
  }
};

// Fixed traversal order; serialization and the optimizer slot layout both
// follow it.
template <class Params, class F>
void for_each_tensor(Params& p, F&& f) {
  f(std::string("input.W"), p.input.W);
  f(std::string("input.b"), p.input.b);
  for (std::size_t i = 0; i < p.cells.size(); ++i) {
    const std::string tag = "cell" + std::to_string(i);
    f(tag + ".Wx", p.cells[i].Wx);
    f(tag + ".Wh", p.cells[i].Wh);
    f(tag + ".b", p.cells[i].b);
  }
  f(std::string("output.W"), p.output.W);
  f(std::string("output.b"), p.output.b);
}

inline bool all_finite(const ModuleParams& p) {
  bool ok = true;
  for_each_tensor(const_cast<ModuleParams&>(p),
                  [&](const std::string&, const MatrixXd& t) { ok = ok && t.allFinite(); });
  return ok;
}

inline ModuleParams zeros_like(const ModuleParams& p) {
  ModuleParams z = p;
  for_each_tensor(z, [](const std::string&, MatrixXd& t) { t.setZero(); });
  return z;
}

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per tensor, column-major draw
// order, biases bounded by their layer's fan-in.
inline ModuleParams init_module(int layers, int hidden, CellType type,
                                Substream& rng, int in_dim = 2, int out_dim = 2) {
  if (layers < 1 || hidden < 1)
    throw invalid_parameter("init_module: need at least one layer and one unit");
  const auto fill = [&rng](MatrixXd& t, double bound) {
    for (Eigen::Index c = 0; c < t.cols(); ++c)
      for (Eigen::Index r = 0; r < t.rows(); ++r) t(r, c) = rng.uniform(-bound, bound);
  };
  ModuleParams p;
  const int gates = type == CellType::lstm ? 4 : 3;
  p.input.W.resize(hidden, in_dim);
  p.input.b.resize(hidden, 1);
  const double bi = 1.0 / std::sqrt(static_cast<double>(in_dim));
  fill(p.input.W, bi);
  fill(p.input.b, bi);
  p.cells.resize(static_cast<std::size_t>(layers));
  const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto& c : p.cells) {
    c.type = type;
    c.Wx.resize(gates * hidden, hidden);
    c.Wh.resize(gates * hidden, hidden);
    c.b.resize(gates * hidden, 1);
    fill(c.Wx, bh);
    fill(c.Wh, bh);
    fill(c.b, bh);
  }
  p.output.W.resize(out_dim, hidden);
  p.output.b.resize(out_dim, 1);
  fill(p.output.W, bh);
  fill(p.output.b, bh);
  return p;
}

struct LayerState {
  MatrixXd h;  // H x B
  MatrixXd c;  // H x B, unused by GRU
};

struct RnnState {
  std::vector<LayerState> layers;

  void reset(const ModuleParams& p, int batch) {
    layers.assign(static_cast<std::size_t>(p.layers()), LayerState{});
    for (auto& l : layers) {
      l.h = MatrixXd::Zero(p.hidden(), batch);
      l.c = MatrixXd::Zero(p.hidden(), batch);
    }
  }
  int batch() const { return layers.empty() ? 0 : static_cast<int>(layers.front().h.cols()); }
};

namespace detail {

inline MatrixXd sigmoid(const MatrixXd& z) {
  return ((-z.array()).exp() + 1.0).inverse().matrix();
}

}  // namespace detail

struct CellCache {
  MatrixXd x, h_prev, c_prev, h_new;
  MatrixXd i, f, g, o, c, tanh_c;  // lstm
  MatrixXd r, u, n, rh;            // gru
};

// One cell step over a batch; advances st in place.
inline MatrixXd cell_step(const CellParams& cp, const MatrixXd& X,
                          LayerState& st, CellCache* cache = nullptr) {
  const int H = cp.hidden();
  const MatrixXd h_prev = st.h;
  if (cp.type == CellType::lstm) {
    MatrixXd Z = cp.Wx * X + cp.Wh * h_prev;
    Z.colwise() += cp.b.col(0);
    const MatrixXd i = detail::sigmoid(Z.topRows(H));
    const MatrixXd f = detail::sigmoid(Z.middleRows(H, H));
    const MatrixXd g = Z.middleRows(2 * H, H).array().tanh().matrix();
    const MatrixXd o = detail::sigmoid(Z.bottomRows(H));
    const MatrixXd c = (f.array() * st.c.array() + i.array() * g.array()).matrix();
    const MatrixXd tc = c.array().tanh().matrix();
    const MatrixXd h = (o.array() * tc.array()).matrix();
    if (cache) {
      cache->x = X;
      cache->h_prev = h_prev;
      cache->c_prev = st.c;
      cache->i = i;
      cache->f = f;
      cache->g = g;
      cache->o = o;
      cache->c = c;
      cache->tanh_c = tc;
      cache->h_new = h;
    }
    st.c = c;
    st.h = h;
    return h;
  }
  // gru: candidate sees the reset-gated previous state
  MatrixXd Zru = cp.Wx.topRows(2 * H) * X + cp.Wh.topRows(2 * H) * h_prev;
  Zru.colwise() += cp.b.col(0).head(2 * H);
  const MatrixXd r = detail::sigmoid(Zru.topRows(H));
  const MatrixXd u = detail::sigmoid(Zru.bottomRows(H));
  const MatrixXd rh = (r.array() * h_prev.array()).matrix();
  MatrixXd Zn = cp.Wx.bottomRows(H) * X + cp.Wh.bottomRows(H) * rh;
  Zn.colwise() += cp.b.col(0).tail(H);
  const MatrixXd n = Zn.array().tanh().matrix();
  const MatrixXd h = (u.array() * h_prev.array() + (1.0 - u.array()) * n.array()).matrix();
  if (cache) {
    cache->x = X;
    cache->h_prev = h_prev;
    cache->r = r;
    cache->u = u;
    cache->n = n;
    cache->rh = rh;
    cache->h_new = h;
  }
  st.h = h;
  return h;
}

struct StepCache {
  MatrixXd x0;      // raw input, in x B
  MatrixXd in_act;  // tanh output of the input layer
  std::vector<CellCache> cells;
};

// One module step over a batch: input affine + tanh, the cell stack, output
// affine. Returns out x B.
inline MatrixXd module_step(const ModuleParams& p, const MatrixXd& X,
                            RnnState& st, StepCache* cache = nullptr) {
  MatrixXd a = p.input.W * X;
  a.colwise() += p.input.b.col(0);
  a = a.array().tanh().matrix();
  if (cache) {
    cache->x0 = X;
    cache->in_act = a;
    cache->cells.resize(p.cells.size());
  }
  MatrixXd h = a;
  for (std::size_t l = 0; l < p.cells.size(); ++l)
    h = cell_step(p.cells[l], h, st.layers[l], cache ? &cache->cells[l] : nullptr);
  MatrixXd y = p.output.W * h;
  y.colwise() += p.output.b.col(0);
  return y;
}

// Window forward from zero state, caching everything backward needs.
// Returns the final-step output.
inline MatrixXd forward_window(const ModuleParams& p,
                               const std::vector<MatrixXd>& xs,
                               std::vector<StepCache>& caches) {
  if (xs.empty()) throw invalid_parameter("forward_window: empty window");
  RnnState st;
  st.reset(p, static_cast<int>(xs.front().cols()));
  caches.assign(xs.size(), StepCache{});
  MatrixXd y;
  for (std::size_t t = 0; t < xs.size(); ++t) y = module_step(p, xs[t], st, &caches[t]);
  return y;
}

namespace detail {

// Backward through one cell step. dh is the total gradient on this step's
// output; dc_in the carry on the LSTM cell state. Emits dx and replaces
// (dh, dc_in) with the previous step's carries.
inline MatrixXd cell_backward(const CellParams& cp, const CellCache& cc,
                              MatrixXd& dh, MatrixXd& dc_in, CellParams& grad) {
  const int H = cp.hidden();
  if (cp.type == CellType::lstm) {
    const auto& a = cc;
    MatrixXd d_o = (dh.array() * a.tanh_c.array()).matrix();
    MatrixXd dct = (dh.array() * a.o.array() * (1.0 - a.tanh_c.array().square())).matrix() + dc_in;
    MatrixXd d_i = (dct.array() * a.g.array()).matrix();
    MatrixXd d_f = (dct.array() * a.c_prev.array()).matrix();
    MatrixXd d_g = (dct.array() * a.i.array()).matrix();
    MatrixXd dZ(4 * H, dh.cols());
    dZ.topRows(H) = (d_i.array() * a.i.array() * (1.0 - a.i.array())).matrix();
    dZ.middleRows(H, H) = (d_f.array() * a.f.array() * (1.0 - a.f.array())).matrix();
    dZ.middleRows(2 * H, H) = (d_g.array() * (1.0 - a.g.array().square())).matrix();
    dZ.bottomRows(H) = (d_o.array() * a.o.array() * (1.0 - a.o.array())).matrix();
    grad.Wx.noalias() += dZ * a.x.transpose();
    grad.Wh.noalias() += dZ * a.h_prev.transpose();
    grad.b.col(0).noalias() += dZ.rowwise().sum();
    MatrixXd dx = cp.Wx.transpose() * dZ;
    dh = cp.Wh.transpose() * dZ;
    dc_in = (dct.array() * a.f.array()).matrix();
    return dx;
  }
  const auto& a = cc;
  MatrixXd d_u = (dh.array() * (a.h_prev.array() - a.n.array())).matrix();
  MatrixXd d_n = (dh.array() * (1.0 - a.u.array())).matrix();
  MatrixXd dh_prev = (dh.array() * a.u.array()).matrix();
  MatrixXd dZn = (d_n.array() * (1.0 - a.n.array().square())).matrix();
  grad.Wx.bottomRows(H).noalias() += dZn * a.x.transpose();
  grad.Wh.bottomRows(H).noalias() += dZn * a.rh.transpose();
  grad.b.col(0).tail(H).noalias() += dZn.rowwise().sum();
  MatrixXd drh = cp.Wh.bottomRows(H).transpose() * dZn;
  MatrixXd dx = cp.Wx.bottomRows(H).transpose() * dZn;
  MatrixXd d_r = (drh.array() * a.h_prev.array()).matrix();
  dh_prev += (drh.array() * a.r.array()).matrix();
  MatrixXd dZru(2 * H, dh.cols());
  dZru.topRows(H) = (d_r.array() * a.r.array() * (1.0 - a.r.array())).matrix();
  dZru.bottomRows(H) = (d_u.array() * a.u.array() * (1.0 - a.u.array())).matrix();
  grad.Wx.topRows(2 * H).noalias() += dZru * a.x.transpose();
  grad.Wh.topRows(2 * H).noalias() += dZru * a.h_prev.transpose();
  grad.b.col(0).head(2 * H).noalias() += dZru.rowwise().sum();
  dx += cp.Wx.topRows(2 * H).transpose() * dZru;
  dh_prev += cp.Wh.topRows(2 * H).transpose() * dZru;
  dh = dh_prev;
  return dx;
}

}  // namespace detail

// Backpropagation through the whole window. Only the final step carries a
// loss gradient (dY_final, out x B). Gradients accumulate into `grads`,
// which must be zeros_like the parameters on entry.
inline void backward_window(const ModuleParams& p,
                            const std::vector<StepCache>& caches,
                            const MatrixXd& dY_final, ModuleParams& grads) {
  const int W = static_cast<int>(caches.size());
  if (W == 0) throw invalid_parameter("backward_window: empty cache");
  const int L = p.layers();
  const int B = static_cast<int>(dY_final.cols());
  const int H = p.hidden();
  std::vector<MatrixXd> dh(static_cast<std::size_t>(L), MatrixXd::Zero(H, B));
  std::vector<MatrixXd> dc(static_cast<std::size_t>(L), MatrixXd::Zero(H, B));

  // output layer acts on the top cell's final hidden state
  grads.output.W.noalias() += dY_final * caches[W - 1].cells[L - 1].h_new.transpose();
  grads.output.b.col(0).noalias() += dY_final.rowwise().sum();
  dh[L - 1] = p.output.W.transpose() * dY_final;

  for (int t = W - 1; t >= 0; --t) {
    const StepCache& sc = caches[static_cast<std::size_t>(t)];
    for (int l = L - 1; l >= 0; --l) {
      MatrixXd dx = detail::cell_backward(p.cells[l], sc.cells[l], dh[l], dc[l],
                                          grads.cells[l]);
      if (l > 0) {
        dh[l - 1] += dx;
      } else {
        // through the input layer's tanh
        const MatrixXd dpre = (dx.array() * (1.0 - sc.in_act.array().square())).matrix();
        grads.input.W.noalias() += dpre * sc.x0.transpose();
        grads.input.b.col(0).noalias() += dpre.rowwise().sum();
      }
    }
  }
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ModuleParams m, v;
  long t = 0;
  explicit AdamState(const ModuleParams& p) : m(zeros_like(p)), v(zeros_like(p)) {}
};

inline void adam_step(ModuleParams& p, const ModuleParams& g, AdamState& s,
                      const AdamConfig& c) {
  ++s.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.t));
  std::vector<MatrixXd*> tp, tg, tm, tv;
  for_each_tensor(p, [&](const std::string&, MatrixXd& t) { tp.push_back(&t); });
  for_each_tensor(const_cast<ModuleParams&>(g),
                  [&](const std::string&, MatrixXd& t) { tg.push_back(&t); });
  for_each_tensor(s.m, [&](const std::string&, MatrixXd& t) { tm.push_back(&t); });
  for_each_tensor(s.v, [&](const std::string&, MatrixXd& t) { tv.push_back(&t); });
  for (std::size_t i = 0; i < tp.size(); ++i) {
    auto& P = *tp[i];
    const auto& G = *tg[i];
    auto& M = *tm[i];
    auto& V = *tv[i];
    M = c.beta1 * M + (1.0 - c.beta1) * G;
    V = (c.beta2 * V.array() + (1.0 - c.beta2) * G.array().square()).matrix();
    P.array() -= c.lr * (M.array() / bc1) / ((V.array() / bc2).sqrt() + c.eps);
  }
}

// Single-link stateful inference step: complex in, complex one-step-ahead
// prediction out.
inline cplx forward(const ModuleParams& p, cplx h_in, RnnState& st) {
  if (!std::isfinite(h_in.real()) || !std::isfinite(h_in.imag()))
    throw numeric_fault("forward: non-finite input sample");
  if (st.layers.empty()) st.reset(p, 1);
  MatrixXd x(2, 1);
  x(0, 0) = h_in.real();
  x(1, 0) = h_in.imag();
  const MatrixXd y = module_step(p, x, st);
  return {y(0, 0), y(1, 0)};
}

}  // namespace dtzf::neuralpredict
