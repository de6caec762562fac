// Reverse-mode autodiff over a dynamically recorded graph ("tape").
// Forward ops record a pull closure; backward replays them in reverse
// creation order (which is reverse-topological by construction), visiting
// each node exactly once. Reductions accumulate in 64-bit regardless of Real.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "ltsft/common.hpp"
#include "ltsft/tensor.hpp"

namespace ltsft {

template <typename Real>
class Graph {
 public:
  using Id = int32_t;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Id leaf(TensorT<Real> t) { return push(std::move(t), "leaf", {}); }

  const TensorT<Real>& val(Id id) const { return nodes_[static_cast<size_t>(id)].val; }

  // Gradient of the last backward() target w.r.t. node `id` (zeros if the
  // node does not influence the target).
  TensorT<Real> grad(Id id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.adj.v.empty()) return TensorT<Real>(n.val.shape);
    return n.adj;
  }

  // ----------------------------------------------------------------- ops ---

  Id add(Id a, Id b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (ta.shape != tb.shape) fail(Errc::internal, "add: shape mismatch");
    TensorT<Real> out(ta.shape);
    for (int64_t i = 0; i < ta.size(); ++i) out.v[static_cast<size_t>(i)] = ta.v[static_cast<size_t>(i)] + tb.v[static_cast<size_t>(i)];
    Id c = push(std::move(out), "add", [a, b](Graph& g, Id self) {
      const auto& d = g.adjoint(self);
      auto& da = g.adjoint_acc(a);
      auto& db = g.adjoint_acc(b);
      for (size_t i = 0; i < d.v.size(); ++i) {
        da.v[i] += d.v[i];
        db.v[i] += d.v[i];
      }
    });
    return c;
  }

  // [m,n] + [n] broadcast over rows.
  Id add_rowvec(Id a, Id bias) {
    const auto& ta = val(a);
    const auto& tb = val(bias);
    if (ta.shape.size() != 2 || tb.shape.size() != 1 || ta.shape[1] != tb.shape[0])
      fail(Errc::internal, "add_rowvec: shape mismatch");
    const int64_t m = ta.shape[0], n = ta.shape[1];
    TensorT<Real> out(ta.shape);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        out.v[static_cast<size_t>(i * n + j)] = ta.v[static_cast<size_t>(i * n + j)] + tb.v[static_cast<size_t>(j)];
    Id c = push(std::move(out), "add_rowvec", [a, bias, m, n](Graph& g, Id self) {
      const auto& d = g.adjoint(self);
      auto& da = g.adjoint_acc(a);
      auto& db = g.adjoint_acc(bias);
      std::vector<double> col(static_cast<size_t>(n), 0.0);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          Real dv = d.v[static_cast<size_t>(i * n + j)];
          da.v[static_cast<size_t>(i * n + j)] += dv;
          col[static_cast<size_t>(j)] += static_cast<double>(dv);
        }
      for (int64_t j = 0; j < n; ++j) db.v[static_cast<size_t>(j)] += static_cast<Real>(col[static_cast<size_t>(j)]);
    });
    return c;
  }

  // [m,k] x [k,n] -> [m,n]
  Id matmul(Id a, Id b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.shape[1] != tb.shape[0])
      fail(Errc::internal, "matmul: shape mismatch");
    const int64_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    TensorT<Real> out({m, n});
    mm_acc(ta.v.data(), tb.v.data(), out.v.data(), m, k, n);
    Id c = push(std::move(out), "matmul", [a, b, m, k, n](Graph& g, Id self) {
      const auto& d = g.adjoint(self);
      // dA += dC x B^T ; dB += A^T x dC
      mm_nt_add(d.v.data(), g.val(b).v.data(), g.adjoint_acc(a).v.data(), m, n, k);
      mm_tn_add(g.val(a).v.data(), d.v.data(), g.adjoint_acc(b).v.data(), m, k, n);
    });
    return c;
  }

  // [m,k] x [n,k]^T -> [m,n]  (used for tied/decoupled embedding projections)
  Id matmul_nt(Id a, Id b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.shape[1] != tb.shape[1])
      fail(Errc::internal, "matmul_nt: shape mismatch");
    const int64_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[0];
    TensorT<Real> out({m, n});
    mm_nt(ta.v.data(), tb.v.data(), out.v.data(), m, k, n);
    Id c = push(std::move(out), "matmul_nt", [a, b, m, k, n](Graph& g, Id self) {
      const auto& d = g.adjoint(self);
      // C = A x B^T: dA += dC x B ; dB += dC^T x A
      mm_acc_add(d.v.data(), g.val(b).v.data(), g.adjoint_acc(a).v.data(), m, n, k);
      mm_tn_add(d.v.data(), g.val(a).v.data(), g.adjoint_acc(b).v.data(), m, n, k);
    });
    return c;
  }

  Id gelu(Id x) {
    const auto& tx = val(x);
    TensorT<Real> out(tx.shape);
    for (size_t i = 0; i < tx.v.size(); ++i) {
      double z = static_cast<double>(tx.v[i]);
      out.v[i] = static_cast<Real>(0.5 * z * (1.0 + std::erf(z * 0.7071067811865475244)));
    }
    Id c = push(std::move(out), "gelu", [x](Graph& g, Id self) {
      const auto& d = g.adjoint(self);
      auto& dx = g.adjoint_acc(x);
      const auto& tx = g.val(x);
      for (size_t i = 0; i < d.v.size(); ++i) {
        double z = static_cast<double>(tx.v[i]);
        double cdf = 0.5 * (1.0 + std::erf(z * 0.7071067811865475244));
        double pdf = std::exp(-0.5 * z * z) * 0.3989422804014326779;
        dx.v[i] += static_cast<Real>(static_cast<double>(d.v[i]) * (cdf + z * pdf));
      }
    });
    return c;
  }

  // Row-wise layer norm with learned scale/bias.
  Id layer_norm(Id x, Id scale, Id bias, double eps = 1e-5) {
    const auto& tx = val(x);
    const auto& ts = val(scale);
    const auto& tb = val(bias);
    if (tx.shape.size() != 2 || ts.shape.size() != 1 || tb.shape.size() != 1 || ts.shape[0] != tx.shape[1] ||
        tb.shape[0] != tx.shape[1])
      fail(Errc::internal, "layer_norm: shape mismatch");
    const int64_t m = tx.shape[0], n = tx.shape[1];
    TensorT<Real> out(tx.shape);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
    auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
      double mu = 0.0;
      for (int64_t j = 0; j < n; ++j) mu += static_cast<double>(tx.v[static_cast<size_t>(i * n + j)]);
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        double dv = static_cast<double>(tx.v[static_cast<size_t>(i * n + j)]) - mu;
        var += dv * dv;
      }
      var /= static_cast<double>(n);
      double is = 1.0 / std::sqrt(var + eps);
      (*mean)[static_cast<size_t>(i)] = mu;
      (*inv_std)[static_cast<size_t>(i)] = is;
      for (int64_t j = 0; j < n; ++j) {
        double xh = (static_cast<double>(tx.v[static_cast<size_t>(i * n + j)]) - mu) * is;
        out.v[static_cast<size_t>(i * n + j)] =
            static_cast<Real>(xh * static_cast<double>(ts.v[static_cast<size_t>(j)]) + static_cast<double>(tb.v[static_cast<size_t>(j)]));
      }
    }
    Id c = push(std::move(out), "layer_norm", [x, scale, bias, m, n, mean, inv_std](Graph& g, Id self) {
      const auto& d = g.adjoint(self);
      const auto& tx = g.val(x);
      const auto& ts = g.val(scale);
      auto& dx = g.adjoint_acc(x);
      auto& dscale = g.adjoint_acc(scale);
      auto& dbias = g.adjoint_acc(bias);
      std::vector<double> ds(static_cast<size_t>(n), 0.0), db(static_cast<size_t>(n), 0.0);
      for (int64_t i = 0; i < m; ++i) {
        double mu = (*mean)[static_cast<size_t>(i)];
        double is = (*inv_std)[static_cast<size_t>(i)];
        double sum_gd = 0.0, sum_gdx = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          double xh = (static_cast<double>(tx.v[static_cast<size_t>(i * n + j)]) - mu) * is;
          double gd = static_cast<double>(d.v[static_cast<size_t>(i * n + j)]) * static_cast<double>(ts.v[static_cast<size_t>(j)]);
          sum_gd += gd;
          sum_gdx += gd * xh;
          ds[static_cast<size_t>(j)] += static_cast<double>(d.v[static_cast<size_t>(i * n + j)]) * xh;
          db[static_cast<size_t>(j)] += static_cast<double>(d.v[static_cast<size_t>(i * n + j)]);
        }
        double inv_n = 1.0 / static_cast<double>(n);
        for (int64_t j = 0; j < n; ++j) {
          double xh = (static_cast<double>(tx.v[static_cast<size_t>(i * n + j)]) - mu) * is;
          double gd = static_cast<double>(d.v[static_cast<size_t>(i * n + j)]) * static_cast<double>(ts.v[static_cast<size_t>(j)]);
          dx.v[static_cast<size_t>(i * n + j)] += static_cast<Real>((gd - inv_n * sum_gd - xh * inv_n * sum_gdx) * is);
        }
      }
      for (int64_t j = 0; j < n; ++j) {
        dscale.v[static_cast<size_t>(j)] += static_cast<Real>(ds[static_cast<size_t>(j)]);
        dbias.v[static_cast<size_t>(j)] += static_cast<Real>(db[static_cast<size_t>(j)]);
      }
    });
    return c;
  }

  // table [V,H], ids in [0,V) -> [n,H]. Repeated ids accumulate in backward.
  Id embedding(Id table, std::vector<int32_t> ids) {
    const auto& tt = val(table);
    if (tt.shape.size() != 2) fail(Errc::internal, "embedding: table must be 2-d");
    const int64_t V = tt.shape[0], H = tt.shape[1];
    for (int32_t id : ids)
      if (id < 0 || id >= V) fail(Errc::format, "embedding: token id out of range");
    TensorT<Real> out({static_cast<int64_t>(ids.size()), H});
    for (size_t r = 0; r < ids.size(); ++r)
      std::copy_n(tt.v.begin() + static_cast<int64_t>(ids[r]) * H, H, out.v.begin() + static_cast<int64_t>(r) * H);
    auto ids_p = std::make_shared<std::vector<int32_t>>(std::move(ids));
    Id c = push(std::move(out), "embedding", [table, H, ids_p](Graph& g, Id self) {
      const auto& d = g.adjoint(self);
      auto& dt = g.adjoint_acc(table);
      for (size_t r = 0; r < ids_p->size(); ++r) {
        Real* dst = dt.v.data() + static_cast<int64_t>((*ids_p)[r]) * H;
        const Real* src = d.v.data() + static_cast<int64_t>(r) * H;
        for (int64_t j = 0; j < H; ++j) dst[j] += src[j];
      }
    });
    return c;
  }

  // Select rows by index (used to project only loss-bearing positions).
  Id gather_rows(Id x, std::vector<int64_t> rows) {
    const auto& tx = val(x);
    if (tx.shape.size() != 2) fail(Errc::internal, "gather_rows: need 2-d input");
    const int64_t m = tx.shape[0], n = tx.shape[1];
    for (int64_t r : rows)
      if (r < 0 || r >= m) fail(Errc::internal, "gather_rows: row out of range");
    TensorT<Real> out({static_cast<int64_t>(rows.size()), n});
    for (size_t r = 0; r < rows.size(); ++r)
      std::copy_n(tx.v.begin() + rows[r] * n, n, out.v.begin() + static_cast<int64_t>(r) * n);
    auto rows_p = std::make_shared<std::vector<int64_t>>(std::move(rows));
    Id c = push(std::move(out), "gather_rows", [x, n, rows_p](Graph& g, Id self) {
      const auto& d = g.adjoint(self);
      auto& dx = g.adjoint_acc(x);
      for (size_t r = 0; r < rows_p->size(); ++r) {
        Real* dst = dx.v.data() + (*rows_p)[r] * n;
        const Real* src = d.v.data() + static_cast<int64_t>(r) * n;
        for (int64_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
    return c;
  }

  // Inverted dropout with counter-based noise: element i keeps iff
  // unit(key, i) >= rate. rate <= 0 is the identity (no node recorded).
  Id dropout(Id x, double rate, uint64_t key) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) fail(Errc::config, "dropout rate must be < 1");
    const auto& tx = val(x);
    TensorT<Real> out(tx.shape);
    auto keep = std::make_shared<std::vector<uint8_t>>(tx.v.size());
    const Real inv = static_cast<Real>(1.0 / (1.0 - rate));
    for (size_t i = 0; i < tx.v.size(); ++i) {
      bool k = element_unit(key, i) >= rate;
      (*keep)[i] = k;
      out.v[i] = k ? tx.v[i] * inv : Real(0);
    }
    Id c = push(std::move(out), "dropout", [x, keep, inv](Graph& g, Id self) {
      const auto& d = g.adjoint(self);
      auto& dx = g.adjoint_acc(x);
      for (size_t i = 0; i < d.v.size(); ++i)
        if ((*keep)[i]) dx.v[i] += d.v[i] * inv;
    });
    return c;
  }

  // Multi-head self-attention. q,k,v: [B*T, H]; attn[b*T+u] == 1 marks real
  // key positions. Padded keys get a -1e9 score (finite; exp underflows to 0).
  Id self_attention(Id q, Id k, Id v, int64_t batch, int64_t seq, int64_t heads, const std::vector<uint8_t>& attn) {
    const auto& tq = val(q);
    const auto& tk = val(k);
    const auto& tv = val(v);
    if (tq.shape != tk.shape || tq.shape != tv.shape || tq.shape.size() != 2)
      fail(Errc::internal, "self_attention: q/k/v shapes differ");
    const int64_t R = tq.shape[0], H = tq.shape[1];
    if (R != batch * seq || H % heads != 0 || static_cast<int64_t>(attn.size()) != R)
      fail(Errc::internal, "self_attention: bad geometry");
    const int64_t dh = H / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    TensorT<Real> out({R, H});
    // Stash softmax rows for backward: probs[b][h] is a TxT matrix.
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(batch * heads * seq * seq));
    std::vector<double> score(static_cast<size_t>(seq));
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t h = 0; h < heads; ++h) {
        double* P = probs->data() + ((b * heads + h) * seq * seq);
        for (int64_t t = 0; t < seq; ++t) {
          const Real* qrow = tq.v.data() + (b * seq + t) * H + h * dh;
          double mx = -1e30;
          for (int64_t u = 0; u < seq; ++u) {
            const Real* krow = tk.v.data() + (b * seq + u) * H + h * dh;
            double s = 0.0;
            for (int64_t j = 0; j < dh; ++j) s += static_cast<double>(qrow[j]) * static_cast<double>(krow[j]);
            s = s * scale + (attn[static_cast<size_t>(b * seq + u)] ? 0.0 : -1e9);
            score[static_cast<size_t>(u)] = s;
            if (s > mx) mx = s;
          }
          double z = 0.0;
          for (int64_t u = 0; u < seq; ++u) {
            double e = std::exp(score[static_cast<size_t>(u)] - mx);
            P[t * seq + u] = e;
            z += e;
          }
          double izn = 1.0 / z;
          for (int64_t u = 0; u < seq; ++u) P[t * seq + u] *= izn;
          Real* orow = out.v.data() + (b * seq + t) * H + h * dh;
          for (int64_t j = 0; j < dh; ++j) {
            double acc = 0.0;
            for (int64_t u = 0; u < seq; ++u)
              acc += P[t * seq + u] * static_cast<double>(tv.v[static_cast<size_t>((b * seq + u) * H + h * dh + j)]);
            orow[j] = static_cast<Real>(acc);
          }
        }
      }
    }
    Id c = push(std::move(out), "self_attention", [q, k, v, batch, seq, heads, dh, scale, probs](Graph& g, Id self) {
      const auto& d = g.adjoint(self);
      const auto& tq = g.val(q);
      const auto& tk = g.val(k);
      const auto& tv = g.val(v);
      auto& dq = g.adjoint_acc(q);
      auto& dk = g.adjoint_acc(k);
      auto& dv = g.adjoint_acc(v);
      const int64_t H = heads * dh;
      std::vector<double> dA(static_cast<size_t>(seq));
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
          const double* P = probs->data() + ((b * heads + h) * seq * seq);
          for (int64_t t = 0; t < seq; ++t) {
            const Real* drow = d.v.data() + (b * seq + t) * H + h * dh;
            // dA[t,u] = dot(dCtx[t], V[u]); dV[u] += P[t,u] * dCtx[t]
            double rowdot = 0.0;
            for (int64_t u = 0; u < seq; ++u) {
              const Real* vrow = tv.v.data() + (b * seq + u) * H + h * dh;
              Real* dvrow = dv.v.data() + (b * seq + u) * H + h * dh;
              double a = 0.0;
              double p = P[t * seq + u];
              for (int64_t j = 0; j < dh; ++j) {
                a += static_cast<double>(drow[j]) * static_cast<double>(vrow[j]);
                dvrow[j] += static_cast<Real>(p * static_cast<double>(drow[j]));
              }
              dA[static_cast<size_t>(u)] = a;
              rowdot += a * p;
            }
            // dS = P * (dA - rowdot); dQ[t] += scale * dS x K; dK[u] += scale * dS[t,u] * Q[t]
            Real* dqrow = dq.v.data() + (b * seq + t) * H + h * dh;
            const Real* qrow = tq.v.data() + (b * seq + t) * H + h * dh;
            for (int64_t u = 0; u < seq; ++u) {
              double dsv = P[t * seq + u] * (dA[static_cast<size_t>(u)] - rowdot) * scale;
              if (dsv == 0.0) continue;
              const Real* krow = tk.v.data() + (b * seq + u) * H + h * dh;
              Real* dkrow = dk.v.data() + (b * seq + u) * H + h * dh;
              for (int64_t j = 0; j < dh; ++j) {
                dqrow[j] += static_cast<Real>(dsv * static_cast<double>(krow[j]));
                dkrow[j] += static_cast<Real>(dsv * static_cast<double>(qrow[j]));
              }
            }
          }
        }
      }
    });
    return c;
  }

  // Mean over rows marked real: x [B*T,H], attn [B*T] -> [B,H].
  Id masked_mean(Id x, const std::vector<uint8_t>& attn, int64_t batch, int64_t seq) {
    const auto& tx = val(x);
    if (tx.shape.size() != 2 || tx.shape[0] != batch * seq || static_cast<int64_t>(attn.size()) != batch * seq)
      fail(Errc::internal, "masked_mean: bad geometry");
    const int64_t H = tx.shape[1];
    auto counts = std::make_shared<std::vector<double>>(static_cast<size_t>(batch), 0.0);
    for (int64_t b = 0; b < batch; ++b) {
      double c = 0.0;
      for (int64_t t = 0; t < seq; ++t) c += attn[static_cast<size_t>(b * seq + t)] ? 1.0 : 0.0;
      if (c == 0.0) fail(Errc::format, "masked_mean: empty sequence");
      (*counts)[static_cast<size_t>(b)] = c;
    }
    TensorT<Real> out({batch, H});
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t j = 0; j < H; ++j) {
        double acc = 0.0;
        for (int64_t t = 0; t < seq; ++t)
          if (attn[static_cast<size_t>(b * seq + t)]) acc += static_cast<double>(tx.v[static_cast<size_t>((b * seq + t) * H + j)]);
        out.v[static_cast<size_t>(b * H + j)] = static_cast<Real>(acc / (*counts)[static_cast<size_t>(b)]);
      }
    }
    auto attn_p = std::make_shared<std::vector<uint8_t>>(attn);
    Id c = push(std::move(out), "masked_mean", [x, batch, seq, H, counts, attn_p](Graph& g, Id self) {
      const auto& d = g.adjoint(self);
      auto& dx = g.adjoint_acc(x);
      for (int64_t b = 0; b < batch; ++b) {
        double inv = 1.0 / (*counts)[static_cast<size_t>(b)];
        for (int64_t t = 0; t < seq; ++t) {
          if (!(*attn_p)[static_cast<size_t>(b * seq + t)]) continue;
          for (int64_t j = 0; j < H; ++j)
            dx.v[static_cast<size_t>((b * seq + t) * H + j)] += static_cast<Real>(static_cast<double>(d.v[static_cast<size_t>(b * H + j)]) * inv);
        }
      }
    });
    return c;
  }

  // Mean softmax cross-entropy over rows whose target >= 0. With no selected
  // rows the loss is 0 with zero gradient (by convention).
  Id softmax_ce_mean(Id logits, std::vector<int32_t> targets) {
    const auto& tl = val(logits);
    if (tl.shape.size() != 2 || static_cast<int64_t>(targets.size()) != tl.shape[0])
      fail(Errc::internal, "softmax_ce_mean: bad geometry");
    const int64_t m = tl.shape[0], n = tl.shape[1];
    auto probs = std::make_shared<std::vector<double>>();
    auto sel = std::make_shared<std::vector<int64_t>>();
    for (int64_t i = 0; i < m; ++i) {
      int32_t t = targets[static_cast<size_t>(i)];
      if (t < 0) continue;
      if (t >= n) fail(Errc::format, "softmax_ce_mean: target out of range");
      sel->push_back(i);
    }
    double loss = 0.0;
    probs->resize(sel->size() * static_cast<size_t>(n));
    for (size_t s = 0; s < sel->size(); ++s) {
      int64_t i = (*sel)[s];
      const Real* row = tl.v.data() + i * n;
      double mx = -1e300;
      for (int64_t j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
      double z = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        double e = std::exp(static_cast<double>(row[j]) - mx);
        (*probs)[s * static_cast<size_t>(n) + static_cast<size_t>(j)] = e;
        z += e;
      }
      double izn = 1.0 / z;
      for (int64_t j = 0; j < n; ++j) (*probs)[s * static_cast<size_t>(n) + static_cast<size_t>(j)] *= izn;
      double p = (*probs)[s * static_cast<size_t>(n) + static_cast<size_t>(targets[static_cast<size_t>(i)])];
      loss -= std::log(std::max(p, 1e-300));
    }
    if (!sel->empty()) loss /= static_cast<double>(sel->size());
    TensorT<Real> out({}, {static_cast<Real>(loss)});
    auto targets_p = std::make_shared<std::vector<int32_t>>(std::move(targets));
    Id c = push(std::move(out), "softmax_ce_mean", [logits, n, probs, sel, targets_p](Graph& g, Id self) {
      if (sel->empty()) return;
      const auto& d = g.adjoint(self);
      auto& dl = g.adjoint_acc(logits);
      double w = static_cast<double>(d.v[0]) / static_cast<double>(sel->size());
      for (size_t s = 0; s < sel->size(); ++s) {
        int64_t i = (*sel)[s];
        int32_t t = (*targets_p)[static_cast<size_t>(i)];
        Real* drow = dl.v.data() + i * n;
        const double* prow = probs->data() + s * static_cast<size_t>(n);
        for (int64_t j = 0; j < n; ++j) drow[j] += static_cast<Real>(w * (prow[j] - (j == t ? 1.0 : 0.0)));
      }
    });
    return c;
  }

  // ------------------------------------------------------------ backward ---

  void backward(Id target) {
    Node& t = nodes_[static_cast<size_t>(target)];
    if (t.val.size() != 1) fail(Errc::internal, "backward: target must be scalar");
    adjoint_acc(target).v[0] = Real(1);
    for (int64_t i = target; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.adj.v.empty() || !n.pull) continue;
      n.pull(*this, static_cast<Id>(i));
    }
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    TensorT<Real> val;
    TensorT<Real> adj;  // lazily allocated
    std::function<void(Graph&, Id)> pull;
  };

  const TensorT<Real>& adjoint(Id id) const { return nodes_[static_cast<size_t>(id)].adj; }

  TensorT<Real>& adjoint_acc(Id id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.adj.v.empty()) n.adj = TensorT<Real>(n.val.shape);
    return n.adj;
  }

  Id push(TensorT<Real> t, const char* op, std::function<void(Graph&, Id)> pull) {
    for (Real x : t.v)
      if (!std::isfinite(static_cast<double>(x))) fail(Errc::numeric, std::string("non-finite value after op ") + op);
    nodes_.push_back(Node{std::move(t), {}, std::move(pull)});
    return static_cast<Id>(nodes_.size() - 1);
  }

  // m x k times k x n, fresh output, 64-bit row accumulation.
  static void mm_acc(const Real* A, const Real* B, Real* C, int64_t m, int64_t k, int64_t n) {
    std::vector<double> row(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
      std::fill(row.begin(), row.end(), 0.0);
      for (int64_t p = 0; p < k; ++p) {
        double a = static_cast<double>(A[i * k + p]);
        if (a == 0.0) continue;
        const Real* brow = B + p * n;
        for (int64_t j = 0; j < n; ++j) row[static_cast<size_t>(j)] += a * static_cast<double>(brow[j]);
      }
      for (int64_t j = 0; j < n; ++j) C[i * n + j] = static_cast<Real>(row[static_cast<size_t>(j)]);
    }
  }

  // Same but accumulates into C.
  static void mm_acc_add(const Real* A, const Real* B, Real* C, int64_t m, int64_t k, int64_t n) {
    std::vector<double> row(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
      std::fill(row.begin(), row.end(), 0.0);
      for (int64_t p = 0; p < k; ++p) {
        double a = static_cast<double>(A[i * k + p]);
        if (a == 0.0) continue;
        const Real* brow = B + p * n;
        for (int64_t j = 0; j < n; ++j) row[static_cast<size_t>(j)] += a * static_cast<double>(brow[j]);
      }
      for (int64_t j = 0; j < n; ++j) C[i * n + j] += static_cast<Real>(row[static_cast<size_t>(j)]);
    }
  }

  // A [m,k] x B [n,k]^T -> C [m,n], fresh output.
  static void mm_nt(const Real* A, const Real* B, Real* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
      const Real* arow = A + i * k;
      for (int64_t j = 0; j < n; ++j) {
        const Real* brow = B + j * k;
        double acc = 0.0;
        for (int64_t p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * static_cast<double>(brow[p]);
        C[i * n + j] = static_cast<Real>(acc);
      }
    }
  }

  // A [m,k] x B [n,k]^T added into C [m,n].
  static void mm_nt_add(const Real* A, const Real* B, Real* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
      const Real* arow = A + i * k;
      for (int64_t j = 0; j < n; ++j) {
        const Real* brow = B + j * k;
        double acc = 0.0;
        for (int64_t p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * static_cast<double>(brow[p]);
        C[i * n + j] += static_cast<Real>(acc);
      }
    }
  }

  // A^T [k,m] x B [m... : A [m,k], B [m,n] -> C [k,n] accumulated (dB of matmul).
  static void mm_tn_add(const Real* A, const Real* B, Real* C, int64_t m, int64_t k, int64_t n) {
    std::vector<double> row(static_cast<size_t>(n));
    for (int64_t p = 0; p < k; ++p) {
      std::fill(row.begin(), row.end(), 0.0);
      for (int64_t i = 0; i < m; ++i) {
        double a = static_cast<double>(A[i * k + p]);
        if (a == 0.0) continue;
        const Real* brow = B + i * n;
        for (int64_t j = 0; j < n; ++j) row[static_cast<size_t>(j)] += a * static_cast<double>(brow[j]);
      }
      for (int64_t j = 0; j < n; ++j) C[p * n + j] += static_cast<Real>(row[static_cast<size_t>(j)]);
    }
  }

  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace ltsft
