#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "kdmp/error.hpp"
#include "kdmp/parallel.hpp"
#include "kdmp/tensor.hpp"

namespace kdmp {

// Handle into a Tape's node list.
struct Val {
  int id = -1;
  bool valid() const { return id >= 0; }
};

namespace detail {

// Strides for NumPy-style broadcasting, aligned at the trailing dimension.
// A broadcast dimension gets stride 0 so the same element is reused.
struct BcastPlan {
  Shape out_shape;
  std::vector<std::size_t> out_strides;
  std::vector<std::size_t> a_strides;
  std::vector<std::size_t> b_strides;
};

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

inline BcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  BcastPlan plan;
  std::size_t rank = std::max(a.size(), b.size());
  plan.out_shape.resize(rank);
  Shape ax(rank, 1), bx(rank, 1);
  std::copy(a.begin(), a.end(), ax.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), bx.begin() + (rank - b.size()));
  for (std::size_t i = 0; i < rank; ++i) {
    if (ax[i] != bx[i] && ax[i] != 1 && bx[i] != 1) {
      throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": cannot broadcast " +
                                                shape_str(a) + " with " + shape_str(b));
    }
    plan.out_shape[i] = std::max(ax[i], bx[i]);
  }
  plan.out_strides = row_major_strides(plan.out_shape);
  auto a_st = row_major_strides(ax);
  auto b_st = row_major_strides(bx);
  plan.a_strides.resize(rank);
  plan.b_strides.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    plan.a_strides[i] = ax[i] == 1 ? 0 : a_st[i];
    plan.b_strides[i] = bx[i] == 1 ? 0 : b_st[i];
  }
  return plan;
}

// Output index range [l0, l1) per kernel tap k such that
// 0 <= l*stride - pad + k < L for all l in the range.
inline std::vector<std::pair<std::size_t, std::size_t>> conv_tap_ranges(
    std::size_t L, std::size_t K, std::size_t Lo, std::size_t stride, std::size_t pad) {
  std::vector<std::pair<std::size_t, std::size_t>> r(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t l0 = pad > k ? (pad - k + stride - 1) / stride : 0;
    std::size_t l1 = l0;
    if (L + pad >= k + 1) l1 = std::min(Lo, (L + pad - k - 1) / stride + 1);
    r[k] = {std::max(l0, std::size_t{0}), std::max(l0, l1)};
  }
  return r;
}

// C = A·B, all row-major, C zero-initialized by the caller. Rows of C are
// disjoint across tasks, so the result is thread-count independent.
inline void gemm(const double* A, const double* B, double* C, std::size_t M, std::size_t K,
                 std::size_t N) {
  parallel_for(M, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const double* arow = A + i * K;
      double* crow = C + i * N;
      for (std::size_t kk = 0; kk < K; ++kk) {
        const double av = arow[kk];
        const double* brow = B + kk * N;
        for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// Zero-padded im2col gather: col[(b·Lo+l), ci·K+k] = x[b, ci, l·stride+k−pad].
inline void im2col(const double* x, double* col, std::size_t B, std::size_t Ci, std::size_t L,
                   std::size_t K, std::size_t Lo, std::size_t stride, std::size_t pad) {
  const std::size_t CK = Ci * K;
  parallel_for(B * Lo, [&](std::size_t lo_i, std::size_t hi_i) {
    for (std::size_t bl = lo_i; bl < hi_i; ++bl) {
      const std::size_t b = bl / Lo, l = bl % Lo;
      double* crow = col + bl * CK;
      const std::size_t base = l * stride;  // input pos = base + k - pad
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* xrow = x + (b * Ci + ci) * L;
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t pos = base + k;
          crow[ci * K + k] = (pos >= pad && pos - pad < L) ? xrow[pos - pad] : 0.0;
        }
      }
    }
  });
}

}  // namespace detail

// Recorded operation graph for one forward pass. Creation order is a
// topological order, so backward() walks node ids in reverse and visits each
// exactly once.
class Tape {
 public:
  Val input(Tensor t) { return push(std::move(t), nullptr); }

  const Tensor& value(Val v) const { return nodes_[check(v)].value; }
  const Tensor& grad(Val v) const { return nodes_[check(v)].grad; }
  Tensor& grad(Val v) { return nodes_[check(v)].grad; }

  std::size_t size() const { return nodes_.size(); }

  // ---- arithmetic -------------------------------------------------------

  Val add(Val a, Val b) { return binary_bcast(a, b, /*is_mul=*/false); }
  Val mul(Val a, Val b) { return binary_bcast(a, b, /*is_mul=*/true); }

  Val scale(Val a, double c) {
    const Tensor& x = value(a);
    Tensor out = x;
    for (double& v : out.data) v *= c;
    int ai = a.id;
    return push(std::move(out), [ai, c](Tape& t, const Tensor& g) {
      Tensor& ga = t.nodes_[ai].grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
    });
  }

  Val sum_vals(const std::vector<Val>& vs) {
    if (vs.empty()) throw Error(ErrorCode::BadArgument, "sum_vals: empty list");
    double total = 0.0;
    for (Val v : vs) {
      if (value(v).numel() != 1)
        throw Error(ErrorCode::ShapeMismatch, "sum_vals: operand not scalar");
      total += value(v).data[0];
    }
    std::vector<int> ids;
    ids.reserve(vs.size());
    for (Val v : vs) ids.push_back(v.id);
    return push(Tensor::scalar(total), [ids](Tape& t, const Tensor& g) {
      for (int id : ids) t.nodes_[id].grad.data[0] += g.data[0];
    });
  }

  // ---- linear algebra ----------------------------------------------------

  Val matmul(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0]) {
      throw Error(ErrorCode::ShapeMismatch,
                  "matmul: " + shape_str(A.shape) + " x " + shape_str(B.shape));
    }
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Tensor out({m, n});
    detail::gemm(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    int ai = a.id, bi = b.id;
    return push(std::move(out), [ai, bi, m, k, n](Tape& t, const Tensor& g) {
      const Tensor& A = t.nodes_[ai].value;
      const Tensor& B = t.nodes_[bi].value;
      Tensor& gA = t.nodes_[ai].grad;
      Tensor& gB = t.nodes_[bi].grad;
      // dA = G * B^T
      parallel_for(m, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
          const double* grow = &g.data[i * n];
          double* garow = &gA.data[i * k];
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = &B.data[kk * n];
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            garow[kk] += acc;
          }
        }
      });
      // dB = A^T * G
      parallel_for(k, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t kk = lo; kk < hi; ++kk) {
          double* gbrow = &gB.data[kk * n];
          for (std::size_t i = 0; i < m; ++i) {
            const double av = A.data[i * k + kk];
            const double* grow = &g.data[i * n];
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      });
    });
  }

  // x: [B, Cin, L], w: [Cout, Cin, K], bias: [Cout] (optional, pass Val{}).
  Val conv1d(Val x, Val w, Val bias, std::size_t stride, std::size_t pad) {
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    if (X.rank() != 3 || W.rank() != 3 || X.shape[1] != W.shape[1]) {
      throw Error(ErrorCode::ShapeMismatch,
                  "conv1d: input " + shape_str(X.shape) + " weight " + shape_str(W.shape));
    }
    if (bias.valid() && value(bias).shape != Shape{W.shape[0]}) {
      throw Error(ErrorCode::ShapeMismatch, "conv1d: bias " + shape_str(value(bias).shape) +
                                                " vs Cout " + std::to_string(W.shape[0]));
    }
    if (stride == 0) throw Error(ErrorCode::BadArgument, "conv1d: stride must be positive");
    const std::size_t B = X.shape[0], Ci = X.shape[1], L = X.shape[2];
    const std::size_t Co = W.shape[0], K = W.shape[2];
    if (L + 2 * pad < K) {
      throw Error(ErrorCode::ShapeMismatch, "conv1d: kernel " + std::to_string(K) +
                                                " exceeds padded length " +
                                                std::to_string(L + 2 * pad));
    }
    const std::size_t Lo = (L + 2 * pad - K) / stride + 1;
    const std::size_t CK = Ci * K;
    const bool pointwise = K == 1 && stride == 1 && pad == 0;
    Tensor out({B, Co, Lo});
    const double* bias_ptr = bias.valid() ? value(bias).data.data() : nullptr;
    if (pointwise) {
      // Channel mix at every position; im2col would only add copy traffic.
      parallel_for(B * Co, [&](std::size_t lo_i, std::size_t hi_i) {
        for (std::size_t bc = lo_i; bc < hi_i; ++bc) {
          const std::size_t b = bc / Co, co = bc % Co;
          double* orow = &out.data[bc * L];
          const double b0 = bias_ptr ? bias_ptr[co] : 0.0;
          for (std::size_t l = 0; l < L; ++l) orow[l] = b0;
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const double wv = W.data[co * Ci + ci];
            const double* xrow = &X.data[(b * Ci + ci) * L];
            for (std::size_t l = 0; l < L; ++l) orow[l] += wv * xrow[l];
          }
        }
      });
    } else {
      // Lowered to GEMM: out2[(b·Lo+l), co] = col · Wᵀ. The direct tap loops
      // run far below machine throughput at the short row lengths used here.
      Tensor col({B * Lo, CK});
      detail::im2col(X.data.data(), col.data.data(), B, Ci, L, K, Lo, stride, pad);
      Tensor wT({CK, Co});
      for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t c = 0; c < CK; ++c) wT.data[c * Co + co] = W.data[co * CK + c];
      Tensor out2({B * Lo, Co});
      detail::gemm(col.data.data(), wT.data.data(), out2.data.data(), B * Lo, CK, Co);
      parallel_for(B, [&](std::size_t blo, std::size_t bhi) {
        for (std::size_t b = blo; b < bhi; ++b)
          for (std::size_t co = 0; co < Co; ++co) {
            double* orow = &out.data[(b * Co + co) * Lo];
            const double* srow = &out2.data[b * Lo * Co + co];
            const double b0 = bias_ptr ? bias_ptr[co] : 0.0;
            for (std::size_t l = 0; l < Lo; ++l) orow[l] = srow[l * Co] + b0;
          }
      });
    }
    int xi = x.id, wi = w.id, bi2 = bias.valid() ? bias.id : -1;
    return push(std::move(out), [xi, wi, bi2, B, Ci, L, Co, K, Lo, stride, pad](
                                    Tape& t, const Tensor& g) {
      const Tensor& X = t.nodes_[xi].value;
      const Tensor& W = t.nodes_[wi].value;
      Tensor& gX = t.nodes_[xi].grad;
      Tensor& gW = t.nodes_[wi].grad;
      const std::size_t CK = Ci * K;
      if (K == 1 && stride == 1 && pad == 0) {
        parallel_for(B * Ci, [&](std::size_t lo_i, std::size_t hi_i) {
          for (std::size_t bc = lo_i; bc < hi_i; ++bc) {
            const std::size_t b = bc / Ci, ci = bc % Ci;
            double* gxrow = &gX.data[bc * L];
            for (std::size_t co = 0; co < Co; ++co) {
              const double wv = W.data[co * Ci + ci];
              const double* grow = &g.data[(b * Co + co) * L];
              for (std::size_t l = 0; l < L; ++l) gxrow[l] += wv * grow[l];
            }
          }
        });
        parallel_for(Co * Ci, [&](std::size_t lo_i, std::size_t hi_i) {
          for (std::size_t cc = lo_i; cc < hi_i; ++cc) {
            const std::size_t co = cc / Ci, ci = cc % Ci;
            double acc = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
              const double* grow = &g.data[(b * Co + co) * L];
              const double* xrow = &X.data[(b * Ci + ci) * L];
              for (std::size_t l = 0; l < L; ++l) acc += grow[l] * xrow[l];
            }
            gW.data[cc] += acc;
          }
        });
        if (bi2 >= 0) {
          Tensor& gB = t.nodes_[bi2].grad;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Co; ++co) {
              const double* grow = &g.data[(b * Co + co) * L];
              double acc = 0.0;
              for (std::size_t l = 0; l < L; ++l) acc += grow[l];
              gB.data[co] += acc;
            }
        }
        return;
      }
      // g2[(b·Lo+l), co] = g[b, co, l]
      Tensor g2({B * Lo, Co});
      parallel_for(B, [&](std::size_t blo, std::size_t bhi) {
        for (std::size_t b = blo; b < bhi; ++b)
          for (std::size_t co = 0; co < Co; ++co) {
            const double* grow = &g.data[(b * Co + co) * Lo];
            double* drow = &g2.data[b * Lo * Co + co];
            for (std::size_t l = 0; l < Lo; ++l) drow[l * Co] = grow[l];
          }
      });
      // dCol = g2 · W2 with W2 the [Co, Ci·K] reshape of the kernel
      Tensor dcol({B * Lo, CK});
      detail::gemm(g2.data.data(), W.data.data(), dcol.data.data(), B * Lo, Co, CK);
      // col2im scatter-add; each (b, ci) input row is owned by one task
      const auto ranges = detail::conv_tap_ranges(L, K, Lo, stride, pad);
      parallel_for(B * Ci, [&](std::size_t lo_i, std::size_t hi_i) {
        for (std::size_t bc = lo_i; bc < hi_i; ++bc) {
          const std::size_t b = bc / Ci, ci = bc % Ci;
          double* gxrow = &gX.data[bc * L];
          for (std::size_t k = 0; k < K; ++k) {
            const auto [l0, l1] = ranges[k];
            const double* src = &dcol.data[(b * Lo) * CK + ci * K + k];
            for (std::size_t l = l0; l < l1; ++l)
              gxrow[l * stride + k - pad] += src[l * CK];
          }
        }
      });
      // dW2 = g2ᵀ · col, with col rebuilt (cheaper than keeping it alive)
      Tensor col({B * Lo, CK});
      detail::im2col(X.data.data(), col.data.data(), B, Ci, L, K, Lo, stride, pad);
      Tensor g2T({Co, B * Lo});
      for (std::size_t r = 0; r < B * Lo; ++r)
        for (std::size_t co = 0; co < Co; ++co) g2T.data[co * B * Lo + r] = g2.data[r * Co + co];
      Tensor dW2({Co, CK});
      detail::gemm(g2T.data.data(), col.data.data(), dW2.data.data(), Co, B * Lo, CK);
      for (std::size_t i = 0; i < gW.numel(); ++i) gW.data[i] += dW2.data[i];
      if (bi2 >= 0) {
        Tensor& gB = t.nodes_[bi2].grad;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t co = 0; co < Co; ++co) {
            const double* grow = &g.data[(b * Co + co) * Lo];
            double acc = 0.0;
            for (std::size_t l = 0; l < Lo; ++l) acc += grow[l];
            gB.data[co] += acc;
          }
      }
    });
  }

  // x: [B, C, L], gamma/beta: [C]
  Val group_norm(Val x, Val gamma, Val beta, std::size_t groups, double eps = 1e-5) {
    const Tensor& X = value(x);
    if (X.rank() != 3) {
      throw Error(ErrorCode::ShapeMismatch, "group_norm: input " + shape_str(X.shape));
    }
    const std::size_t B = X.shape[0], C = X.shape[1], L = X.shape[2];
    if (groups == 0 || C % groups != 0) {
      throw Error(ErrorCode::ShapeMismatch, "group_norm: channels " + std::to_string(C) +
                                                " not divisible by groups " +
                                                std::to_string(groups));
    }
    if (value(gamma).shape != Shape{C} || value(beta).shape != Shape{C}) {
      throw Error(ErrorCode::ShapeMismatch, "group_norm: gamma/beta must be [C]");
    }
    const std::size_t gc = C / groups;  // channels per group
    const std::size_t gn = gc * L;      // elements per group
    auto mu = std::make_shared<std::vector<double>>(B * groups);
    auto inv = std::make_shared<std::vector<double>>(B * groups);
    Tensor out({B, C, L});
    const Tensor& G0 = value(gamma);
    const Tensor& B0 = value(beta);
    parallel_for(B * groups, [&](std::size_t lo_i, std::size_t hi_i) {
      for (std::size_t bg = lo_i; bg < hi_i; ++bg) {
        const std::size_t b = bg / groups, grp = bg % groups;
        const double* base = &X.data[(b * C + grp * gc) * L];
        double m = 0.0;
        for (std::size_t i = 0; i < gn; ++i) m += base[i];
        m /= static_cast<double>(gn);
        double var = 0.0;
        for (std::size_t i = 0; i < gn; ++i) {
          const double d = base[i] - m;
          var += d * d;
        }
        var /= static_cast<double>(gn);
        const double is = 1.0 / std::sqrt(var + eps);
        (*mu)[bg] = m;
        (*inv)[bg] = is;
        for (std::size_t c = 0; c < gc; ++c) {
          const std::size_t ch = grp * gc + c;
          const double ga = G0.data[ch], be = B0.data[ch];
          const double* xr = &X.data[(b * C + ch) * L];
          double* orow = &out.data[(b * C + ch) * L];
          for (std::size_t l = 0; l < L; ++l) orow[l] = ga * (xr[l] - m) * is + be;
        }
      }
    });
    int xi = x.id, gi = gamma.id, bi = beta.id;
    return push(std::move(out), [xi, gi, bi, B, C, L, groups, gc, gn, mu, inv](
                                    Tape& t, const Tensor& g) {
      const Tensor& X = t.nodes_[xi].value;
      const Tensor& GA = t.nodes_[gi].value;
      Tensor& gX = t.nodes_[xi].grad;
      Tensor& gGa = t.nodes_[gi].grad;
      Tensor& gBe = t.nodes_[bi].grad;
      // parameter grads (serial: C is small)
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t ch = 0; ch < C; ++ch) {
          const std::size_t bg = b * groups + ch / gc;
          const double m = (*mu)[bg], is = (*inv)[bg];
          const double* xr = &X.data[(b * C + ch) * L];
          const double* gr = &g.data[(b * C + ch) * L];
          double sg = 0.0, sgx = 0.0;
          for (std::size_t l = 0; l < L; ++l) {
            sg += gr[l];
            sgx += gr[l] * (xr[l] - m) * is;
          }
          gBe.data[ch] += sg;
          gGa.data[ch] += sgx;
        }
      }
      parallel_for(B * groups, [&](std::size_t lo_i, std::size_t hi_i) {
        for (std::size_t bg = lo_i; bg < hi_i; ++bg) {
          const std::size_t b = bg / groups, grp = bg % groups;
          const double m = (*mu)[bg], is = (*inv)[bg];
          // dxhat = g * gamma; dx = is*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t c = 0; c < gc; ++c) {
            const std::size_t ch = grp * gc + c;
            const double ga = GA.data[ch];
            const double* xr = &X.data[(b * C + ch) * L];
            const double* gr = &g.data[(b * C + ch) * L];
            for (std::size_t l = 0; l < L; ++l) {
              const double dxh = gr[l] * ga;
              s1 += dxh;
              s2 += dxh * (xr[l] - m) * is;
            }
          }
          s1 /= static_cast<double>(gn);
          s2 /= static_cast<double>(gn);
          for (std::size_t c = 0; c < gc; ++c) {
            const std::size_t ch = grp * gc + c;
            const double ga = GA.data[ch];
            const double* xr = &X.data[(b * C + ch) * L];
            const double* gr = &g.data[(b * C + ch) * L];
            double* gx = &gX.data[(b * C + ch) * L];
            for (std::size_t l = 0; l < L; ++l) {
              const double xh = (xr[l] - m) * is;
              gx[l] += is * (gr[l] * ga - s1 - xh * s2);
            }
          }
        }
      });
    });
  }

  // ---- activations -------------------------------------------------------

  Val mish(Val a) {
    const Tensor& X = value(a);
    Tensor out(X.shape);
    for (std::size_t i = 0; i < X.numel(); ++i) {
      const double x = X.data[i];
      out.data[i] = x * std::tanh(softplus(x));
    }
    int ai = a.id;
    return push(std::move(out), [ai](Tape& t, const Tensor& g) {
      const Tensor& X = t.nodes_[ai].value;
      Tensor& gA = t.nodes_[ai].grad;
      for (std::size_t i = 0; i < X.numel(); ++i) {
        const double x = X.data[i];
        const double th = std::tanh(softplus(x));
        const double sig = 1.0 / (1.0 + std::exp(-x));
        gA.data[i] += g.data[i] * (th + x * (1.0 - th * th) * sig);
      }
    });
  }

  Val silu(Val a) {
    const Tensor& X = value(a);
    Tensor out(X.shape);
    for (std::size_t i = 0; i < X.numel(); ++i) {
      const double x = X.data[i];
      out.data[i] = x / (1.0 + std::exp(-x));
    }
    int ai = a.id;
    return push(std::move(out), [ai](Tape& t, const Tensor& g) {
      const Tensor& X = t.nodes_[ai].value;
      Tensor& gA = t.nodes_[ai].grad;
      for (std::size_t i = 0; i < X.numel(); ++i) {
        const double x = X.data[i];
        const double sig = 1.0 / (1.0 + std::exp(-x));
        gA.data[i] += g.data[i] * sig * (1.0 + x * (1.0 - sig));
      }
    });
  }

  // ---- reductions & losses ------------------------------------------------

  Val mse(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) {
      throw Error(ErrorCode::ShapeMismatch,
                  "mse: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < A.numel(); ++i) {
      const double d = A.data[i] - B.data[i];
      acc += d * d;
    }
    const double n = static_cast<double>(A.numel());
    int ai = a.id, bi = b.id;
    return push(Tensor::scalar(acc / n), [ai, bi, n](Tape& t, const Tensor& g) {
      const Tensor& A = t.nodes_[ai].value;
      const Tensor& B = t.nodes_[bi].value;
      Tensor& gA = t.nodes_[ai].grad;
      Tensor& gB = t.nodes_[bi].grad;
      const double c = 2.0 * g.data[0] / n;
      for (std::size_t i = 0; i < A.numel(); ++i) {
        const double d = c * (A.data[i] - B.data[i]);
        gA.data[i] += d;
        gB.data[i] -= d;
      }
    });
  }

  Val mean_all(Val a) {
    const Tensor& A = value(a);
    double acc = 0.0;
    for (double v : A.data) acc += v;
    const double n = static_cast<double>(A.numel());
    int ai = a.id;
    return push(Tensor::scalar(acc / n), [ai, n](Tape& t, const Tensor& g) {
      Tensor& gA = t.nodes_[ai].grad;
      const double c = g.data[0] / n;
      for (double& v : gA.data) v += c;
    });
  }

  Val reduce_max(Val a, std::size_t axis) { return reduce_extremum(a, axis, /*take_max=*/true); }
  Val reduce_min(Val a, std::size_t axis) { return reduce_extremum(a, axis, /*take_max=*/false); }

  // ---- geometry-flavored ops ----------------------------------------------

  // a: [P, d], b: [Q, d] -> [P, Q] of squared distances
  Val pairwise_sqdist(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[1]) {
      throw Error(ErrorCode::ShapeMismatch,
                  "pairwise_sqdist: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    }
    const std::size_t P = A.shape[0], Q = B.shape[0], d = A.shape[1];
    Tensor out({P, Q});
    parallel_for(P, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        const double* ai = &A.data[i * d];
        double* orow = &out.data[i * Q];
        for (std::size_t j = 0; j < Q; ++j) {
          const double* bj = &B.data[j * d];
          double acc = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double dd = ai[c] - bj[c];
            acc += dd * dd;
          }
          orow[j] = acc;
        }
      }
    });
    int aidx = a.id, bidx = b.id;
    return push(std::move(out), [aidx, bidx, P, Q, d](Tape& t, const Tensor& g) {
      const Tensor& A = t.nodes_[aidx].value;
      const Tensor& B = t.nodes_[bidx].value;
      Tensor& gA = t.nodes_[aidx].grad;
      Tensor& gB = t.nodes_[bidx].grad;
      for (std::size_t i = 0; i < P; ++i) {
        const double* ai = &A.data[i * d];
        const double* grow = &g.data[i * Q];
        double* gai = &gA.data[i * d];
        for (std::size_t j = 0; j < Q; ++j) {
          const double gv = grow[j];
          if (gv == 0.0) continue;
          const double* bj = &B.data[j * d];
          double* gbj = &gB.data[j * d];
          for (std::size_t c = 0; c < d; ++c) {
            const double dd = 2.0 * (ai[c] - bj[c]) * gv;
            gai[c] += dd;
            gbj[c] -= dd;
          }
        }
      }
    });
  }

  // ---- shape plumbing ------------------------------------------------------

  Val reshape(Val a, Shape s) {
    const Tensor& A = value(a);
    if (shape_numel(s) != A.numel()) {
      throw Error(ErrorCode::ShapeMismatch,
                  "reshape: " + shape_str(A.shape) + " to " + shape_str(s));
    }
    Tensor out(std::move(s), A.data);
    int ai = a.id;
    return push(std::move(out), [ai](Tape& t, const Tensor& g) {
      Tensor& gA = t.nodes_[ai].grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) gA.data[i] += g.data[i];
    });
  }

  Val concat(Val a, Val b, std::size_t axis) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != B.rank() || axis >= A.rank()) {
      throw Error(ErrorCode::ShapeMismatch,
                  "concat: " + shape_str(A.shape) + " and " + shape_str(B.shape));
    }
    for (std::size_t i = 0; i < A.rank(); ++i) {
      if (i != axis && A.shape[i] != B.shape[i]) {
        throw Error(ErrorCode::ShapeMismatch,
                    "concat: " + shape_str(A.shape) + " and " + shape_str(B.shape));
      }
    }
    Shape os = A.shape;
    os[axis] += B.shape[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= A.shape[i];
    for (std::size_t i = axis + 1; i < A.rank(); ++i) inner *= A.shape[i];
    const std::size_t wa = A.shape[axis] * inner, wb = B.shape[axis] * inner;
    Tensor out(os);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(&A.data[o * wa], wa, &out.data[o * (wa + wb)]);
      std::copy_n(&B.data[o * wb], wb, &out.data[o * (wa + wb) + wa]);
    }
    int ai = a.id, bi = b.id;
    return push(std::move(out), [ai, bi, outer, wa, wb](Tape& t, const Tensor& g) {
      Tensor& gA = t.nodes_[ai].grad;
      Tensor& gB = t.nodes_[bi].grad;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* gs = &g.data[o * (wa + wb)];
        double* ga = &gA.data[o * wa];
        double* gb = &gB.data[o * wb];
        for (std::size_t i = 0; i < wa; ++i) ga[i] += gs[i];
        for (std::size_t i = 0; i < wb; ++i) gb[i] += gs[wa + i];
      }
    });
  }

  Val slice(Val a, std::size_t axis, std::size_t start, std::size_t len) {
    const Tensor& A = value(a);
    if (axis >= A.rank() || start + len > A.shape[axis] || len == 0) {
      throw Error(ErrorCode::ShapeMismatch, "slice: axis " + std::to_string(axis) + " [" +
                                                std::to_string(start) + "," +
                                                std::to_string(start + len) + ") of " +
                                                shape_str(A.shape));
    }
    Shape os = A.shape;
    os[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= A.shape[i];
    for (std::size_t i = axis + 1; i < A.rank(); ++i) inner *= A.shape[i];
    const std::size_t wfull = A.shape[axis] * inner, wout = len * inner;
    Tensor out(os);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(&A.data[o * wfull + start * inner], wout, &out.data[o * wout]);
    }
    int ai = a.id;
    return push(std::move(out),
                [ai, outer, inner, wfull, wout, start](Tape& t, const Tensor& g) {
                  Tensor& gA = t.nodes_[ai].grad;
                  for (std::size_t o = 0; o < outer; ++o) {
                    double* ga = &gA.data[o * wfull + start * inner];
                    const double* gs = &g.data[o * wout];
                    for (std::size_t i = 0; i < wout; ++i) ga[i] += gs[i];
                  }
                });
  }

  // x: [B, C, L] -> [B, C, L*factor], nearest neighbor
  Val upsample_nearest(Val a, std::size_t factor) {
    const Tensor& A = value(a);
    if (A.rank() != 3 || factor == 0) {
      throw Error(ErrorCode::ShapeMismatch, "upsample_nearest: input " + shape_str(A.shape));
    }
    const std::size_t rows = A.shape[0] * A.shape[1], L = A.shape[2];
    Tensor out({A.shape[0], A.shape[1], L * factor});
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = &A.data[r * L];
      double* orow = &out.data[r * L * factor];
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t f = 0; f < factor; ++f) orow[l * factor + f] = xr[l];
    }
    int ai = a.id;
    return push(std::move(out), [ai, rows, L, factor](Tape& t, const Tensor& g) {
      Tensor& gA = t.nodes_[ai].grad;
      for (std::size_t r = 0; r < rows; ++r) {
        double* ga = &gA.data[r * L];
        const double* gr = &g.data[r * L * factor];
        for (std::size_t l = 0; l < L; ++l) {
          double acc = 0.0;
          for (std::size_t f = 0; f < factor; ++f) acc += gr[l * factor + f];
          ga[l] += acc;
        }
      }
    });
  }

  // ---- backward ------------------------------------------------------------

  void backward(Val loss) {
    const Tensor& L = value(loss);
    if (L.numel() != 1) {
      throw Error(ErrorCode::ShapeMismatch,
                  "backward: loss must be scalar, got " + shape_str(L.shape));
    }
    if (!std::isfinite(L.data[0])) {
      throw Error(ErrorCode::NanLoss, "backward: non-finite loss value");
    }
    for (auto& n : nodes_) {
      n.grad = Tensor(n.value.shape);  // zero-init
    }
    nodes_[loss.id].grad.data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      if (nodes_[i].backprop) nodes_[i].backprop(*this, nodes_[i].grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, const Tensor&)> backprop;
  };

  static double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
  }

  int check(Val v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
      throw Error(ErrorCode::BadArgument, "invalid tape handle");
    }
    return v.id;
  }

  Val push(Tensor value, std::function<void(Tape&, const Tensor&)> backprop) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(backprop)});
    return Val{static_cast<int>(nodes_.size()) - 1};
  }

  Val binary_bcast(Val a, Val b, bool is_mul) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    const char* name = is_mul ? "mul" : "add";
    // fast path: identical shapes
    if (A.same_shape(B)) {
      Tensor out(A.shape);
      if (is_mul) {
        for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] * B.data[i];
      } else {
        for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] + B.data[i];
      }
      int ai = a.id, bi = b.id;
      return push(std::move(out), [ai, bi, is_mul](Tape& t, const Tensor& g) {
        const Tensor& A = t.nodes_[ai].value;
        const Tensor& B = t.nodes_[bi].value;
        Tensor& gA = t.nodes_[ai].grad;
        Tensor& gB = t.nodes_[bi].grad;
        if (is_mul) {
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            gA.data[i] += g.data[i] * B.data[i];
            gB.data[i] += g.data[i] * A.data[i];
          }
        } else {
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            gA.data[i] += g.data[i];
            gB.data[i] += g.data[i];
          }
        }
      });
    }
    auto plan = std::make_shared<detail::BcastPlan>(detail::broadcast_plan(A.shape, B.shape, name));
    const std::size_t rank = plan->out_shape.size();
    const std::size_t n = shape_numel(plan->out_shape);
    Tensor out(plan->out_shape);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t ia = 0, ib = 0, rem = i;
      for (std::size_t d2 = 0; d2 < rank; ++d2) {
        const std::size_t q = rem / plan->out_strides[d2];
        rem %= plan->out_strides[d2];
        ia += q * plan->a_strides[d2];
        ib += q * plan->b_strides[d2];
      }
      out.data[i] = is_mul ? A.data[ia] * B.data[ib] : A.data[ia] + B.data[ib];
    }
    int ai = a.id, bi = b.id;
    return push(std::move(out), [ai, bi, is_mul, plan, rank, n](Tape& t, const Tensor& g) {
      const Tensor& A = t.nodes_[ai].value;
      const Tensor& B = t.nodes_[bi].value;
      Tensor& gA = t.nodes_[ai].grad;
      Tensor& gB = t.nodes_[bi].grad;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t ia = 0, ib = 0, rem = i;
        for (std::size_t d2 = 0; d2 < rank; ++d2) {
          const std::size_t q = rem / plan->out_strides[d2];
          rem %= plan->out_strides[d2];
          ia += q * plan->a_strides[d2];
          ib += q * plan->b_strides[d2];
        }
        if (is_mul) {
          gA.data[ia] += g.data[i] * B.data[ib];
          gB.data[ib] += g.data[i] * A.data[ia];
        } else {
          gA.data[ia] += g.data[i];
          gB.data[ib] += g.data[i];
        }
      }
    });
  }

  Val reduce_extremum(Val a, std::size_t axis, bool take_max) {
    const Tensor& A = value(a);
    if (axis >= A.rank()) {
      throw Error(ErrorCode::ShapeMismatch, "reduce: axis " + std::to_string(axis) +
                                                " out of range for " + shape_str(A.shape));
    }
    std::size_t outer = 1, inner = 1;
    const std::size_t ax = A.shape[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= A.shape[i];
    for (std::size_t i = axis + 1; i < A.rank(); ++i) inner *= A.shape[i];
    Shape os;
    for (std::size_t i = 0; i < A.rank(); ++i)
      if (i != axis) os.push_back(A.shape[i]);
    if (os.empty()) os.push_back(1);
    Tensor out(os);
    auto argidx = std::make_shared<std::vector<std::size_t>>(outer * inner);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const double* base = &A.data[o * ax * inner + in];
        double best = base[0];
        std::size_t besti = 0;
        for (std::size_t k = 1; k < ax; ++k) {
          const double v = base[k * inner];
          if (take_max ? v > best : v < best) {
            best = v;
            besti = k;
          }
        }
        out.data[o * inner + in] = best;
        (*argidx)[o * inner + in] = besti;
      }
    }
    int ai = a.id;
    return push(std::move(out), [ai, argidx, outer, inner, ax](Tape& t, const Tensor& g) {
      Tensor& gA = t.nodes_[ai].grad;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t k = (*argidx)[o * inner + in];
          gA.data[o * ax * inner + k * inner + in] += g.data[o * inner + in];
        }
    });
  }

  std::vector<Node> nodes_;
};

}  // namespace kdmp
