// SPDX-License-Identifier: Apache-2.0
#pragma once

// Direct-formula reference implementations used to check the library.
// Plain loops over std::vector<double>; nothing here calls into the tape.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y = W x + b, W row-major [out x in].
inline Vec affine(const Vec& w, const Vec& b, const Vec& x) {
  const std::size_t out = b.size(), in = x.size();
  Vec y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = b[o];
    for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * x[i];
    y[o] = s;
  }
  return y;
}

// Cross-correlation of x [H x W x C] with k [kh x kw x C x F], zero padding
// split as TensorFlow's "same" (extra row/column at the bottom/right).
inline Vec conv2d(const Vec& x, std::size_t H, std::size_t W, std::size_t C, const Vec& k, std::size_t kh,
                  std::size_t kw, std::size_t F, const Vec& bias, std::size_t stride, bool same, std::size_t* oh_out,
                  std::size_t* ow_out) {
  std::size_t oh, ow, pt = 0, pl = 0;
  if (same) {
    oh = (H + stride - 1) / stride;
    ow = (W + stride - 1) / stride;
    const long ph = std::max<long>(0, static_cast<long>((oh - 1) * stride + kh) - static_cast<long>(H));
    const long pw = std::max<long>(0, static_cast<long>((ow - 1) * stride + kw) - static_cast<long>(W));
    pt = static_cast<std::size_t>(ph / 2);
    pl = static_cast<std::size_t>(pw / 2);
  } else {
    oh = (H - kh) / stride + 1;
    ow = (W - kw) / stride + 1;
  }
  Vec y(oh * ow * F, 0.0);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t f = 0; f < F; ++f) {
        double s = bias.empty() ? 0.0 : bias[f];
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b) {
            const long r = static_cast<long>(i * stride + a) - static_cast<long>(pt);
            const long c = static_cast<long>(j * stride + b) - static_cast<long>(pl);
            if (r < 0 || c < 0 || r >= static_cast<long>(H) || c >= static_cast<long>(W)) continue;
            for (std::size_t ch = 0; ch < C; ++ch)
              s += x[(static_cast<std::size_t>(r) * W + static_cast<std::size_t>(c)) * C + ch] *
                   k[((a * kw + b) * C + ch) * F + f];
          }
        y[(i * ow + j) * F + f] = s;
      }
  *oh_out = oh;
  *ow_out = ow;
  return y;
}

struct Gru {
  Vec wz, uz, bz, wr, ur, br, wh, uh, bh;  // W [g x d], U [g x g], b [g]
};

// One step: z, r gates; candidate uses r * h inside U_h.
inline Vec gru_step(const Gru& p, const Vec& x, const Vec& h) {
  const std::size_t g = h.size();
  const Vec xz = affine(p.wz, p.bz, x), xr = affine(p.wr, p.br, x), xh = affine(p.wh, p.bh, x);
  const Vec zero(g, 0.0);
  const Vec hz = affine(p.uz, zero, h), hr = affine(p.ur, zero, h);
  Vec z(g), r(g), rh(g);
  for (std::size_t i = 0; i < g; ++i) {
    z[i] = sigm(xz[i] + hz[i]);
    r[i] = sigm(xr[i] + hr[i]);
    rh[i] = r[i] * h[i];
  }
  const Vec hh = affine(p.uh, zero, rh);
  Vec out(g);
  for (std::size_t i = 0; i < g; ++i) {
    const double c = std::tanh(xh[i] + hh[i]);
    out[i] = (1.0 - z[i]) * h[i] + z[i] * c;
  }
  return out;
}

// Rows [h_bwd(t); h_fwd(t)] for every step (no masking).
inline std::vector<Vec> bigru(const Gru& fwd, const Gru& bwd, const std::vector<Vec>& xs) {
  const std::size_t T = xs.size(), g = fwd.bz.size();
  std::vector<Vec> f(T), b(T);
  Vec h(g, 0.0);
  for (std::size_t t = 0; t < T; ++t) f[t] = h = gru_step(fwd, xs[t], h);
  h.assign(g, 0.0);
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t t = T - 1 - k;
    b[t] = h = gru_step(bwd, xs[t], h);
  }
  std::vector<Vec> rows(T);
  for (std::size_t t = 0; t < T; ++t) {
    rows[t] = b[t];
    rows[t].insert(rows[t].end(), f[t].begin(), f[t].end());
  }
  return rows;
}

// Additive scSE on z [H x W x C]: z * sigm(fc2(relu(fc1(gap z)))) + z * sigm(w_s . z_p + b_s).
inline Vec scse(const Vec& z, std::size_t H, std::size_t W, std::size_t C, const Vec& fc1w, const Vec& fc1b,
                const Vec& fc2w, const Vec& fc2b, const Vec& spw, double spb) {
  Vec gap(C, 0.0);
  for (std::size_t p = 0; p < H * W; ++p)
    for (std::size_t c = 0; c < C; ++c) gap[c] += z[p * C + c] / static_cast<double>(H * W);
  Vec s = affine(fc1w, fc1b, gap);
  for (auto& v : s) v = std::max(v, 0.0);
  Vec ch = affine(fc2w, fc2b, s);
  for (auto& v : ch) v = sigm(v);
  Vec out(z.size());
  for (std::size_t p = 0; p < H * W; ++p) {
    double q = spb;
    for (std::size_t c = 0; c < C; ++c) q += spw[c] * z[p * C + c];
    const double sp = sigm(q);
    for (std::size_t c = 0; c < C; ++c) out[p * C + c] = z[p * C + c] * ch[c] + z[p * C + c] * sp;
  }
  return out;
}

inline double rbf(const std::array<double, 4>& a, const std::array<double, 4>& b, double gamma) {
  double d = 0;
  for (std::size_t k = 0; k < 4; ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
  return std::exp(-gamma * d);
}

// Solves A x = rhs by Gaussian elimination with partial pivoting; false when singular.
inline bool solve(std::vector<Vec> a, Vec rhs, Vec& x) {
  const std::size_t n = rhs.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (std::abs(a[piv][c]) < 1e-12) return false;
    std::swap(a[c], a[piv]);
    std::swap(rhs[c], rhs[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      rhs[r] -= f * rhs[c];
    }
  }
  x.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = rhs[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return true;
}

struct DualSolution {
  Vec alpha;
  double bias = 0;
  bool has_free = false;
};

// Exact soft-margin dual for a handful of points: every alpha is pinned at
// 0, pinned at C or free; the free ones solve the equality-constrained
// stationarity system. The feasible candidate with the lowest objective is
// the optimum of the convex problem.
inline DualSolution svm_dual_bruteforce(const std::vector<std::array<double, 4>>& x, const std::vector<int>& labels,
                                        double C, double gamma) {
  const std::size_t n = x.size();
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = labels[i] == 1 ? 1.0 : -1.0;
  std::vector<Vec> Q(n, Vec(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) Q[i][j] = y[i] * y[j] * rbf(x[i], x[j], gamma);

  double best_obj = std::numeric_limits<double>::infinity();
  DualSolution best;
  std::size_t combos = 1;
  for (std::size_t i = 0; i < n; ++i) combos *= 3;
  for (std::size_t code = 0; code < combos; ++code) {
    std::vector<int> state(n);  // 0 lower, 1 free, 2 upper
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i, c /= 3) state[i] = static_cast<int>(c % 3);
    Vec alpha(n, 0.0);
    std::vector<std::size_t> F;
    for (std::size_t i = 0; i < n; ++i) {
      if (state[i] == 2) alpha[i] = C;
      if (state[i] == 1) F.push_back(i);
    }
    if (!F.empty()) {
      const std::size_t m = F.size();
      std::vector<Vec> A(m + 1, Vec(m + 1, 0.0));
      Vec rhs(m + 1, 0.0);
      for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b < m; ++b) A[a][b] = Q[F[a]][F[b]];
        A[a][m] = y[F[a]];
        A[m][a] = y[F[a]];
        double r = 1.0;
        for (std::size_t j = 0; j < n; ++j)
          if (state[j] == 2) r -= Q[F[a]][j] * C;
        rhs[a] = r;
      }
      double r = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (state[j] == 2) r -= y[j] * C;
      rhs[m] = r;
      Vec sol;
      if (!solve(A, rhs, sol)) continue;
      bool ok = true;
      for (std::size_t a = 0; a < m; ++a) {
        if (sol[a] < -1e-12 || sol[a] > C + 1e-12) ok = false;
        alpha[F[a]] = std::clamp(sol[a], 0.0, C);
      }
      if (!ok) continue;
    }
    double eq = 0;
    for (std::size_t i = 0; i < n; ++i) eq += y[i] * alpha[i];
    if (std::abs(eq) > 1e-9) continue;
    double obj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      obj -= alpha[i];
      for (std::size_t j = 0; j < n; ++j) obj += 0.5 * alpha[i] * alpha[j] * Q[i][j];
    }
    if (obj < best_obj - 1e-12) {
      best_obj = obj;
      best.alpha = alpha;
    }
  }
  // The bias is unique only when some alpha lies strictly inside (0, C).
  for (std::size_t i = 0; i < n && !best.has_free; ++i) {
    if (best.alpha[i] <= 1e-7 || best.alpha[i] >= C - 1e-7) continue;
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += best.alpha[j] * y[j] * rbf(x[i], x[j], gamma);
    best.bias = y[i] - s;
    best.has_free = true;
  }
  return best;
}

}  // namespace oracle
