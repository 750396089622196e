#include "flowgen/kernels.hpp"

#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flowgen {

void set_num_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace kern {

// OpenMP is only worth spinning up above a size threshold; results do not
// depend on which path runs.
inline constexpr int64_t kParMin = 4096;

static inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

void add(const double* a, const double* b, double* out, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParMin)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParMin)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParMin)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void div(const double* a, const double* b, double* out, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParMin)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}

void smul(const double* a, double s, double* out, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParMin)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void silu(const double* x, double* out, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParMin)
    for (int64_t i = 0; i < n; ++i) out[i] = x[i] * sigmoid(x[i]);
}

void axpy(double alpha, const double* x, double* acc, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParMin)
    for (int64_t i = 0; i < n; ++i) acc[i] += alpha * x[i];
}

void mul_acc(const double* a, const double* b, double* acc, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParMin)
    for (int64_t i = 0; i < n; ++i) acc[i] += a[i] * b[i];
}

void div_acc(const double* a, const double* b, double* acc, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParMin)
    for (int64_t i = 0; i < n; ++i) acc[i] += a[i] / b[i];
}

void div2_neg_acc(const double* g, const double* a, const double* b, double* acc, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParMin)
    for (int64_t i = 0; i < n; ++i) acc[i] -= g[i] * a[i] / (b[i] * b[i]);
}

void silu_bwd_acc(const double* x, const double* g, double* acc, int64_t n) {
#pragma omp parallel for schedule(static) if (n >= kParMin)
    for (int64_t i = 0; i < n; ++i) {
        double s = sigmoid(x[i]);
        acc[i] += g[i] * (s + x[i] * s * (1.0 - s));
    }
}

// ---------------------------------------------------------------------------
// reductions: fixed-size blocks summed in index order
// ---------------------------------------------------------------------------

namespace {

template <class BlockSum>
double blocked_reduce(int64_t n, BlockSum block_sum) {
    if (n == 0) return 0.0;
    int64_t nb = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<double> partial(static_cast<size_t>(nb));
#pragma omp parallel for schedule(static) if (nb > 1)
    for (int64_t b = 0; b < nb; ++b) {
        int64_t lo = b * kReduceBlock;
        int64_t hi = lo + kReduceBlock < n ? lo + kReduceBlock : n;
        partial[static_cast<size_t>(b)] = block_sum(lo, hi);
    }
    double total = 0.0;
    for (int64_t b = 0; b < nb; ++b) total += partial[static_cast<size_t>(b)];
    return total;
}

}  // namespace

double sum(const double* x, int64_t n) {
    return blocked_reduce(n, [&](int64_t lo, int64_t hi) {
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) s += x[i];
        return s;
    });
}

double dot(const double* a, const double* b, int64_t n) {
    return blocked_reduce(n, [&](int64_t lo, int64_t hi) {
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) s += a[i] * b[i];
        return s;
    });
}

double sumsq_diff(const double* a, const double* b, int64_t n) {
    return blocked_reduce(n, [&](int64_t lo, int64_t hi) {
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) {
            double d = a[i] - b[i];
            s += d * d;
        }
        return s;
    });
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

void matmul(const double* A, const double* B, double* C, int m, int k, int n) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * k * n >= kParMin)
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = 0.0;
        const double* arow = A + static_cast<int64_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            double a = arow[l];
            const double* brow = B + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

void matmul_nt_acc(const double* A, const double* B, double* C, int m, int q, int p) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * q * p >= kParMin)
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<int64_t>(i) * q;
        double* crow = C + static_cast<int64_t>(i) * p;
        for (int j = 0; j < p; ++j) {
            const double* brow = B + static_cast<int64_t>(j) * q;
            double s = 0.0;
            for (int l = 0; l < q; ++l) s += arow[l] * brow[l];
            crow[j] += s;
        }
    }
}

void matmul_tn_acc(const double* A, const double* B, double* C, int q, int m, int p) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * q * p >= kParMin)
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<int64_t>(i) * p;
        for (int l = 0; l < q; ++l) {
            double a = A[static_cast<int64_t>(l) * m + i];
            const double* brow = B + static_cast<int64_t>(l) * p;
            for (int j = 0; j < p; ++j) crow[j] += a * brow[j];
        }
    }
}

void add_row_bias(double* y, const double* b, int rows, int cols) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(rows) * cols >= kParMin)
    for (int i = 0; i < rows; ++i) {
        double* row = y + static_cast<int64_t>(i) * cols;
        for (int j = 0; j < cols; ++j) row[j] += b[j];
    }
}

void col_sum_acc(const double* g, double* acc, int rows, int cols) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(rows) * cols >= kParMin)
    for (int j = 0; j < cols; ++j) {
        double s = 0.0;
        for (int i = 0; i < rows; ++i) s += g[static_cast<int64_t>(i) * cols + j];
        acc[j] += s;
    }
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

int conv_out_dim(int in, int K, int stride) {
    int pad = (K - 1) / 2;
    return (in + 2 * pad - K) / stride + 1;
}

void conv2d(const double* x, const double* w, const double* bias, double* y,
            int B, int Ci, int H, int W, int Co, int K, int stride) {
    int pad = (K - 1) / 2;
    int Ho = conv_out_dim(H, K, stride);
    int Wo = conv_out_dim(W, K, stride);
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Co; ++co) {
            const double* wc = w + static_cast<int64_t>(co) * Ci * K * K;
            double* yc = y + (static_cast<int64_t>(b) * Co + co) * Ho * Wo;
            double bv = bias ? bias[co] : 0.0;
            for (int ho = 0; ho < Ho; ++ho) {
                for (int wo = 0; wo < Wo; ++wo) {
                    double s = bv;
                    for (int ci = 0; ci < Ci; ++ci) {
                        const double* xc = x + (static_cast<int64_t>(b) * Ci + ci) * H * W;
                        const double* wk = wc + static_cast<int64_t>(ci) * K * K;
                        for (int kh = 0; kh < K; ++kh) {
                            int hi = ho * stride - pad + kh;
                            if (hi < 0 || hi >= H) continue;
                            for (int kw = 0; kw < K; ++kw) {
                                int wi = wo * stride - pad + kw;
                                if (wi < 0 || wi >= W) continue;
                                s += xc[static_cast<int64_t>(hi) * W + wi] * wk[kh * K + kw];
                            }
                        }
                    }
                    yc[static_cast<int64_t>(ho) * Wo + wo] = s;
                }
            }
        }
    }
}

// gather form: one thread owns each (b, ci) input plane
void conv2d_bwd_x(const double* g, const double* w, double* dx,
                  int B, int Ci, int H, int W, int Co, int K, int stride) {
    int pad = (K - 1) / 2;
    int Ho = conv_out_dim(H, K, stride);
    int Wo = conv_out_dim(W, K, stride);
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int ci = 0; ci < Ci; ++ci) {
            double* dxc = dx + (static_cast<int64_t>(b) * Ci + ci) * H * W;
            for (int hi = 0; hi < H; ++hi) {
                for (int wi = 0; wi < W; ++wi) {
                    double s = 0.0;
                    for (int co = 0; co < Co; ++co) {
                        const double* gc = g + (static_cast<int64_t>(b) * Co + co) * Ho * Wo;
                        const double* wk = w + (static_cast<int64_t>(co) * Ci + ci) * K * K;
                        for (int kh = 0; kh < K; ++kh) {
                            int num = hi + pad - kh;
                            if (num < 0 || num % stride != 0) continue;
                            int ho = num / stride;
                            if (ho >= Ho) continue;
                            for (int kw = 0; kw < K; ++kw) {
                                int numw = wi + pad - kw;
                                if (numw < 0 || numw % stride != 0) continue;
                                int wo = numw / stride;
                                if (wo >= Wo) continue;
                                s += gc[static_cast<int64_t>(ho) * Wo + wo] * wk[kh * K + kw];
                            }
                        }
                    }
                    dxc[static_cast<int64_t>(hi) * W + wi] += s;
                }
            }
        }
    }
}

// one thread owns each (co, ci) weight plane
void conv2d_bwd_w(const double* x, const double* g, double* dw,
                  int B, int Ci, int H, int W, int Co, int K, int stride) {
    int pad = (K - 1) / 2;
    int Ho = conv_out_dim(H, K, stride);
    int Wo = conv_out_dim(W, K, stride);
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < Co; ++co) {
        for (int ci = 0; ci < Ci; ++ci) {
            double* dwk = dw + (static_cast<int64_t>(co) * Ci + ci) * K * K;
            for (int kh = 0; kh < K; ++kh) {
                for (int kw = 0; kw < K; ++kw) {
                    double s = 0.0;
                    for (int b = 0; b < B; ++b) {
                        const double* gc = g + (static_cast<int64_t>(b) * Co + co) * Ho * Wo;
                        const double* xc = x + (static_cast<int64_t>(b) * Ci + ci) * H * W;
                        for (int ho = 0; ho < Ho; ++ho) {
                            int hi = ho * stride - pad + kh;
                            if (hi < 0 || hi >= H) continue;
                            for (int wo = 0; wo < Wo; ++wo) {
                                int wi = wo * stride - pad + kw;
                                if (wi < 0 || wi >= W) continue;
                                s += gc[static_cast<int64_t>(ho) * Wo + wo] * xc[static_cast<int64_t>(hi) * W + wi];
                            }
                        }
                    }
                    dwk[kh * K + kw] += s;
                }
            }
        }
    }
}

void conv2d_bwd_b(const double* g, double* db, int B, int Co, int Ho, int Wo) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < Co; ++co) {
        double s = 0.0;
        for (int b = 0; b < B; ++b) {
            const double* gc = g + (static_cast<int64_t>(b) * Co + co) * Ho * Wo;
            for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) s += gc[i];
        }
        db[co] += s;
    }
}

// ---------------------------------------------------------------------------
// nearest-neighbor 2x
// ---------------------------------------------------------------------------

void upsample2x(const double* x, double* y, int B, int C, int H, int W) {
    int64_t planes = static_cast<int64_t>(B) * C;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
        const double* xp = x + p * H * W;
        double* yp = y + p * 4 * H * W;
        for (int h = 0; h < H; ++h) {
            for (int w = 0; w < W; ++w) {
                double v = xp[static_cast<int64_t>(h) * W + w];
                int64_t base = (static_cast<int64_t>(2 * h) * 2 * W) + 2 * w;
                yp[base] = v;
                yp[base + 1] = v;
                yp[base + 2 * W] = v;
                yp[base + 2 * W + 1] = v;
            }
        }
    }
}

void upsample2x_bwd(const double* g, double* dx, int B, int C, int H, int W) {
    int64_t planes = static_cast<int64_t>(B) * C;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
        const double* gp = g + p * 4 * H * W;
        double* dxp = dx + p * H * W;
        for (int h = 0; h < H; ++h) {
            for (int w = 0; w < W; ++w) {
                int64_t base = (static_cast<int64_t>(2 * h) * 2 * W) + 2 * w;
                dxp[static_cast<int64_t>(h) * W + w] +=
                    gp[base] + gp[base + 1] + gp[base + 2 * W] + gp[base + 2 * W + 1];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// group norm
// ---------------------------------------------------------------------------

void group_norm(const double* x, const double* gamma, const double* beta, double* y,
                double* save_mean, double* save_invstd,
                int B, int C, int HW, int G, double eps) {
    int cg = C / G;
    int64_t m = static_cast<int64_t>(cg) * HW;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int g = 0; g < G; ++g) {
            const double* xg = x + (static_cast<int64_t>(b) * C + static_cast<int64_t>(g) * cg) * HW;
            double s = 0.0;
            for (int64_t i = 0; i < m; ++i) s += xg[i];
            double mean = s / static_cast<double>(m);
            double v = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                double d = xg[i] - mean;
                v += d * d;
            }
            double invstd = 1.0 / std::sqrt(v / static_cast<double>(m) + eps);
            save_mean[b * G + g] = mean;
            save_invstd[b * G + g] = invstd;
            double* yg = y + (static_cast<int64_t>(b) * C + static_cast<int64_t>(g) * cg) * HW;
            for (int c = 0; c < cg; ++c) {
                double ga = gamma[g * cg + c];
                double be = beta[g * cg + c];
                const double* xc = xg + static_cast<int64_t>(c) * HW;
                double* yc = yg + static_cast<int64_t>(c) * HW;
                for (int i = 0; i < HW; ++i) yc[i] = (xc[i] - mean) * invstd * ga + be;
            }
        }
    }
}

void group_norm_bwd(const double* x, const double* gamma, const double* mean, const double* invstd,
                    const double* g, double* dx, double* dgamma, double* dbeta,
                    int B, int C, int HW, int G) {
    int cg = C / G;
    int64_t m = static_cast<int64_t>(cg) * HW;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int gi = 0; gi < G; ++gi) {
            int64_t off = (static_cast<int64_t>(b) * C + static_cast<int64_t>(gi) * cg) * HW;
            const double* xg = x + off;
            const double* gg = g + off;
            double mu = mean[b * G + gi];
            double inv = invstd[b * G + gi];
            double s1 = 0.0, s2 = 0.0;
            for (int c = 0; c < cg; ++c) {
                double ga = gamma[gi * cg + c];
                for (int i = 0; i < HW; ++i) {
                    double gv = gg[static_cast<int64_t>(c) * HW + i] * ga;
                    s1 += gv;
                    s2 += gv * (xg[static_cast<int64_t>(c) * HW + i] - mu) * inv;
                }
            }
            double inv_m = 1.0 / static_cast<double>(m);
            double* dxg = dx + off;
            for (int c = 0; c < cg; ++c) {
                double ga = gamma[gi * cg + c];
                for (int i = 0; i < HW; ++i) {
                    double xh = (xg[static_cast<int64_t>(c) * HW + i] - mu) * inv;
                    double gv = gg[static_cast<int64_t>(c) * HW + i] * ga;
                    dxg[static_cast<int64_t>(c) * HW + i] += inv * (gv - s1 * inv_m - xh * s2 * inv_m);
                }
            }
        }
    }
    // per-channel sums, one thread per channel: deterministic order over (b, hw)
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        int gi = c / cg;
        double dg = 0.0, db = 0.0;
        for (int b = 0; b < B; ++b) {
            int64_t off = (static_cast<int64_t>(b) * C + c) * HW;
            double mu = mean[b * G + gi];
            double inv = invstd[b * G + gi];
            for (int i = 0; i < HW; ++i) {
                double gv = g[off + i];
                dg += gv * (x[off + i] - mu) * inv;
                db += gv;
            }
        }
        dgamma[c] += dg;
        dbeta[c] += db;
    }
}

void group_norm_jvp(const double* x, const double* gamma, const double* mean, const double* invstd,
                    const double* tx, const double* tgamma, const double* tbeta, double* ty,
                    int B, int C, int HW, int G) {
    int cg = C / G;
    int64_t m = static_cast<int64_t>(cg) * HW;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int gi = 0; gi < G; ++gi) {
            int64_t off = (static_cast<int64_t>(b) * C + static_cast<int64_t>(gi) * cg) * HW;
            const double* xg = x + off;
            double mu = mean[b * G + gi];
            double inv = invstd[b * G + gi];
            double dmu = 0.0, dvar = 0.0;
            if (tx) {
                const double* txg = tx + off;
                for (int64_t i = 0; i < m; ++i) dmu += txg[i];
                dmu /= static_cast<double>(m);
                for (int64_t i = 0; i < m; ++i) dvar += (xg[i] - mu) * (txg[i] - dmu);
                dvar *= 2.0 / static_cast<double>(m);
            }
            double dinv = -0.5 * inv * inv * inv * dvar;
            double* tyg = ty + off;
            for (int c = 0; c < cg; ++c) {
                double ga = gamma[gi * cg + c];
                double tga = tgamma ? tgamma[gi * cg + c] : 0.0;
                double tbe = tbeta ? tbeta[gi * cg + c] : 0.0;
                for (int i = 0; i < HW; ++i) {
                    int64_t j = static_cast<int64_t>(c) * HW + i;
                    double xc = xg[j] - mu;
                    double xh = xc * inv;
                    double dxh = xc * dinv;
                    if (tx) dxh += (tx[off + j] - dmu) * inv;
                    tyg[j] = ga * dxh + tga * xh + tbe;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// channel bias
// ---------------------------------------------------------------------------

void channel_bias(const double* x, const double* s, double* y, int B, int C, int HW) {
    int64_t planes = static_cast<int64_t>(B) * C;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
        double sv = s[p];
        const double* xp = x + p * HW;
        double* yp = y + p * HW;
        for (int i = 0; i < HW; ++i) yp[i] = xp[i] + sv;
    }
}

void channel_bias_bwd_s(const double* g, double* ds, int B, int C, int HW) {
    int64_t planes = static_cast<int64_t>(B) * C;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
        const double* gp = g + p * HW;
        double s = 0.0;
        for (int i = 0; i < HW; ++i) s += gp[i];
        ds[p] += s;
    }
}

}  // namespace kern
}  // namespace flowgen
