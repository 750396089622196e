#include "flowgen/kernels.hpp"

#include <cmath>

// Straight-line serial implementations. Reductions walk the same fixed-size
// blocks as the parallel kernels so the two paths agree bit for bit.

namespace flowgen {
namespace refk {

void add(const double* a, const double* b, double* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void smul(const double* a, double s, double* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void silu(const double* x, double* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = x[i] * (1.0 / (1.0 + std::exp(-x[i])));
}

double sum(const double* x, int64_t n) {
    double total = 0.0;
    for (int64_t lo = 0; lo < n; lo += kern::kReduceBlock) {
        int64_t hi = lo + kern::kReduceBlock < n ? lo + kern::kReduceBlock : n;
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) s += x[i];
        total += s;
    }
    return total;
}

double sumsq_diff(const double* a, const double* b, int64_t n) {
    double total = 0.0;
    for (int64_t lo = 0; lo < n; lo += kern::kReduceBlock) {
        int64_t hi = lo + kern::kReduceBlock < n ? lo + kern::kReduceBlock : n;
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) {
            double d = a[i] - b[i];
            s += d * d;
        }
        total += s;
    }
    return total;
}

void matmul(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = 0.0;
        for (int l = 0; l < k; ++l) {
            double a = A[static_cast<int64_t>(i) * k + l];
            const double* brow = B + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

void conv2d(const double* x, const double* w, const double* bias, double* y,
            int B, int Ci, int H, int W, int Co, int K, int stride) {
    int pad = (K - 1) / 2;
    int Ho = kern::conv_out_dim(H, K, stride);
    int Wo = kern::conv_out_dim(W, K, stride);
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co)
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    double s = bias ? bias[co] : 0.0;
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int kh = 0; kh < K; ++kh)
                            for (int kw = 0; kw < K; ++kw) {
                                int hi = ho * stride - pad + kh;
                                int wi = wo * stride - pad + kw;
                                if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
                                s += x[((static_cast<int64_t>(b) * Ci + ci) * H + hi) * W + wi] *
                                     w[((static_cast<int64_t>(co) * Ci + ci) * K + kh) * K + kw];
                            }
                    y[((static_cast<int64_t>(b) * Co + co) * Ho + ho) * Wo + wo] = s;
                }
}

void conv2d_bwd_x(const double* g, const double* w, double* dx,
                  int B, int Ci, int H, int W, int Co, int K, int stride) {
    int pad = (K - 1) / 2;
    int Ho = kern::conv_out_dim(H, K, stride);
    int Wo = kern::conv_out_dim(W, K, stride);
    for (int b = 0; b < B; ++b)
        for (int ci = 0; ci < Ci; ++ci)
            for (int hi = 0; hi < H; ++hi)
                for (int wi = 0; wi < W; ++wi) {
                    double s = 0.0;
                    for (int co = 0; co < Co; ++co)
                        for (int kh = 0; kh < K; ++kh)
                            for (int kw = 0; kw < K; ++kw) {
                                int num_h = hi + pad - kh;
                                int num_w = wi + pad - kw;
                                if (num_h < 0 || num_w < 0) continue;
                                if (num_h % stride != 0 || num_w % stride != 0) continue;
                                int ho = num_h / stride, wo = num_w / stride;
                                if (ho >= Ho || wo >= Wo) continue;
                                s += g[((static_cast<int64_t>(b) * Co + co) * Ho + ho) * Wo + wo] *
                                     w[((static_cast<int64_t>(co) * Ci + ci) * K + kh) * K + kw];
                            }
                    dx[((static_cast<int64_t>(b) * Ci + ci) * H + hi) * W + wi] += s;
                }
}

void conv2d_bwd_w(const double* x, const double* g, double* dw,
                  int B, int Ci, int H, int W, int Co, int K, int stride) {
    int pad = (K - 1) / 2;
    int Ho = kern::conv_out_dim(H, K, stride);
    int Wo = kern::conv_out_dim(W, K, stride);
    for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
            for (int kh = 0; kh < K; ++kh)
                for (int kw = 0; kw < K; ++kw) {
                    double s = 0.0;
                    for (int b = 0; b < B; ++b)
                        for (int ho = 0; ho < Ho; ++ho)
                            for (int wo = 0; wo < Wo; ++wo) {
                                int hi = ho * stride - pad + kh;
                                int wi = wo * stride - pad + kw;
                                if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
                                s += g[((static_cast<int64_t>(b) * Co + co) * Ho + ho) * Wo + wo] *
                                     x[((static_cast<int64_t>(b) * Ci + ci) * H + hi) * W + wi];
                            }
                    dw[((static_cast<int64_t>(co) * Ci + ci) * K + kh) * K + kw] += s;
                }
}

void upsample2x(const double* x, double* y, int B, int C, int H, int W) {
    for (int64_t p = 0; p < static_cast<int64_t>(B) * C; ++p)
        for (int h = 0; h < 2 * H; ++h)
            for (int w = 0; w < 2 * W; ++w)
                y[(p * 2 * H + h) * 2 * W + w] = x[(p * H + h / 2) * W + w / 2];
}

void group_norm(const double* x, const double* gamma, const double* beta, double* y,
                double* save_mean, double* save_invstd,
                int B, int C, int HW, int G, double eps) {
    int cg = C / G;
    int64_t m = static_cast<int64_t>(cg) * HW;
    for (int b = 0; b < B; ++b)
        for (int g = 0; g < G; ++g) {
            int64_t off = (static_cast<int64_t>(b) * C + static_cast<int64_t>(g) * cg) * HW;
            double s = 0.0;
            for (int64_t i = 0; i < m; ++i) s += x[off + i];
            double mean = s / static_cast<double>(m);
            double v = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                double d = x[off + i] - mean;
                v += d * d;
            }
            double invstd = 1.0 / std::sqrt(v / static_cast<double>(m) + eps);
            save_mean[b * G + g] = mean;
            save_invstd[b * G + g] = invstd;
            for (int c = 0; c < cg; ++c)
                for (int i = 0; i < HW; ++i) {
                    int64_t j = off + static_cast<int64_t>(c) * HW + i;
                    y[j] = (x[j] - mean) * invstd * gamma[g * cg + c] + beta[g * cg + c];
                }
        }
}

}  // namespace refk
}  // namespace flowgen
