#pragma once

#include <cstdint>

// Numeric kernels behind the op catalog. `kern` holds the OpenMP versions
// used everywhere; `refk` holds a plain serial reference with identical
// signatures, kept for tests and the kernel benchmark.
//
// Every kernel is bit-deterministic regardless of thread count: work is
// split over output elements (each computed by one thread with a fixed
// inner loop order), and full reductions accumulate fixed-size blocks in
// index order.

namespace flowgen {

void set_num_threads(int n);  // no-op for n <= 0
int max_threads();

namespace kern {

// reduction block size; part of the summation semantics, not a tuning knob
inline constexpr int64_t kReduceBlock = 4096;

// ---- elementwise ----
void add(const double* a, const double* b, double* out, int64_t n);
void sub(const double* a, const double* b, double* out, int64_t n);
void mul(const double* a, const double* b, double* out, int64_t n);
void div(const double* a, const double* b, double* out, int64_t n);
void smul(const double* a, double s, double* out, int64_t n);
void silu(const double* x, double* out, int64_t n);

// accumulating forms used by backward passes
void axpy(double alpha, const double* x, double* acc, int64_t n);        // acc += alpha*x
void mul_acc(const double* a, const double* b, double* acc, int64_t n);  // acc += a*b
void div_acc(const double* a, const double* b, double* acc, int64_t n);  // acc += a/b
void div2_neg_acc(const double* g, const double* a, const double* b, double* acc, int64_t n);  // acc -= g*a/b^2
void silu_bwd_acc(const double* x, const double* g, double* acc, int64_t n);  // acc += g*silu'(x)

// ---- reductions ----
double sum(const double* x, int64_t n);
double dot(const double* a, const double* b, int64_t n);
double sumsq_diff(const double* a, const double* b, int64_t n);  // sum (a-b)^2

// ---- dense ----
void matmul(const double* A, const double* B, double* C, int m, int k, int n);            // C = A[m,k]·B[k,n]
void matmul_nt_acc(const double* A, const double* B, double* C, int m, int q, int p);     // C[m,p] += A[m,q]·B[p,q]^T
void matmul_tn_acc(const double* A, const double* B, double* C, int q, int m, int p);     // C[m,p] += A[q,m]^T·B[q,p]
void add_row_bias(double* y, const double* b, int rows, int cols);                        // y[i,:] += b
void col_sum_acc(const double* g, double* acc, int rows, int cols);                       // acc[j] += sum_i g[i,j]

// ---- conv2d, zero padding (K-1)/2, stride 1 or 2 ----
void conv2d(const double* x, const double* w, const double* bias, double* y,
            int B, int Ci, int H, int W, int Co, int K, int stride);
void conv2d_bwd_x(const double* g, const double* w, double* dx,
                  int B, int Ci, int H, int W, int Co, int K, int stride);
void conv2d_bwd_w(const double* x, const double* g, double* dw,
                  int B, int Ci, int H, int W, int Co, int K, int stride);
void conv2d_bwd_b(const double* g, double* db, int B, int Co, int Ho, int Wo);

// ---- nearest-neighbor 2x resize ----
void upsample2x(const double* x, double* y, int B, int C, int H, int W);
void upsample2x_bwd(const double* g, double* dx, int B, int C, int H, int W);

// ---- group norm ----
// saves per-(batch,group) mean and 1/sqrt(var+eps) for the backward pass
void group_norm(const double* x, const double* gamma, const double* beta, double* y,
                double* save_mean, double* save_invstd,
                int B, int C, int HW, int G, double eps);
void group_norm_bwd(const double* x, const double* gamma, const double* mean, const double* invstd,
                    const double* g, double* dx, double* dgamma, double* dbeta,
                    int B, int C, int HW, int G);
// forward-mode rule; tx/tgamma/tbeta may be null (zero tangent)
void group_norm_jvp(const double* x, const double* gamma, const double* mean, const double* invstd,
                    const double* tx, const double* tgamma, const double* tbeta, double* ty,
                    int B, int C, int HW, int G);

// ---- per-sample channel bias (time conditioning) ----
void channel_bias(const double* x, const double* s, double* y, int B, int C, int HW);      // y = x + s[b,c]
void channel_bias_bwd_s(const double* g, double* ds, int B, int C, int HW);                // ds[b,c] += sum_hw g

int conv_out_dim(int in, int K, int stride);

}  // namespace kern

// Serial reference implementations (testing / benchmark baseline).
namespace refk {

void add(const double* a, const double* b, double* out, int64_t n);
void sub(const double* a, const double* b, double* out, int64_t n);
void mul(const double* a, const double* b, double* out, int64_t n);
void smul(const double* a, double s, double* out, int64_t n);
void silu(const double* x, double* out, int64_t n);
double sum(const double* x, int64_t n);
double sumsq_diff(const double* a, const double* b, int64_t n);
void matmul(const double* A, const double* B, double* C, int m, int k, int n);
void conv2d(const double* x, const double* w, const double* bias, double* y,
            int B, int Ci, int H, int W, int Co, int K, int stride);
void conv2d_bwd_x(const double* g, const double* w, double* dx,
                  int B, int Ci, int H, int W, int Co, int K, int stride);
void conv2d_bwd_w(const double* x, const double* g, double* dw,
                  int B, int Ci, int H, int W, int Co, int K, int stride);
void upsample2x(const double* x, double* y, int B, int C, int H, int W);
void group_norm(const double* x, const double* gamma, const double* beta, double* y,
                double* save_mean, double* save_invstd,
                int B, int C, int HW, int G, double eps);

}  // namespace refk

}  // namespace flowgen
