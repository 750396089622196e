#pragma once

#include "flowgen/record.hpp"
#include "flowgen/tensor.hpp"

// The op catalog. Each op computes its value, propagates forward-mode
// tangents when an input carries one, and appends itself to the record when
// an input is tracked. Outputs are checked finite; a NaN/Inf raises.

namespace flowgen {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor div(const Tensor& a, const Tensor& b);  // elementwise
Tensor smul(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);                                  // [m,k]·[k,n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);                 // x[B,I]·w[I,O] + b[O]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride);     // zero pad (K-1)/2
Tensor upsample_nearest2x(const Tensor& x);
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps);
Tensor silu(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_channels(const Tensor& a, const Tensor& b);

Tensor mean(const Tensor& x);                  // rank-0
Tensor sum(const Tensor& x);                   // rank-0
Tensor mse(const Tensor& a, const Tensor& b);  // rank-0

// Sinusoidal features of a rank-1 tensor of scalars: [sin(w_k t) | cos(w_k t)]
// with dim/2 frequencies log-spaced from 1 to 10000.
Tensor time_embed(const Tensor& t, int dim);

// x[B,C,H,W] + s[B,C] broadcast over the spatial extent.
Tensor channel_bias(const Tensor& x, const Tensor& s);

// Internal: forward compute shared by the op layer and Record::replay.
Tensor exec_op(OpKind kind, const std::vector<Tensor>& ins, const OpAttrs& attrs,
               std::vector<Tensor>* saved);

std::vector<double> time_embed_freqs(int dim);

}  // namespace flowgen
