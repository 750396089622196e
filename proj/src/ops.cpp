#include "flowgen/ops.hpp"

#include <cmath>

#include "flowgen/kernels.hpp"

namespace flowgen {

namespace {

using Buf = std::vector<double>;

Tensor wrap(Shape shape, Buf data) {
    return Tensor::make(std::move(shape), std::make_shared<Buf>(std::move(data)));
}

bool is_image(const Tensor& t) { return t.rank() == 4; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(same_shape(a.shape(), b.shape()),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// forward-mode rules
// ---------------------------------------------------------------------------

const double* tan_or_null(const Tensor& t) { return t.has_tangent() ? t.tangent_data() : nullptr; }

Buf jvp_op(OpKind kind, const std::vector<Tensor>& ins, const OpAttrs& at,
           const Tensor& out, const std::vector<Tensor>& saved) {
    Buf ty(static_cast<size_t>(out.size()), 0.0);
    int64_t n = out.size();
    switch (kind) {
        case OpKind::Add: {
            if (ins[0].has_tangent()) kern::axpy(1.0, ins[0].tangent_data(), ty.data(), n);
            if (ins[1].has_tangent()) kern::axpy(1.0, ins[1].tangent_data(), ty.data(), n);
            break;
        }
        case OpKind::Sub: {
            if (ins[0].has_tangent()) kern::axpy(1.0, ins[0].tangent_data(), ty.data(), n);
            if (ins[1].has_tangent()) kern::axpy(-1.0, ins[1].tangent_data(), ty.data(), n);
            break;
        }
        case OpKind::Mul: {
            if (ins[0].has_tangent()) kern::mul_acc(ins[0].tangent_data(), ins[1].data(), ty.data(), n);
            if (ins[1].has_tangent()) kern::mul_acc(ins[1].tangent_data(), ins[0].data(), ty.data(), n);
            break;
        }
        case OpKind::Div: {
            if (ins[0].has_tangent()) kern::div_acc(ins[0].tangent_data(), ins[1].data(), ty.data(), n);
            if (ins[1].has_tangent())
                kern::div2_neg_acc(ins[1].tangent_data(), ins[0].data(), ins[1].data(), ty.data(), n);
            break;
        }
        case OpKind::SMul: {
            if (ins[0].has_tangent()) kern::axpy(at.scalar, ins[0].tangent_data(), ty.data(), n);
            break;
        }
        case OpKind::MatMul: {
            int m = ins[0].dim(0), k = ins[0].dim(1), p = ins[1].dim(1);
            Buf tmp(static_cast<size_t>(n));
            if (ins[0].has_tangent()) {
                kern::matmul(ins[0].tangent_data(), ins[1].data(), tmp.data(), m, k, p);
                kern::axpy(1.0, tmp.data(), ty.data(), n);
            }
            if (ins[1].has_tangent()) {
                kern::matmul(ins[0].data(), ins[1].tangent_data(), tmp.data(), m, k, p);
                kern::axpy(1.0, tmp.data(), ty.data(), n);
            }
            break;
        }
        case OpKind::Linear: {
            int rows = ins[0].dim(0), in_dim = ins[0].dim(1), out_dim = ins[1].dim(1);
            Buf tmp(static_cast<size_t>(n));
            if (ins[0].has_tangent()) {
                kern::matmul(ins[0].tangent_data(), ins[1].data(), tmp.data(), rows, in_dim, out_dim);
                kern::axpy(1.0, tmp.data(), ty.data(), n);
            }
            if (ins[1].has_tangent()) {
                kern::matmul(ins[0].data(), ins[1].tangent_data(), tmp.data(), rows, in_dim, out_dim);
                kern::axpy(1.0, tmp.data(), ty.data(), n);
            }
            if (ins[2].has_tangent()) kern::add_row_bias(ty.data(), ins[2].tangent_data(), rows, out_dim);
            break;
        }
        case OpKind::Conv2d: {
            const Tensor& x = ins[0];
            const Tensor& w = ins[1];
            int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
            int Co = w.dim(0), K = w.dim(2);
            Buf tmp(static_cast<size_t>(n));
            if (x.has_tangent()) {
                kern::conv2d(x.tangent_data(), w.data(), nullptr, tmp.data(), B, Ci, H, W, Co, K, at.stride);
                kern::axpy(1.0, tmp.data(), ty.data(), n);
            }
            if (w.has_tangent()) {
                kern::conv2d(x.data(), w.tangent_data(), nullptr, tmp.data(), B, Ci, H, W, Co, K, at.stride);
                kern::axpy(1.0, tmp.data(), ty.data(), n);
            }
            if (ins.size() > 2 && ins[2].defined() && ins[2].has_tangent()) {
                int Ho = out.dim(2), Wo = out.dim(3);
                const double* tb = ins[2].tangent_data();
                for (int b = 0; b < B; ++b)
                    for (int co = 0; co < Co; ++co) {
                        double* p = ty.data() + (static_cast<int64_t>(b) * Co + co) * Ho * Wo;
                        for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) p[i] += tb[co];
                    }
            }
            break;
        }
        case OpKind::Upsample2x: {
            if (ins[0].has_tangent())
                kern::upsample2x(ins[0].tangent_data(), ty.data(), ins[0].dim(0), ins[0].dim(1), ins[0].dim(2),
                                 ins[0].dim(3));
            break;
        }
        case OpKind::GroupNorm: {
            const Tensor& x = ins[0];
            int B = x.dim(0), C = x.dim(1);
            int HW = static_cast<int>(x.size() / (static_cast<int64_t>(B) * C));
            kern::group_norm_jvp(x.data(), ins[1].data(), saved[0].data(), saved[1].data(), tan_or_null(x),
                                 tan_or_null(ins[1]), tan_or_null(ins[2]), ty.data(), B, C, HW, at.groups);
            break;
        }
        case OpKind::Silu: {
            if (ins[0].has_tangent()) kern::silu_bwd_acc(ins[0].data(), ins[0].tangent_data(), ty.data(), n);
            break;
        }
        case OpKind::Reshape: {
            if (ins[0].has_tangent()) kern::axpy(1.0, ins[0].tangent_data(), ty.data(), n);
            break;
        }
        case OpKind::ConcatCh: {
            const Tensor& a = ins[0];
            const Tensor& b = ins[1];
            int B = a.dim(0), C1 = a.dim(1), C2 = b.dim(1);
            int64_t hw = a.size() / (static_cast<int64_t>(B) * C1);
            for (int bi = 0; bi < B; ++bi) {
                double* dst = ty.data() + static_cast<int64_t>(bi) * (C1 + C2) * hw;
                if (a.has_tangent())
                    kern::axpy(1.0, a.tangent_data() + static_cast<int64_t>(bi) * C1 * hw, dst, C1 * hw);
                if (b.has_tangent())
                    kern::axpy(1.0, b.tangent_data() + static_cast<int64_t>(bi) * C2 * hw, dst + C1 * hw, C2 * hw);
            }
            break;
        }
        case OpKind::Mean: {
            if (ins[0].has_tangent())
                ty[0] = kern::sum(ins[0].tangent_data(), ins[0].size()) / static_cast<double>(ins[0].size());
            break;
        }
        case OpKind::Sum: {
            if (ins[0].has_tangent()) ty[0] = kern::sum(ins[0].tangent_data(), ins[0].size());
            break;
        }
        case OpKind::Mse: {
            int64_t m = ins[0].size();
            Buf d(static_cast<size_t>(m)), td(static_cast<size_t>(m), 0.0);
            kern::sub(ins[0].data(), ins[1].data(), d.data(), m);
            if (ins[0].has_tangent()) kern::axpy(1.0, ins[0].tangent_data(), td.data(), m);
            if (ins[1].has_tangent()) kern::axpy(-1.0, ins[1].tangent_data(), td.data(), m);
            ty[0] = 2.0 / static_cast<double>(m) * kern::dot(d.data(), td.data(), m);
            break;
        }
        case OpKind::TimeEmbed: {
            if (ins[0].has_tangent()) {
                auto freqs = time_embed_freqs(at.dim);
                int half = at.dim / 2;
                int B = static_cast<int>(ins[0].size());
                const double* t = ins[0].data();
                const double* tt = ins[0].tangent_data();
                for (int b = 0; b < B; ++b)
                    for (int k = 0; k < half; ++k) {
                        double w = freqs[static_cast<size_t>(k)];
                        ty[static_cast<size_t>(b) * at.dim + k] = w * std::cos(w * t[b]) * tt[b];
                        ty[static_cast<size_t>(b) * at.dim + half + k] = -w * std::sin(w * t[b]) * tt[b];
                    }
            }
            break;
        }
        case OpKind::ChannelBias: {
            const Tensor& x = ins[0];
            int B = x.dim(0), C = x.dim(1);
            int HW = static_cast<int>(x.size() / (static_cast<int64_t>(B) * C));
            if (x.has_tangent()) kern::axpy(1.0, x.tangent_data(), ty.data(), n);
            if (ins[1].has_tangent()) {
                const double* ts = ins[1].tangent_data();
                for (int64_t p = 0; p < static_cast<int64_t>(B) * C; ++p)
                    for (int i = 0; i < HW; ++i) ty[static_cast<size_t>(p * HW + i)] += ts[p];
            }
            break;
        }
        case OpKind::Leaf:
            break;
    }
    return ty;
}

// Appends the op to the record of any tracked input and propagates tangents.
Tensor finish(OpKind kind, std::vector<Tensor> ins, Tensor out, std::vector<Tensor> saved, OpAttrs attrs,
              const char* name) {
    check_finite(out, name);

    bool any_tangent = false;
    for (const auto& t : ins) any_tangent = any_tangent || t.has_tangent();
    if (any_tangent) {
        Buf ty = jvp_op(kind, ins, attrs, out, saved);
        if (!all_finite(ty.data(), static_cast<int64_t>(ty.size())))
            run_error(std::string(name) + ": non-finite tangent");
        out.set_tangent_buffer(std::make_shared<Buf>(std::move(ty)));
    }

    Record* rec = nullptr;
    for (const auto& t : ins) {
        if (!t.grad_tracked()) continue;
        if (rec && rec != t.record()) arg_error(std::string(name) + ": inputs belong to different records");
        rec = t.record();
    }
    if (rec) {
        Node node;
        node.kind = kind;
        node.attrs = attrs;
        node.saved = std::move(saved);
        node.output = out.detached();
        for (auto& t : ins) {
            node.in_ids.push_back(t.record() == rec ? t.node_id() : -1);
            node.inputs.push_back(t.detached());
        }
        int id = rec->append(std::move(node));
        out.set_autodiff(rec, id);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// forward compute (also used by Record::replay)
// ---------------------------------------------------------------------------

Tensor exec_op(OpKind kind, const std::vector<Tensor>& ins, const OpAttrs& at, std::vector<Tensor>* saved) {
    switch (kind) {
        case OpKind::Add: {
            Buf out(static_cast<size_t>(ins[0].size()));
            kern::add(ins[0].data(), ins[1].data(), out.data(), ins[0].size());
            return wrap(ins[0].shape(), std::move(out));
        }
        case OpKind::Sub: {
            Buf out(static_cast<size_t>(ins[0].size()));
            kern::sub(ins[0].data(), ins[1].data(), out.data(), ins[0].size());
            return wrap(ins[0].shape(), std::move(out));
        }
        case OpKind::Mul: {
            Buf out(static_cast<size_t>(ins[0].size()));
            kern::mul(ins[0].data(), ins[1].data(), out.data(), ins[0].size());
            return wrap(ins[0].shape(), std::move(out));
        }
        case OpKind::Div: {
            Buf out(static_cast<size_t>(ins[0].size()));
            kern::div(ins[0].data(), ins[1].data(), out.data(), ins[0].size());
            return wrap(ins[0].shape(), std::move(out));
        }
        case OpKind::SMul: {
            Buf out(static_cast<size_t>(ins[0].size()));
            kern::smul(ins[0].data(), at.scalar, out.data(), ins[0].size());
            return wrap(ins[0].shape(), std::move(out));
        }
        case OpKind::MatMul: {
            int m = ins[0].dim(0), k = ins[0].dim(1), p = ins[1].dim(1);
            Buf out(static_cast<size_t>(m) * p);
            kern::matmul(ins[0].data(), ins[1].data(), out.data(), m, k, p);
            return wrap({m, p}, std::move(out));
        }
        case OpKind::Linear: {
            int rows = ins[0].dim(0), in_dim = ins[0].dim(1), out_dim = ins[1].dim(1);
            Buf out(static_cast<size_t>(rows) * out_dim);
            kern::matmul(ins[0].data(), ins[1].data(), out.data(), rows, in_dim, out_dim);
            kern::add_row_bias(out.data(), ins[2].data(), rows, out_dim);
            return wrap({rows, out_dim}, std::move(out));
        }
        case OpKind::Conv2d: {
            const Tensor& x = ins[0];
            const Tensor& w = ins[1];
            int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
            int Co = w.dim(0), K = w.dim(2);
            int Ho = kern::conv_out_dim(H, K, at.stride), Wo = kern::conv_out_dim(W, K, at.stride);
            Buf out(static_cast<size_t>(B) * Co * Ho * Wo);
            const double* bias = (ins.size() > 2 && ins[2].defined()) ? ins[2].data() : nullptr;
            kern::conv2d(x.data(), w.data(), bias, out.data(), B, Ci, H, W, Co, K, at.stride);
            return wrap({B, Co, Ho, Wo}, std::move(out));
        }
        case OpKind::Upsample2x: {
            const Tensor& x = ins[0];
            int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            Buf out(static_cast<size_t>(x.size()) * 4);
            kern::upsample2x(x.data(), out.data(), B, C, H, W);
            return wrap({B, C, 2 * H, 2 * W}, std::move(out));
        }
        case OpKind::GroupNorm: {
            const Tensor& x = ins[0];
            int B = x.dim(0), C = x.dim(1);
            int HW = static_cast<int>(x.size() / (static_cast<int64_t>(B) * C));
            Buf out(static_cast<size_t>(x.size()));
            Buf smean(static_cast<size_t>(B) * at.groups), sinv(static_cast<size_t>(B) * at.groups);
            kern::group_norm(x.data(), ins[1].data(), ins[2].data(), out.data(), smean.data(), sinv.data(), B, C,
                             HW, at.groups, at.eps);
            if (saved) {
                saved->push_back(wrap({B, at.groups}, std::move(smean)));
                saved->push_back(wrap({B, at.groups}, std::move(sinv)));
            }
            return wrap(x.shape(), std::move(out));
        }
        case OpKind::Silu: {
            Buf out(static_cast<size_t>(ins[0].size()));
            kern::silu(ins[0].data(), out.data(), ins[0].size());
            return wrap(ins[0].shape(), std::move(out));
        }
        case OpKind::Reshape:
            return Tensor::make(at.shape, ins[0].buffer());
        case OpKind::ConcatCh: {
            const Tensor& a = ins[0];
            const Tensor& b = ins[1];
            int B = a.dim(0), C1 = a.dim(1), C2 = b.dim(1);
            int64_t hw = a.size() / (static_cast<int64_t>(B) * C1);
            Buf out(static_cast<size_t>((static_cast<int64_t>(B) * (C1 + C2) * hw)));
            for (int bi = 0; bi < B; ++bi) {
                double* dst = out.data() + static_cast<int64_t>(bi) * (C1 + C2) * hw;
                const double* pa = a.data() + static_cast<int64_t>(bi) * C1 * hw;
                const double* pb = b.data() + static_cast<int64_t>(bi) * C2 * hw;
                std::copy(pa, pa + C1 * hw, dst);
                std::copy(pb, pb + C2 * hw, dst + C1 * hw);
            }
            Shape s = a.shape();
            s[1] = C1 + C2;
            return wrap(std::move(s), std::move(out));
        }
        case OpKind::Mean:
            return Tensor::scalar(kern::sum(ins[0].data(), ins[0].size()) / static_cast<double>(ins[0].size()));
        case OpKind::Sum:
            return Tensor::scalar(kern::sum(ins[0].data(), ins[0].size()));
        case OpKind::Mse:
            return Tensor::scalar(kern::sumsq_diff(ins[0].data(), ins[1].data(), ins[0].size()) /
                                  static_cast<double>(ins[0].size()));
        case OpKind::TimeEmbed: {
            auto freqs = time_embed_freqs(at.dim);
            int half = at.dim / 2;
            int B = static_cast<int>(ins[0].size());
            Buf out(static_cast<size_t>(B) * at.dim);
            const double* t = ins[0].data();
            for (int b = 0; b < B; ++b)
                for (int k = 0; k < half; ++k) {
                    double w = freqs[static_cast<size_t>(k)];
                    out[static_cast<size_t>(b) * at.dim + k] = std::sin(w * t[b]);
                    out[static_cast<size_t>(b) * at.dim + half + k] = std::cos(w * t[b]);
                }
            return wrap({B, at.dim}, std::move(out));
        }
        case OpKind::ChannelBias: {
            const Tensor& x = ins[0];
            int B = x.dim(0), C = x.dim(1);
            int HW = static_cast<int>(x.size() / (static_cast<int64_t>(B) * C));
            Buf out(static_cast<size_t>(x.size()));
            kern::channel_bias(x.data(), ins[1].data(), out.data(), B, C, HW);
            return wrap(x.shape(), std::move(out));
        }
        case OpKind::Leaf:
            return ins[0];
    }
    arg_error("exec_op: unknown op kind");
}

// ---------------------------------------------------------------------------
// public catalog
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    return finish(OpKind::Add, {a, b}, exec_op(OpKind::Add, {a, b}, {}, nullptr), {}, {}, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    return finish(OpKind::Sub, {a, b}, exec_op(OpKind::Sub, {a, b}, {}, nullptr), {}, {}, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    return finish(OpKind::Mul, {a, b}, exec_op(OpKind::Mul, {a, b}, {}, nullptr), {}, {}, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    return finish(OpKind::Div, {a, b}, exec_op(OpKind::Div, {a, b}, {}, nullptr), {}, {}, "div");
}

Tensor smul(const Tensor& a, double s) {
    OpAttrs at;
    at.scalar = s;
    return finish(OpKind::SMul, {a}, exec_op(OpKind::SMul, {a}, at, nullptr), {}, at, "smul");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: expects rank-2 operands");
    require(a.dim(1) == b.dim(0),
            "matmul: inner dims differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    return finish(OpKind::MatMul, {a, b}, exec_op(OpKind::MatMul, {a, b}, {}, nullptr), {}, {}, "matmul");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, "linear: expects x[B,I], w[I,O], b[O]");
    require(x.dim(1) == w.dim(0) && w.dim(1) == b.dim(0), "linear: dimension mismatch");
    return finish(OpKind::Linear, {x, w, b}, exec_op(OpKind::Linear, {x, w, b}, {}, nullptr), {}, {}, "linear");
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    require(is_image(x), "conv2d: input must be [B,C,H,W]");
    require(w.rank() == 4 && w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1, "conv2d: kernel must be [Co,Ci,K,K], K odd");
    require(w.dim(1) == x.dim(1), "conv2d: channel mismatch");
    require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
    if (b.defined()) require(b.rank() == 1 && b.dim(0) == w.dim(0), "conv2d: bias must be [Co]");
    OpAttrs at;
    at.stride = stride;
    return finish(OpKind::Conv2d, {x, w, b}, exec_op(OpKind::Conv2d, {x, w, b}, at, nullptr), {}, at, "conv2d");
}

Tensor upsample_nearest2x(const Tensor& x) {
    require(is_image(x), "upsample_nearest2x: input must be [B,C,H,W]");
    return finish(OpKind::Upsample2x, {x}, exec_op(OpKind::Upsample2x, {x}, {}, nullptr), {}, {},
                  "upsample_nearest2x");
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps) {
    require(x.rank() >= 2, "group_norm: input must have a channel axis");
    int C = x.dim(1);
    require(groups >= 1 && C % groups == 0, "group_norm: channels not divisible by groups");
    require(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 && beta.dim(0) == C,
            "group_norm: affine params must be [C]");
    OpAttrs at;
    at.groups = groups;
    at.eps = eps;
    std::vector<Tensor> saved;
    Tensor out = exec_op(OpKind::GroupNorm, {x, gamma, beta}, at, &saved);
    return finish(OpKind::GroupNorm, {x, gamma, beta}, std::move(out), std::move(saved), at, "group_norm");
}

Tensor silu(const Tensor& x) {
    return finish(OpKind::Silu, {x}, exec_op(OpKind::Silu, {x}, {}, nullptr), {}, {}, "silu");
}

Tensor reshape(const Tensor& x, Shape shape) {
    require(shape_numel(shape) == x.size(),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    OpAttrs at;
    at.shape = shape;
    Tensor out = Tensor::make(std::move(shape), x.buffer());
    return finish(OpKind::Reshape, {x}, std::move(out), {}, at, "reshape");
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.rank() == b.rank() && a.rank() >= 2, "concat_channels: rank mismatch");
    require(a.dim(0) == b.dim(0), "concat_channels: batch mismatch");
    for (int i = 2; i < a.rank(); ++i) require(a.dim(i) == b.dim(i), "concat_channels: spatial mismatch");
    return finish(OpKind::ConcatCh, {a, b}, exec_op(OpKind::ConcatCh, {a, b}, {}, nullptr), {}, {},
                  "concat_channels");
}

Tensor mean(const Tensor& x) {
    require(x.size() > 0, "mean: empty tensor");
    return finish(OpKind::Mean, {x}, exec_op(OpKind::Mean, {x}, {}, nullptr), {}, {}, "mean");
}

Tensor sum(const Tensor& x) {
    return finish(OpKind::Sum, {x}, exec_op(OpKind::Sum, {x}, {}, nullptr), {}, {}, "sum");
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    require(a.size() > 0, "mse: empty tensor");
    return finish(OpKind::Mse, {a, b}, exec_op(OpKind::Mse, {a, b}, {}, nullptr), {}, {}, "mse");
}

std::vector<double> time_embed_freqs(int dim) {
    int half = dim / 2;
    std::vector<double> freqs(static_cast<size_t>(half));
    for (int k = 0; k < half; ++k)
        freqs[static_cast<size_t>(k)] =
            half > 1 ? std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half - 1)) : 1.0;
    return freqs;
}

Tensor time_embed(const Tensor& t, int dim) {
    require(t.rank() == 1, "time_embed: input must be rank-1");
    require(dim >= 2 && dim % 2 == 0, "time_embed: dim must be even and >= 2");
    OpAttrs at;
    at.dim = dim;
    return finish(OpKind::TimeEmbed, {t}, exec_op(OpKind::TimeEmbed, {t}, at, nullptr), {}, at, "time_embed");
}

Tensor channel_bias(const Tensor& x, const Tensor& s) {
    require(x.rank() >= 2, "channel_bias: input must have a channel axis");
    require(s.rank() == 2 && s.dim(0) == x.dim(0) && s.dim(1) == x.dim(1), "channel_bias: bias must be [B,C]");
    return finish(OpKind::ChannelBias, {x, s}, exec_op(OpKind::ChannelBias, {x, s}, {}, nullptr), {}, {},
                  "channel_bias");
}

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Div: return "div";
        case OpKind::SMul: return "smul";
        case OpKind::MatMul: return "matmul";
        case OpKind::Linear: return "linear";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Upsample2x: return "upsample_nearest2x";
        case OpKind::GroupNorm: return "group_norm";
        case OpKind::Silu: return "silu";
        case OpKind::Reshape: return "reshape";
        case OpKind::ConcatCh: return "concat_channels";
        case OpKind::Mean: return "mean";
        case OpKind::Sum: return "sum";
        case OpKind::Mse: return "mse";
        case OpKind::TimeEmbed: return "time_embed";
        case OpKind::ChannelBias: return "channel_bias";
    }
    return "?";
}

}  // namespace flowgen
