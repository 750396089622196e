#include <cmath>
#include <vector>

#include "flowgen/kernels.hpp"
#include "flowgen/ops.hpp"
#include "flowgen/record.hpp"

namespace flowgen {

// ---------------------------------------------------------------------------
// Record
// ---------------------------------------------------------------------------

int Record::append(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Record::watch(const Tensor& t) {
    require(t.defined(), "watch: undefined tensor");
    Node n;
    n.kind = OpKind::Leaf;
    n.output = t.detached();
    int id = append(std::move(n));
    Tensor out = t;
    out.set_autodiff(this, id);
    return out;
}

Tensor Record::replay(const Tensor& recorded) const {
    require(recorded.grad_tracked() && recorded.record() == this, "replay: tensor was not produced on this record");
    std::vector<Tensor> vals(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.kind == OpKind::Leaf) {
            vals[i] = n.output;
            continue;
        }
        std::vector<Tensor> ins;
        ins.reserve(n.inputs.size());
        for (size_t j = 0; j < n.inputs.size(); ++j)
            ins.push_back(n.in_ids[j] >= 0 ? vals[static_cast<size_t>(n.in_ids[j])] : n.inputs[j]);
        vals[i] = exec_op(n.kind, ins, n.attrs, nullptr);
    }
    return vals[static_cast<size_t>(recorded.node_id())];
}

// ---------------------------------------------------------------------------
// reverse sweep
// ---------------------------------------------------------------------------

namespace {

using Buf = std::vector<double>;

double* acc_buf(std::vector<Buf>& g, int id, int64_t n) {
    Buf& v = g[static_cast<size_t>(id)];
    if (v.empty()) v.assign(static_cast<size_t>(n), 0.0);
    return v.data();
}

void backward_node(const Node& n, const Buf& go, std::vector<Buf>& g) {
    auto want = [&](size_t j) { return j < n.in_ids.size() && n.in_ids[j] >= 0; };
    auto dst = [&](size_t j) { return acc_buf(g, n.in_ids[j], n.inputs[j].size()); };
    const double* gp = go.data();
    switch (n.kind) {
        case OpKind::Leaf:
            break;
        case OpKind::Add: {
            if (want(0)) kern::axpy(1.0, gp, dst(0), n.output.size());
            if (want(1)) kern::axpy(1.0, gp, dst(1), n.output.size());
            break;
        }
        case OpKind::Sub: {
            if (want(0)) kern::axpy(1.0, gp, dst(0), n.output.size());
            if (want(1)) kern::axpy(-1.0, gp, dst(1), n.output.size());
            break;
        }
        case OpKind::Mul: {
            if (want(0)) kern::mul_acc(gp, n.inputs[1].data(), dst(0), n.output.size());
            if (want(1)) kern::mul_acc(gp, n.inputs[0].data(), dst(1), n.output.size());
            break;
        }
        case OpKind::Div: {
            if (want(0)) kern::div_acc(gp, n.inputs[1].data(), dst(0), n.output.size());
            if (want(1)) kern::div2_neg_acc(gp, n.inputs[0].data(), n.inputs[1].data(), dst(1), n.output.size());
            break;
        }
        case OpKind::SMul: {
            if (want(0)) kern::axpy(n.attrs.scalar, gp, dst(0), n.output.size());
            break;
        }
        case OpKind::MatMul: {
            int m = n.inputs[0].dim(0), k = n.inputs[0].dim(1), p = n.inputs[1].dim(1);
            if (want(0)) kern::matmul_nt_acc(gp, n.inputs[1].data(), dst(0), m, p, k);
            if (want(1)) kern::matmul_tn_acc(n.inputs[0].data(), gp, dst(1), m, k, p);
            break;
        }
        case OpKind::Linear: {
            int rows = n.inputs[0].dim(0), in_dim = n.inputs[0].dim(1), out_dim = n.inputs[1].dim(1);
            if (want(0)) kern::matmul_nt_acc(gp, n.inputs[1].data(), dst(0), rows, out_dim, in_dim);
            if (want(1)) kern::matmul_tn_acc(n.inputs[0].data(), gp, dst(1), rows, in_dim, out_dim);
            if (want(2)) kern::col_sum_acc(gp, dst(2), rows, out_dim);
            break;
        }
        case OpKind::Conv2d: {
            const Tensor& x = n.inputs[0];
            const Tensor& w = n.inputs[1];
            int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
            int Co = w.dim(0), K = w.dim(2);
            if (want(0)) kern::conv2d_bwd_x(gp, w.data(), dst(0), B, Ci, H, W, Co, K, n.attrs.stride);
            if (want(1)) kern::conv2d_bwd_w(x.data(), gp, dst(1), B, Ci, H, W, Co, K, n.attrs.stride);
            if (want(2)) kern::conv2d_bwd_b(gp, dst(2), B, Co, n.output.dim(2), n.output.dim(3));
            break;
        }
        case OpKind::Upsample2x: {
            const Tensor& x = n.inputs[0];
            if (want(0)) kern::upsample2x_bwd(gp, dst(0), x.dim(0), x.dim(1), x.dim(2), x.dim(3));
            break;
        }
        case OpKind::GroupNorm: {
            const Tensor& x = n.inputs[0];
            int B = x.dim(0), C = x.dim(1);
            int HW = static_cast<int>(x.size() / (static_cast<int64_t>(B) * C));
            Buf dx_scratch;
            double* dx;
            if (want(0)) {
                dx = dst(0);
            } else {
                dx_scratch.assign(static_cast<size_t>(x.size()), 0.0);
                dx = dx_scratch.data();
            }
            Buf tmp_dg(static_cast<size_t>(C), 0.0), tmp_db(static_cast<size_t>(C), 0.0);
            kern::group_norm_bwd(x.data(), n.inputs[1].data(), n.saved[0].data(), n.saved[1].data(), gp, dx,
                                 tmp_dg.data(), tmp_db.data(), B, C, HW, n.attrs.groups);
            if (want(1)) kern::axpy(1.0, tmp_dg.data(), dst(1), C);
            if (want(2)) kern::axpy(1.0, tmp_db.data(), dst(2), C);
            break;
        }
        case OpKind::Silu: {
            if (want(0)) kern::silu_bwd_acc(n.inputs[0].data(), gp, dst(0), n.output.size());
            break;
        }
        case OpKind::Reshape: {
            if (want(0)) kern::axpy(1.0, gp, dst(0), n.output.size());
            break;
        }
        case OpKind::ConcatCh: {
            const Tensor& a = n.inputs[0];
            const Tensor& b = n.inputs[1];
            int B = a.dim(0), C1 = a.dim(1), C2 = b.dim(1);
            int64_t hw = a.size() / (static_cast<int64_t>(B) * C1);
            for (int bi = 0; bi < B; ++bi) {
                const double* src = gp + static_cast<int64_t>(bi) * (C1 + C2) * hw;
                if (want(0)) kern::axpy(1.0, src, dst(0) + static_cast<int64_t>(bi) * C1 * hw, C1 * hw);
                if (want(1)) kern::axpy(1.0, src + C1 * hw, dst(1) + static_cast<int64_t>(bi) * C2 * hw, C2 * hw);
            }
            break;
        }
        case OpKind::Mean: {
            if (want(0)) {
                int64_t m = n.inputs[0].size();
                double v = gp[0] / static_cast<double>(m);
                double* d = dst(0);
                for (int64_t i = 0; i < m; ++i) d[i] += v;
            }
            break;
        }
        case OpKind::Sum: {
            if (want(0)) {
                int64_t m = n.inputs[0].size();
                double* d = dst(0);
                for (int64_t i = 0; i < m; ++i) d[i] += gp[0];
            }
            break;
        }
        case OpKind::Mse: {
            int64_t m = n.inputs[0].size();
            double c = 2.0 * gp[0] / static_cast<double>(m);
            const double* a = n.inputs[0].data();
            const double* b = n.inputs[1].data();
            if (want(0)) {
                double* d = dst(0);
                for (int64_t i = 0; i < m; ++i) d[i] += c * (a[i] - b[i]);
            }
            if (want(1)) {
                double* d = dst(1);
                for (int64_t i = 0; i < m; ++i) d[i] -= c * (a[i] - b[i]);
            }
            break;
        }
        case OpKind::TimeEmbed: {
            if (want(0)) {
                auto freqs = time_embed_freqs(n.attrs.dim);
                int half = n.attrs.dim / 2;
                int B = static_cast<int>(n.inputs[0].size());
                const double* t = n.inputs[0].data();
                double* d = dst(0);
                for (int b = 0; b < B; ++b) {
                    double s = 0.0;
                    for (int k = 0; k < half; ++k) {
                        double w = freqs[static_cast<size_t>(k)];
                        s += w * (gp[static_cast<size_t>(b) * n.attrs.dim + k] * std::cos(w * t[b]) -
                                  gp[static_cast<size_t>(b) * n.attrs.dim + half + k] * std::sin(w * t[b]));
                    }
                    d[b] += s;
                }
            }
            break;
        }
        case OpKind::ChannelBias: {
            const Tensor& x = n.inputs[0];
            int B = x.dim(0), C = x.dim(1);
            int HW = static_cast<int>(x.size() / (static_cast<int64_t>(B) * C));
            if (want(0)) kern::axpy(1.0, gp, dst(0), x.size());
            if (want(1)) kern::channel_bias_bwd_s(gp, dst(1), B, C, HW);
            break;
        }
    }
}

}  // namespace

std::vector<Tensor> grad(const Record& rec, const Tensor& output, const std::vector<Tensor>& wrt) {
    require(output.grad_tracked() && output.record() == &rec, "grad: output was not produced on this record");
    require(output.size() == 1, "grad: output must have exactly one element");
    std::vector<Buf> g(static_cast<size_t>(rec.size()));
    g[static_cast<size_t>(output.node_id())].assign(1, 1.0);
    for (int id = output.node_id(); id >= 0; --id) {
        const Buf& go = g[static_cast<size_t>(id)];
        if (go.empty()) continue;
        backward_node(rec.node(id), go, g);
    }
    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (const Tensor& w : wrt) {
        require(w.grad_tracked() && w.record() == &rec, "grad: wrt tensor was not produced on this record");
        Buf& gw = g[static_cast<size_t>(w.node_id())];
        Tensor gt = gw.empty() ? Tensor::zeros(w.shape()) : Tensor::from(w.shape(), std::move(gw));
        check_finite(gt, "grad");
        out.push_back(std::move(gt));
    }
    return out;
}

std::pair<Tensor, Tensor> jvp(const TensorFn& f, const std::vector<Tensor>& inputs,
                              const std::vector<Tensor>& tangents) {
    require(inputs.size() == tangents.size(), "jvp: inputs and tangents differ in count");
    std::vector<Tensor> duals;
    duals.reserve(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) duals.push_back(inputs[i].detached().with_tangent(tangents[i]));
    Tensor out = f(duals);
    return {out.detached(), out.tangent()};
}

}  // namespace flowgen
