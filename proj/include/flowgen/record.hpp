#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "flowgen/tensor.hpp"

namespace flowgen {

enum class OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    SMul,
    MatMul,
    Linear,
    Conv2d,
    Upsample2x,
    GroupNorm,
    Silu,
    Reshape,
    ConcatCh,
    Mean,
    Sum,
    Mse,
    TimeEmbed,
    ChannelBias,
};

const char* op_name(OpKind k);

struct OpAttrs {
    double scalar = 0.0;  // SMul factor
    int stride = 1;       // Conv2d
    int groups = 1;       // GroupNorm
    double eps = 0.0;     // GroupNorm
    int dim = 0;          // TimeEmbed output width
    Shape shape;          // Reshape target
};

// One recorded op. Input values are always kept (they share buffers with
// the tensors that produced them), so the record is self-contained: it can
// be replayed forward and walked backward without the original tensors.
struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<int> in_ids;      // producing node per input, -1 for constants
    std::vector<Tensor> inputs;   // input values at record time
    Tensor output;
    std::vector<Tensor> saved;    // op-specific intermediates (e.g. norm stats)
    OpAttrs attrs;
};

// Topologically ordered op tape for one computation. Confined to a single
// thread; tensors returned from watched/derived ops point back into it.
class Record {
public:
    Record() = default;
    Record(const Record&) = delete;
    Record& operator=(const Record&) = delete;

    // Registers a leaf whose gradient can be requested later.
    Tensor watch(const Tensor& t);

    int size() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

    // Recomputes a recorded tensor from the leaves; bit-identical to the
    // original forward pass.
    Tensor replay(const Tensor& recorded) const;

    // Internal (op layer).
    int append(Node n);

private:
    std::vector<Node> nodes_;
};

// d(output)/d(leaf) for each watched leaf, via reverse sweep over the record.
// `output` must be a scalar (one element) produced on `rec`.
std::vector<Tensor> grad(const Record& rec, const Tensor& output, const std::vector<Tensor>& wrt);

// Evaluates f at `inputs` while pushing `tangents` through every op
// (dual-number forward mode). Returns (f(inputs), J·tangents) from a single
// forward evaluation of f.
using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;
std::pair<Tensor, Tensor> jvp(const TensorFn& f, const std::vector<Tensor>& inputs,
                              const std::vector<Tensor>& tangents);

}  // namespace flowgen
