#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowgen {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Precondition violations (bad arguments, shape mismatches).
[[noreturn]] void arg_error(const std::string& msg);
inline void require(bool cond, const std::string& msg) {
    if (!cond) arg_error(msg);
}

// Runtime failures (non-finite values, I/O problems).
[[noreturn]] void run_error(const std::string& msg);

class Record;

// Immutable n-dimensional array of doubles. Copies share the underlying
// buffer; no op in this library mutates a buffer after construction, so
// tensors are safe to pass between threads by value.
//
// A tensor may additionally carry
//   - a record reference (reverse-mode: the op that produced it), and/or
//   - a tangent buffer (forward-mode dual number).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> data);
    static Tensor scalar(double value);  // rank-0

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
    bool defined() const { return data_ != nullptr; }

    const double* data() const { return data_->data(); }
    const std::vector<double>& vec() const { return *data_; }
    double at(int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
    double item() const;  // requires size()==1

    bool grad_tracked() const { return rec_ != nullptr; }
    Record* record() const { return rec_; }
    int node_id() const { return node_; }

    bool has_tangent() const { return tangent_ != nullptr; }
    const double* tangent_data() const { return tangent_->data(); }
    Tensor tangent() const;  // zero tensor of same shape when absent

    // Same values, no record / no tangent.
    Tensor detached() const;
    // Attach a forward-mode tangent (shape must match).
    Tensor with_tangent(const Tensor& tangent) const;

    // Internal: used by the op layer and Record.
    static Tensor make(Shape shape, std::shared_ptr<const std::vector<double>> data);
    std::shared_ptr<const std::vector<double>> buffer() const { return data_; }
    std::shared_ptr<const std::vector<double>> tangent_buffer() const { return tangent_; }
    void set_autodiff(Record* rec, int node) { rec_ = rec; node_ = node; }
    void set_tangent_buffer(std::shared_ptr<const std::vector<double>> t) { tangent_ = std::move(t); }

private:
    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    std::shared_ptr<const std::vector<double>> tangent_;
    Record* rec_ = nullptr;
    int node_ = -1;
};

// Throws run_error if any entry is NaN/Inf. Every catalog op calls this on
// its output.
void check_finite(const Tensor& t, const char* op_name);

bool all_finite(const double* x, int64_t n);

}  // namespace flowgen
