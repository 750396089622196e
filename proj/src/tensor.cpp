#include "flowgen/tensor.hpp"

#include <cmath>
#include <sstream>

namespace flowgen {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

void arg_error(const std::string& msg) { throw std::invalid_argument(msg); }
void run_error(const std::string& msg) { throw std::runtime_error(msg); }

Tensor Tensor::zeros(Shape shape) {
    int64_t n = shape_numel(shape);
    require(n >= 0, "tensor: negative extent in " + shape_str(shape));
    return make(std::move(shape), std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
    int64_t n = shape_numel(shape);
    require(n >= 0, "tensor: negative extent in " + shape_str(shape));
    return make(std::move(shape), std::make_shared<std::vector<double>>(static_cast<size_t>(n), value));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
    require(shape_numel(shape) == static_cast<int64_t>(data.size()),
            "tensor: data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    return make(std::move(shape), std::make_shared<std::vector<double>>(std::move(data)));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::make(Shape shape, std::shared_ptr<const std::vector<double>> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

double Tensor::item() const {
    require(size() == 1, "item(): tensor has " + std::to_string(size()) + " elements, expected 1");
    return (*data_)[0];
}

Tensor Tensor::tangent() const {
    if (tangent_) return make(shape_, tangent_);
    return Tensor::zeros(shape_);
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

Tensor Tensor::with_tangent(const Tensor& tangent) const {
    require(same_shape(shape_, tangent.shape()),
            "with_tangent: tangent shape " + shape_str(tangent.shape()) + " != primal shape " + shape_str(shape_));
    Tensor t = *this;
    t.tangent_ = tangent.buffer();
    return t;
}

bool all_finite(const double* x, int64_t n) {
    for (int64_t i = 0; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

void check_finite(const Tensor& t, const char* op_name) {
    if (!all_finite(t.data(), t.size()))
        run_error(std::string(op_name) + ": non-finite value in result");
}

}  // namespace flowgen
