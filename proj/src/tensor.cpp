#include "iseg/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "iseg/errors.hpp"

namespace iseg {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : node_(std::make_shared<Node>()) {
    node_->value.assign(shape_numel(shape), 0.0);
    node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<Node>()) {
    if (values.size() != shape_numel(shape)) {
        throw DimensionError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value.assign(values.begin(), values.end());
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

const Shape& Tensor::shape() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<double> Tensor::data() { return node_->value; }
std::span<const double> Tensor::data() const { return node_->value; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

double& Tensor::at(std::size_t c, std::size_t h, std::size_t w) {
    const auto& s = node_->shape;
    return node_->value[(c * s[1] + h) * s[2] + w];
}

double Tensor::at(std::size_t c, std::size_t h, std::size_t w) const {
    const auto& s = node_->shape;
    return node_->value[(c * s[1] + h) * s[2] + w];
}

void Tensor::set_trainable(bool on) {
    node_->trainable = on;
    node_->requires_grad = on;
}

bool Tensor::trainable() const { return node_ && node_->trainable; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<double> Tensor::grad() { return node_->grad; }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::grad_buffer() const {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
    Tensor t(node_->shape);
    t.node_->value = node_->value;
    t.set_trainable(node_->trainable);
    return t;
}

Tensor make_result(Shape shape, bool requires_grad) {
    Tensor t(std::move(shape));
    t.node_->requires_grad = requires_grad;
    return t;
}

bool Tape::tracks(std::initializer_list<const Tensor*> inputs) const {
    if (!enabled_) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

void Tape::record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }

void Tape::clear() {
    entries_.clear();
    kinks_.clear();
}

void backward(const Tensor& loss, Tape& tape) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss is not reachable from any trainable tensor on the tape");
    }
    Tensor seed = loss;
    seed.grad_buffer()[0] += 1.0;
    for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) (*it)();
}

} // namespace iseg
