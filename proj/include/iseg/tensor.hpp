#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "iseg/aligned.hpp"

namespace iseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// `Tensor` is a shared handle: copies alias the same storage, and the compute
/// tape keeps inputs alive through these handles. Use `clone()` for a deep copy.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<double> data();
    std::span<const double> data() const;
    double item() const;

    // CHW accessors for rank-3 tensors.
    double& at(std::size_t c, std::size_t h, std::size_t w);
    double at(std::size_t c, std::size_t h, std::size_t w) const;

    /// Trainable leaves receive gradients from `backward`; other leaves are untouched.
    void set_trainable(bool on);
    bool trainable() const;
    bool requires_grad() const;

    bool has_grad() const;
    std::span<double> grad();
    std::span<const double> grad() const;
    /// Allocates a zero gradient buffer if none exists and returns it. Const because
    /// gradient accumulation is the one mutation allowed through shared handles.
    std::span<double> grad_buffer() const;
    void zero_grad();
    void clear_grad();

    Tensor clone() const;
    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  private:
    friend class Tape;
    friend Tensor make_result(Shape shape, bool requires_grad);

    struct Node {
        Shape shape;
        AlignedBuffer value;
        AlignedBuffer grad;
        bool trainable = false;
        bool requires_grad = false;
    };
    std::shared_ptr<Node> node_;
};

/// Creates an op output. `requires_grad` marks it as part of a recorded graph.
Tensor make_result(Shape shape, bool requires_grad);

/// Ordered record of executed ops. Each entry is the backward closure of one op;
/// entries are appended in execution order, so reverse replay is a valid
/// topological order. A disabled tape records nothing (inference mode).
class Tape {
  public:
    explicit Tape(bool enabled = true) : enabled_(enabled) {}

    bool enabled() const { return enabled_; }
    std::size_t size() const { return entries_.size(); }

    /// True when an op with these inputs must be recorded.
    bool tracks(std::initializer_list<const Tensor*> inputs) const;
    void record(std::function<void()> backward_fn);

    /// Sign pattern of every relu input seen while probing is on. Used by the
    /// finite-difference checker to detect perturbations that cross a kink.
    void enable_kink_probe() { probe_kinks_ = true; }
    bool probing_kinks() const { return probe_kinks_; }
    std::vector<std::uint8_t>& kink_signature() { return kinks_; }

    void clear();

  private:
    friend void backward(const Tensor& loss, Tape& tape);

    bool enabled_;
    bool probe_kinks_ = false;
    std::vector<std::function<void()>> entries_;
    std::vector<std::uint8_t> kinks_;
};

/// Reverse-mode sweep: seeds d(loss)/d(loss) = 1 and replays the tape backwards.
/// Gradients accumulate additively into trainable leaves.
void backward(const Tensor& loss, Tape& tape);

} // namespace iseg
