#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace attncap {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Storage is 64-byte aligned. Eigen's vectorized reductions peel up to the
// first aligned element, so with malloc's 16-byte alignment the summation
// order (and the last bit of the result) would depend on heap placement.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

namespace detail {
struct TensorData {
    Shape shape;
    Buffer values;
    Buffer grad; // empty until a backward pass allocates it
    bool requires_grad = false;
};
} // namespace detail

// Dense row-major tensor of doubles with an optional gradient slot.
//
// Tensor is a shared handle: copies alias the same storage, which is what lets
// a Tape refer back to parameters and intermediates. Constness applies to the
// handle, not the data. Values are treated as
// immutable once an op has consumed them; only optimizers (between forward
// passes) and gradient checks write through mutable_values().
class Tensor {
  public:
    Tensor() = default;
    Tensor(Shape shape, Buffer values, bool requires_grad = false);
    Tensor(Shape shape, const std::vector<double>& values, bool requires_grad = false);
    Tensor(Shape shape, std::initializer_list<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(Buffer values, bool requires_grad = false);
    static Tensor vector(const std::vector<double>& values, bool requires_grad = false);
    static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, Buffer values, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, const std::vector<double>& values,
                         bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values,
                         bool requires_grad = false);

    bool defined() const { return data_ != nullptr; }

    const Shape& shape() const { return data_->shape; }
    std::size_t rank() const { return data_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return data_->shape.at(axis); }
    std::size_t size() const { return data_->values.size(); }

    std::span<const double> values() const { return data_->values; }
    std::span<double> mutable_values() const { return data_->values; }
    double at(std::size_t i) const { return data_->values.at(i); }
    double item() const;

    bool requires_grad() const { return data_->requires_grad; }
    void set_requires_grad(bool on) const { data_->requires_grad = on; }

    bool has_grad() const { return !data_->grad.empty(); }
    std::span<const double> grad() const { return data_->grad; }
    std::span<double> mutable_grad() const { return data_->grad; }
    // Allocates a zeroed gradient buffer if none exists.
    void ensure_grad() const;
    void zero_grad() const;

    // Deep copy with no gradient and requires_grad off.
    Tensor detach() const;

    bool same(const Tensor& other) const { return data_ == other.data_; }

  private:
    std::shared_ptr<detail::TensorData> data_;
};

// Records differentiable operations in execution order and replays them in
// reverse. Nodes whose inputs all have requires_grad == false are not
// recorded, so inference on frozen parameters leaves the tape empty.
//
// A Tape and the tensors it references belong to one thread.
class Tape {
  public:
    using BackwardFn = std::function<void()>;

    // A non-recording tape turns every op into a plain forward computation.
    explicit Tape(bool recording = true) : recording_(recording) {}
    bool recording() const { return recording_; }

    // True if any input needs a gradient, i.e. an op producing from these
    // inputs must call record() and mark its output requires_grad.
    static bool tracks(std::initializer_list<const Tensor*> inputs);
    static bool tracks(std::span<const Tensor> inputs);

    // Appends a node. backward reads output's gradient and accumulates into the
    // gradients of inputs that require one. The output is marked requires_grad.
    void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

    // Reverse-mode sweep from a scalar loss. Gradients of every tensor on the
    // tape are reset to zero first, then d(loss)/d(loss) = 1 is propagated.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

  private:
    struct Node {
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    bool recording_ = true;
};

inline void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

} // namespace attncap
