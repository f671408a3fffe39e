#include "attncap/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "attncap/errors.hpp"
#include "attncap/rng.hpp"

namespace attncap {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            s += "x";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, Buffer values, bool requires_grad)
    : data_(std::make_shared<detail::TensorData>()) {
    if (numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_string(shape) + " holds " + std::to_string(numel(shape)) +
                             " values, got " + std::to_string(values.size()));
    }
    data_->shape = std::move(shape);
    data_->values = std::move(values);
    data_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, const std::vector<double>& values, bool requires_grad)
    : Tensor(std::move(shape), Buffer(values.begin(), values.end()), requires_grad) {}

Tensor::Tensor(Shape shape, std::initializer_list<double> values, bool requires_grad)
    : Tensor(std::move(shape), Buffer(values), requires_grad) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(Buffer values, bool requires_grad) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::vector(const std::vector<double>& values, bool requires_grad) {
    return vector(Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, Buffer values, bool requires_grad) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, const std::vector<double>& values, bool requires_grad) {
    return matrix(rows, cols, Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
    return vector(Buffer(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values, bool requires_grad) {
    return matrix(rows, cols, Buffer(values), requires_grad);
}

double Tensor::item() const {
    if (size() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    }
    return data_->values[0];
}

void Tensor::ensure_grad() const {
    if (data_->grad.size() != data_->values.size()) {
        data_->grad.assign(data_->values.size(), 0.0);
    }
}

void Tensor::zero_grad() const { data_->grad.assign(data_->values.size(), 0.0); }

Tensor Tensor::detach() const { return Tensor(shape(), Buffer(values().begin(), values().end())); }

bool Tape::tracks(std::initializer_list<const Tensor*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

bool Tape::tracks(std::span<const Tensor> inputs) {
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
    if (!recording_) {
        return;
    }
    output.set_requires_grad(true);
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1 || loss.rank() != 0) {
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
    }
    for (Node& node : nodes_) {
        node.output.zero_grad();
        for (Tensor& in : node.inputs) {
            if (in.defined() && in.requires_grad()) {
                in.zero_grad();
            }
        }
    }
    Tensor root = loss;
    root.ensure_grad();
    root.mutable_grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward();
    }
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (!is) {
        throw FormatError("corrupt random engine state");
    }
}

} // namespace attncap
