#pragma once

#include <string>
#include <vector>

#include "attncap/tensor.hpp"

namespace attncap {

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

class Optimizer {
  public:
    virtual ~Optimizer() = default;
    virtual void step() = 0;
};

class Sgd final : public Optimizer {
  public:
    Sgd(std::vector<Tensor> params, double learning_rate) : params_(std::move(params)), lr_(learning_rate) {}
    void step() override;

  private:
    std::vector<Tensor> params_;
    double lr_;
};

class Adam final : public Optimizer {
  public:
    Adam(std::vector<Tensor> params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
         double epsilon = 1e-8);
    void step() override;
    std::size_t steps() const { return t_; }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

} // namespace attncap
