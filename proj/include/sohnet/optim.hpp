#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sohnet/autodiff.hpp"
#include "sohnet/tensor.hpp"

namespace sohnet {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor first_moment;
    Tensor second_moment;
};

/// Named parameters with gradients and Adam state, kept in insertion order.
class ParamStore {
public:
    Param& add(std::string name, Tensor value);

    bool contains(const std::string& name) const { return index_.contains(name); }
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;

    std::vector<Param>& params() noexcept { return params_; }
    const std::vector<Param>& params() const noexcept { return params_; }

    std::uint64_t step() const noexcept { return step_; }
    void set_step(std::uint64_t step) noexcept { step_ = step; }
    void advance_step() noexcept { ++step_; }

    std::size_t parameter_count() const;
    void zero_grad();

    /// Registers every parameter on the tape, in store order.
    std::vector<ad::Var> bind(ad::Tape& tape) const;
    /// Adds the tape gradients of bound leaves into the stored gradients.
    void accumulate_grads(const ad::Tape& tape, const std::vector<ad::Var>& bound);

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, std::size_t> index_;
    std::uint64_t step_ = 0;
};

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;
};

/// Adam with bias correction; weight decay is decoupled and applied as
/// w ← w − lr·wd·w before the moment-based update.
void adam_step(ParamStore& store, const AdamConfig& cfg);

}  // namespace sohnet
