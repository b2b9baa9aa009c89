#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>

#include "sohnet/autodiff.hpp"
#include "sohnet/optim.hpp"

// Neural-ODE block: a learned autonomous vector field integrated with
// fixed-step classical RK4. Every stage is recorded on the tape, so gradients
// reach both the initial state and the field parameters.

namespace sohnet {

struct NodeConfig {
    std::size_t n_steps = 8;
    double t0 = 0.0;
    double t1 = 1.0;

    void validate() const;
    double step_size() const { return (t1 - t0) / static_cast<double>(n_steps); }
};

using VectorField = std::function<ad::Var(ad::Var)>;

/// x + h·(k1 + 2k2 + 2k3 + k4)/6 with the standard stage evaluations.
ad::Var rk4_step(const VectorField& f, ad::Var x, double h);

/// n_steps RK4 steps over [t0, t1]. Throws ErrorKind::Divergence naming the
/// step whose output holds a non-finite value.
ad::Var integrate(const VectorField& f, ad::Var x0, const NodeConfig& config);

/// Two-layer convolutional field C×2×W → C×2×W:
/// conv(1×k, pad k/2) → tanh → conv(1×k, pad k/2).
struct DynamicsNetConfig {
    std::size_t channels = 64;
    std::size_t hidden = 64;
    std::size_t kernel_w = 3;

    void validate() const;
};

/// Registers "<prefix>.conv1.{weight,bias}" and "<prefix>.conv2.{weight,bias}".
/// The second layer starts at zero, so the initial flow is the identity map.
void add_dynamics_params(ParamStore& store, const std::string& prefix,
                         const DynamicsNetConfig& config, std::mt19937_64& rng);

struct DynamicsNet {
    ad::Var conv1_w, conv1_b, conv2_w, conv2_b;
    DynamicsNetConfig config;

    ad::Var operator()(ad::Var x) const;
};

}  // namespace sohnet
