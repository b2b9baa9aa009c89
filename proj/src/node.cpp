#include "sohnet/node.hpp"

#include <cmath>

#include "sohnet/error.hpp"

namespace sohnet {

void NodeConfig::validate() const {
    if (n_steps < 1) fail(ErrorKind::Config, "node: n_steps must be >= 1");
    if (!(t1 > t0)) fail(ErrorKind::Config, "node: t1 must exceed t0");
}

void DynamicsNetConfig::validate() const {
    if (channels == 0 || hidden == 0) fail(ErrorKind::Config, "node: channel counts must be positive");
    if (kernel_w % 2 == 0) fail(ErrorKind::Config, "node: kernel width must be odd to preserve shape");
}

namespace {

/// x + h·((k1 + 2k2 + 2k3 + k4)/6), elementwise.
ad::Var rk4_combine(ad::Var x, ad::Var k1, ad::Var k2, ad::Var k3, ad::Var k4, double h) {
    ad::Tape& tape = *x.tape;
    const Tensor& xv = x.value();
    const Tensor& a = k1.value();
    const Tensor& b = k2.value();
    const Tensor& c = k3.value();
    const Tensor& d = k4.value();
    for (const Tensor* k : {&a, &b, &c, &d})
        if (k->shape() != xv.shape())
            fail(ErrorKind::Shape, "rk4: field output " + to_string(k->shape()) +
                                       " differs from state " + to_string(xv.shape()));
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double slope = (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) / 6.0;
        out[i] = xv[i] + h * slope;
    }
    return tape.push(std::move(out), {x, k1, k2, k3, k4},
                     [x, k1, k2, k3, k4, h](ad::Tape& tp, std::uint32_t self) {
                         const Tensor& g = tp.node_grad(self);
                         const ad::Var ks[] = {k1, k2, k3, k4};
                         const double w[] = {h / 6.0, h / 3.0, h / 3.0, h / 6.0};
                         if (Tensor* gx = tp.grad_sink(x))
                             for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                         for (int k = 0; k < 4; ++k)
                             if (Tensor* gk = tp.grad_sink(ks[k]))
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gk)[i] += w[k] * g[i];
                     });
}

ad::Var euler_stage(ad::Var x, ad::Var k, double h) {
    const ad::Var terms[] = {x, k};
    const double coeffs[] = {1.0, h};
    return ad::lincomb(terms, coeffs);
}

}  // namespace

ad::Var rk4_step(const VectorField& f, ad::Var x, double h) {
    if (!(h > 0.0)) fail(ErrorKind::Config, "rk4_step: step size must be positive");
    const ad::Var k1 = f(x);
    const ad::Var k2 = f(euler_stage(x, k1, 0.5 * h));
    const ad::Var k3 = f(euler_stage(x, k2, 0.5 * h));
    const ad::Var k4 = f(euler_stage(x, k3, h));
    return rk4_combine(x, k1, k2, k3, k4, h);
}

ad::Var integrate(const VectorField& f, ad::Var x0, const NodeConfig& config) {
    config.validate();
    const double h = config.step_size();
    ad::Var x = x0;
    for (std::size_t step = 0; step < config.n_steps; ++step) {
        x = rk4_step(f, x, h);
        if (!x.value().all_finite())
            fail(ErrorKind::Divergence, "node: non-finite state after RK4 step " + std::to_string(step + 1) +
                                            " of " + std::to_string(config.n_steps));
    }
    return x;
}

void add_dynamics_params(ParamStore& store, const std::string& prefix,
                         const DynamicsNetConfig& config, std::mt19937_64& rng) {
    config.validate();
    const std::size_t c = config.channels, h = config.hidden, k = config.kernel_w;
    Tensor w1({h, c, 1, k});
    const double bound = std::sqrt(3.0 / static_cast<double>(c * k));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : w1.data()) v = u(rng);
    store.add(prefix + ".conv1.weight", std::move(w1));
    store.add(prefix + ".conv1.bias", Tensor({h}));
    store.add(prefix + ".conv2.weight", Tensor({c, h, 1, k}));
    store.add(prefix + ".conv2.bias", Tensor({c}));
}

ad::Var DynamicsNet::operator()(ad::Var x) const {
    const ad::ConvOptions same{1, 1, 0, config.kernel_w / 2};
    const ad::Var hidden = ad::tanh(ad::conv2d(x, conv1_w, conv1_b, same));
    return ad::conv2d(hidden, conv2_w, conv2_b, same);
}

}  // namespace sohnet
