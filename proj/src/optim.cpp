#include "sohnet/optim.hpp"

#include <cmath>

#include "sohnet/error.hpp"

namespace sohnet {

Param& ParamStore::add(std::string name, Tensor value) {
    if (index_.contains(name)) fail(ErrorKind::Config, "duplicate parameter '" + name + "'");
    const Shape shape = value.shape();
    index_.emplace(name, params_.size());
    params_.push_back(Param{std::move(name), std::move(value), Tensor(shape), Tensor(shape), Tensor(shape)});
    return params_.back();
}

std::size_t ParamStore::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::Index, "unknown parameter '" + name + "'");
    return it->second;
}

Param& ParamStore::at(const std::string& name) { return params_[index_of(name)]; }
const Param& ParamStore::at(const std::string& name) const { return params_[index_of(name)]; }

std::size_t ParamStore::parameter_count() const {
    std::size_t total = 0;
    for (const Param& p : params_) total += p.value.size();
    return total;
}

void ParamStore::zero_grad() {
    for (Param& p : params_) std::fill(p.grad.data().begin(), p.grad.data().end(), 0.0);
}

std::vector<ad::Var> ParamStore::bind(ad::Tape& tape) const {
    std::vector<ad::Var> bound;
    bound.reserve(params_.size());
    for (const Param& p : params_) bound.push_back(tape.variable(p.value));
    return bound;
}

void ParamStore::accumulate_grads(const ad::Tape& tape, const std::vector<ad::Var>& bound) {
    if (bound.size() != params_.size()) fail(ErrorKind::Input, "bound variables do not match store");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Tensor g = tape.grad(bound[i]);
        auto dst = params_[i].grad.data();
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
    }
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
    store.advance_step();
    const double t = static_cast<double>(store.step());
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (Param& p : store.params()) {
        auto w = p.value.data();
        auto g = p.grad.data();
        auto m = p.first_moment.data();
        auto v = p.second_moment.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] -= cfg.lr * cfg.weight_decay * w[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            w[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

}  // namespace sohnet
