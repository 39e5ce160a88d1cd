#pragma once

#include <map>
#include <string>

#include "htcnn/tensor.hpp"

namespace htcnn {

// Classical heavy-ball momentum: v <- mu*v - lr*g; w <- w + v.
struct OptimizerState {
    std::map<std::string, Tensor> velocity;
    float learning_rate = 0.01f;
    float momentum = 0.9f;

    static OptimizerState for_params(const std::map<std::string, Tensor>& params, float lr = 0.01f,
                                     float momentum = 0.9f) {
        OptimizerState s;
        s.learning_rate = lr;
        s.momentum = momentum;
        for (const auto& [name, p] : params) s.velocity.emplace(name, Tensor::zeros(p.shape));
        return s;
    }
};

inline void sgd_momentum_step(std::map<std::string, Tensor>& params,
                              const std::map<std::string, Tensor>& grads, OptimizerState& state) {
    for (auto& [name, p] : params) {
        const auto git = grads.find(name);
        if (git == grads.end()) throw config_error("missing gradient for parameter '" + name + "'");
        auto vit = state.velocity.find(name);
        if (vit == state.velocity.end()) {
            throw config_error("missing velocity for parameter '" + name + "'");
        }
        const Tensor& g = git->second;
        Tensor& v = vit->second;
        if (!g.same_shape(p) || !v.same_shape(p)) {
            throw config_error("shape mismatch in optimizer step for '" + name + "': param " +
                               shape_str(p.shape) + ", grad " + shape_str(g.shape) + ", velocity " +
                               shape_str(v.shape));
        }
        const float mu = state.momentum;
        const float lr = state.learning_rate;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            v.data[i] = mu * v.data[i] - lr * g.data[i];
            p.data[i] += v.data[i];
        }
    }
}

}  // namespace htcnn
