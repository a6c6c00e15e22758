#pragma once

#include <map>
#include <vector>

#include "evt/errors.hpp"
#include "evt/tensor.hpp"

namespace evt {

// v <- momentum * v + g; p <- p - lr * v
template <typename T>
void sgd_step(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& velocity,
              T lr, T momentum) {
    if (param.size() != grad.size()) throw ShapeError("sgd_step: grad size mismatch");
    if (velocity.size() != param.size()) velocity.assign(param.size(), T{0});
    for (size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        param[i] -= lr * velocity[i];
    }
}

// Piecewise-constant schedule: value of the greatest milestone key <= epoch.
inline double lr_at_epoch(const std::map<int, double>& milestones, int epoch) {
    if (milestones.empty() || milestones.begin()->first > epoch)
        throw ConfigError("lr_at_epoch: no milestone at or before epoch");
    auto it = milestones.upper_bound(epoch);
    --it;
    return it->second;
}

}  // namespace evt
