#pragma once

#include <cmath>
#include <vector>

#include "dcformer/vit.hpp"

namespace dcformer {

// lr(t) = lr0 * 0.5 * (1 + cos(pi * t / T)): cosine decay from the initial
// rate to zero over the full run, no warmup.
inline double cosine_lr(double lr0, std::size_t step, std::size_t total_steps) {
    if (total_steps == 0) return lr0;
    const double t = static_cast<double>(std::min(step, total_steps));
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * t / static_cast<double>(total_steps)));
}

// SGD with momentum and L2 weight decay, applied uniformly to every
// learnable tensor. Buffers align with EncoderState::parameters() order.
struct SgdMomentum {
    std::vector<std::vector<double>> buffers;

    void init(EncoderState& state) {
        buffers.clear();
        for (auto& e : state.parameters()) buffers.emplace_back(e.tensor->size(), 0.0);
    }

    void step(EncoderState& state, double lr, double momentum, double weight_decay) {
        auto params = state.parameters();
        require(params.size() == buffers.size(), "SgdMomentum: buffer/parameter mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i].tensor;
            const auto& g = p.grad();
            auto& v = p.values();
            auto& buf = buffers[i];
            for (std::size_t j = 0; j < v.size(); ++j) {
                buf[j] = momentum * buf[j] + g[j] + weight_decay * v[j];
                v[j] -= lr * buf[j];
            }
        }
    }
};

}  // namespace dcformer
