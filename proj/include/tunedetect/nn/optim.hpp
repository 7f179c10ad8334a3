#pragma once

#include <cmath>
#include <vector>

#include "tunedetect/nn/models.hpp"

namespace tunedetect::nn {

/// Adaptive-moment optimizer with bias correction.
template <class T>
class Adam {
public:
    Adam(ParamList<T>& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(params), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.var.value().size(), 0.0);
            v_.emplace_back(p.var.value().size(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& var = params_[i].var;
            const auto& g = var.grad();
            if (g.size() == 0) continue;
            auto& w = var.mutable_value();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double gk = g[k];
                m[k] = b1_ * m[k] + (1.0 - b1_) * gk;
                v[k] = b2_ * v[k] + (1.0 - b2_) * gk * gk;
                const double update = lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
                w[k] = static_cast<T>(static_cast<double>(w[k]) - update);
            }
        }
    }

private:
    ParamList<T>& params_;
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace tunedetect::nn
