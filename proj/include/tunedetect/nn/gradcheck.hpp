#pragma once

#include <functional>
#include <random>

#include "tunedetect/nn/autograd.hpp"

namespace tunedetect::nn {

struct GradCheckResult {
    double max_rel_error = 0;
    std::size_t checked = 0;
};

/// Compares reverse-mode gradients of the scalar `loss` with central finite
/// differences on up to `per_tensor` random entries of each input.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckResult grad_check(std::vector<Var<double>> inputs, const std::function<Var<double>()>& loss,
                                  std::size_t per_tensor = 20, std::uint64_t seed = 7, double h = 1e-4,
                                  double floor = 1e-6) {
    for (auto& v : inputs) v.zero_grad();
    auto out = loss();
    if (out.value().size() != 1) throw DomainError("grad_check: loss must be scalar");
    backward(out);

    std::mt19937_64 rng(seed);
    GradCheckResult res;
    for (auto& v : inputs) {
        const std::size_t n = v.value().size();
        const Tensor<double> analytic = v.grad().size() ? v.grad() : Tensor<double>(v.shape());
        std::vector<std::size_t> idx;
        if (n <= per_tensor) {
            for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
        } else {
            for (std::size_t k = 0; k < per_tensor; ++k) idx.push_back(static_cast<std::size_t>(rng() % n));
        }
        NoGradGuard guard;
        for (auto i : idx) {
            double& x = v.mutable_value()[i];
            const double x0 = x;
            x = x0 + h;
            const double up = loss().value()[0];
            x = x0 - h;
            const double down = loss().value()[0];
            x = x0;
            const double numeric = (up - down) / (2 * h);
            const double a = analytic[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            res.max_rel_error = std::max(res.max_rel_error, rel);
            ++res.checked;
        }
    }
    return res;
}

}  // namespace tunedetect::nn
