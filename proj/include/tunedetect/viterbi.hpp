#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "tunedetect/common.hpp"

namespace tunedetect {

/// A transition model propagates the previous frame's log scores:
/// best[s] = max_p prev[p] + log T(p -> s), with the maximizing p in arg[s].
template <class T>
concept TransitionModel = requires(const T& t, std::span<const double> prev, std::span<double> best,
                                   std::span<std::uint32_t> arg) {
    { t.n_states() } -> std::convertible_to<std::size_t>;
    t.propagate(prev, best, arg);
};

/// Dense row-major log-transition matrix (from, to). Reference model for tests
/// and small problems.
class DenseTransition {
public:
    DenseTransition(std::size_t n, std::vector<double> log_probs)
        : n_(n), log_probs_(std::move(log_probs)) {
        if (log_probs_.size() != n * n) throw DomainError("DenseTransition: expected n*n entries");
    }

    [[nodiscard]] std::size_t n_states() const { return n_; }

    [[nodiscard]] double log_prob(std::size_t from, std::size_t to) const {
        return log_probs_[from * n_ + to];
    }

    void propagate(std::span<const double> prev, std::span<double> best,
                   std::span<std::uint32_t> arg) const {
        for (std::size_t s = 0; s < n_; ++s) {
            double b = -std::numeric_limits<double>::infinity();
            std::uint32_t a = 0;
            for (std::size_t p = 0; p < n_; ++p) {
                double v = prev[p] + log_probs_[p * n_ + s];
                if (v > b) {
                    b = v;
                    a = static_cast<std::uint32_t>(p);
                }
            }
            best[s] = b;
            arg[s] = a;
        }
    }

private:
    std::size_t n_;
    std::vector<double> log_probs_;
};

/// Most likely state sequence. `log_obs(t, out)` fills the per-state
/// observation log-likelihoods of frame t.
template <TransitionModel Trans, class ObsFn>
std::vector<std::size_t> viterbi(std::span<const double> log_init, std::size_t n_frames,
                                 ObsFn&& log_obs, const Trans& trans) {
    const std::size_t n = trans.n_states();
    if (log_init.size() != n) throw DomainError("viterbi: initial distribution size mismatch");
    std::vector<std::size_t> path;
    if (n_frames == 0) return path;

    std::vector<double> delta(n), best(n), obs(n);
    std::vector<std::uint32_t> back(n * n_frames, 0);
    log_obs(std::size_t{0}, std::span<double>(obs));
    for (std::size_t s = 0; s < n; ++s) delta[s] = log_init[s] + obs[s];

    for (std::size_t t = 1; t < n_frames; ++t) {
        std::span<std::uint32_t> arg(back.data() + t * n, n);
        trans.propagate(delta, best, arg);
        log_obs(t, std::span<double>(obs));
        for (std::size_t s = 0; s < n; ++s) delta[s] = best[s] + obs[s];
    }

    std::size_t state = 0;
    for (std::size_t s = 1; s < n; ++s)
        if (delta[s] > delta[state]) state = s;
    path.assign(n_frames, 0);
    for (std::size_t t = n_frames; t-- > 0;) {
        path[t] = state;
        if (t > 0) state = back[t * n + state];
    }
    return path;
}

}  // namespace tunedetect
