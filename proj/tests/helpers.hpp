#pragma once

#include "codac/finite_mdp.hpp"

#include <algorithm>
#include <random>
#include <vector>

namespace testing {

inline codac::FiniteMDP one_state_mdp(double reward, double gamma)
{
    codac::FiniteMDP mdp(1, 1, gamma);
    mdp.p(0, 0, 0) = 1.0;
    mdp.reward(0, 0) = {{reward, 1.0}};
    mdp.fit_reward_range();
    return mdp;
}

// Three states, two actions; the Python oracle in tests/oracles uses the same numbers.
inline codac::FiniteMDP oracle_mdp()
{
    codac::FiniteMDP mdp(3, 2, 0.5);
    const double P[3][2][3] = {
        {{0.2, 0.5, 0.3}, {0.6, 0.1, 0.3}},
        {{0.3, 0.3, 0.4}, {0.0, 0.5, 0.5}},
        {{0.5, 0.25, 0.25}, {0.1, 0.8, 0.1}},
    };
    for (int s = 0; s < 3; ++s) {
        for (int a = 0; a < 2; ++a) {
            for (int t = 0; t < 3; ++t) {
                mdp.p(s, a, t) = P[s][a][t];
            }
        }
    }
    mdp.reward(0, 0) = {{0.0, 0.5}, {1.0, 0.5}};
    mdp.reward(0, 1) = {{0.2, 1.0}};
    mdp.reward(1, 0) = {{0.4, 0.3}, {0.8, 0.7}};
    mdp.reward(1, 1) = {{1.0, 0.2}, {0.0, 0.8}};
    mdp.reward(2, 0) = {{0.6, 1.0}};
    mdp.reward(2, 1) = {{0.1, 0.5}, {0.9, 0.5}};
    mdp.r_min = 0.0;
    mdp.r_max = 1.0;
    return mdp;
}

inline codac::TabularPolicy oracle_policy()
{
    codac::TabularPolicy pi;
    pi.probs.resize(3, 2);
    pi.probs << 0.5, 0.5, 0.3, 0.7, 0.9, 0.1;
    return pi;
}

// Property-test generator: random sorted vector with entries in [lo, hi].
inline std::vector<double> sorted_uniform(int n, double lo, double hi, std::mt19937_64 &rng)
{
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto &x : v) {
        x = u(rng);
    }
    std::sort(v.begin(), v.end());
    return v;
}

} // namespace testing
