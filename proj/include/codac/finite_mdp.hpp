#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace codac {

using Rng = std::mt19937_64;

struct RewardAtom {
    double value;
    double prob;
};

using RewardDist = std::vector<RewardAtom>;

/// Tabular MDP with finite reward distributions.
///
/// Transitions are stored flat as P[s][a][s']. Return bounds follow from
/// the reward range: v_min = r_min / (1 - gamma), v_max = r_max / (1 - gamma).
struct FiniteMDP {
    int n_states = 0;
    int n_actions = 0;
    double gamma = 0.9;
    double r_min = 0.0;
    double r_max = 0.0;
    std::vector<double> transition;
    std::vector<RewardDist> rewards;
    // Start-state distribution for dataset generation; empty means uniform.
    std::vector<double> initial;

    FiniteMDP() = default;
    FiniteMDP(int n_states, int n_actions, double gamma);

    double p(int s, int a, int sn) const { return transition[index(s, a) * n_states + sn]; }
    double &p(int s, int a, int sn) { return transition[index(s, a) * n_states + sn]; }
    std::span<const double> successors(int s, int a) const {
        return {transition.data() + index(s, a) * n_states, static_cast<size_t>(n_states)};
    }

    const RewardDist &reward(int s, int a) const { return rewards[index(s, a)]; }
    RewardDist &reward(int s, int a) { return rewards[index(s, a)]; }
    double mean_reward(int s, int a) const;

    double v_min() const { return r_min / (1.0 - gamma); }
    double v_max() const { return r_max / (1.0 - gamma); }

    // Sets r_min / r_max to the extreme reward atoms.
    void fit_reward_range();

    size_t index(int s, int a) const { return static_cast<size_t>(s) * n_actions + a; }
};

/// Stochastic policy pi(a|s), one row per state.
struct TabularPolicy {
    Eigen::MatrixXd probs;

    static TabularPolicy uniform(int n_states, int n_actions);
    static TabularPolicy deterministic(std::span<const int> actions, int n_actions);

    int n_states() const { return static_cast<int>(probs.rows()); }
    int n_actions() const { return static_cast<int>(probs.cols()); }
    double operator()(int s, int a) const { return probs(s, a); }
};

struct Transition {
    int s;
    int a;
    double r;
    int sn;
    bool done;
};

struct DatasetMeta {
    uint64_t seed = 0;
    std::string policy;
    std::string env;
    int episodes = 0;
    // Self-describing environment parameters (name, version, constants).
    nlohmann::json env_descriptor = nlohmann::json::object();
};

struct OfflineDataset {
    std::vector<Transition> transitions;
    DatasetMeta meta;

    size_t size() const { return transitions.size(); }
    bool empty() const { return transitions.empty(); }
};

struct EmpiricalModel {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> p_hat;                     // [s][a][s']
    std::vector<std::vector<double>> reward_samples; // [s][a] -> observed rewards
    Eigen::MatrixXi counts;                        // n[s][a]

    bool visited(int s, int a) const { return counts(s, a) > 0; }
    double p(int s, int a, int sn) const {
        return p_hat[(static_cast<size_t>(s) * n_actions + a) * n_states + sn];
    }
    const std::vector<double> &rewards(int s, int a) const {
        return reward_samples[static_cast<size_t>(s) * n_actions + a];
    }
    // Observed rewards collapsed into atoms with empirical frequencies.
    RewardDist reward_atoms(int s, int a) const;
};

struct Violation {
    std::string location;
    std::string message;
};

std::vector<Violation> validate_mdp(const FiniteMDP &mdp);
std::vector<Violation> validate_policy(const TabularPolicy &policy);

int sample_index(std::span<const double> probs, Rng &rng);

/// Samples a trajectory of at most `horizon` steps. The sn field of each
/// transition is the sampled successor; tabular MDPs are continuing, so
/// done is always false.
std::vector<Transition> rollout(
    const FiniteMDP &mdp, const TabularPolicy &policy, int s0, int horizon, Rng &rng);

/// Concatenates `n_episodes` rollouts from start states drawn from
/// `mdp.initial`. The rng is seeded from `seed` so the dataset records it.
OfflineDataset generate_dataset(
    const FiniteMDP &mdp,
    const TabularPolicy &policy,
    int n_episodes,
    int horizon,
    uint64_t seed,
    const std::string &policy_descriptor = "unspecified");

TabularPolicy empirical_behavior_policy(const OfflineDataset &dataset, int n_states, int n_actions);

EmpiricalModel estimate_empirical_model(const OfflineDataset &dataset, int n_states, int n_actions);

nlohmann::json mdp_to_json(const FiniteMDP &mdp);
FiniteMDP mdp_from_json(const nlohmann::json &j);

// Line-delimited dataset file: one {"meta":{...}} line, then one record per transition.
void write_dataset(const OfflineDataset &dataset, std::ostream &out);
OfflineDataset read_dataset(std::istream &in);

} // namespace codac
