#pragma once

#include "codac/finite_mdp.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace codac {

struct RiskyPointMass {
    double goal_x = 0.1;
    double goal_y = 0.1;
    double risky_x = 0.5;
    double risky_y = 0.5;
    double risky_radius = 0.3;
    double risk_prob = 0.1;
    double risk_penalty = -50.0;
    double step_bonus = -0.1;
    double max_displacement = 0.1;
    double goal_tolerance = 0.1;
    int max_steps = 100;

    static constexpr int n_actions = 9;
    static constexpr int state_dim = 4;

    bool in_risky_region(double x, double y) const;
    double goal_distance(double x, double y) const;
    /// Displacement of action k: ((k % 3) - 1, (k / 3) - 1) scaled by max_displacement.
    std::array<double, 2> displacement(int action) const;
    nlohmann::json descriptor() const;
};

struct PointMassState {
    double x = 0.0;
    double y = 0.0;
    int steps = 0;

    /// (agent_x, agent_y, goal_x, goal_y)
    std::vector<double> observation(const RiskyPointMass &env) const;
};

struct PointMassStep {
    PointMassState state;
    double reward = 0.0;
    bool done = false;      // goal reached or step limit
    bool terminal = false;  // goal reached only
    bool violation = false; // post-step position inside the risky disk
};

PointMassState pm_reset(const RiskyPointMass &env, Rng &rng);
PointMassStep pm_step(const RiskyPointMass &env, const PointMassState &state, int action, Rng &rng);

/// W x W grid with the goal in cell (0, 0) and a square risky block in the middle.
struct RiskyGrid {
    int width = 7;
    // Side of the centered risky block.
    int risky_size = 3;
    double slip = 0.05;
    double gamma = 0.95;
    double risk_prob = 0.1;
    double risk_penalty = -50.0;
    double step_bonus = -0.1;

    static constexpr int n_actions = 5; // up, down, left, right, stay

    int n_states() const { return width * width; }
    int state_id(int row, int col) const { return row * width + col; }
    bool is_risky(int row, int col) const;
    bool is_goal(int row, int col) const { return row == 0 && col == 0; }
    nlohmann::json descriptor() const;
};

/// Slip replaces the chosen move with a uniformly random one of the five.
FiniteMDP grid_compile(const RiskyGrid &spec);

/// Deterministic policy moving toward the goal along the longer axis first.
TabularPolicy grid_shortest_path_policy(const RiskyGrid &spec);

struct DistBandit {
    std::vector<RewardDist> arms;

    int n_actions() const { return static_cast<int>(arms.size()); }
    void validate() const;
    double sample(int action, Rng &rng) const;
    /// Exact quantile of an arm's reward at level tau (left-continuous inverse CDF).
    double quantile(int action, double tau) const;
    nlohmann::json descriptor() const;
};

/// Common episodic interface used by the trainer for rollouts and evaluation.
class EpisodicEnv {
public:
    virtual ~EpisodicEnv() = default;
    virtual int state_dim() const = 0;
    virtual int n_actions() const = 0;
    virtual std::vector<double> reset(Rng &rng) = 0;

    struct Step {
        std::vector<double> observation;
        double reward = 0.0;
        bool done = false;
        bool terminal = false;
        bool violation = false;
    };
    virtual Step step(int action, Rng &rng) = 0;
    virtual nlohmann::json descriptor() const = 0;
};

class PointMassEnv : public EpisodicEnv {
public:
    explicit PointMassEnv(RiskyPointMass env = {}) : env_(env) {}
    int state_dim() const override { return RiskyPointMass::state_dim; }
    int n_actions() const override { return RiskyPointMass::n_actions; }
    std::vector<double> reset(Rng &rng) override;
    Step step(int action, Rng &rng) override;
    nlohmann::json descriptor() const override { return env_.descriptor(); }
    const PointMassState &state() const { return state_; }
    const RiskyPointMass &params() const { return env_; }

private:
    RiskyPointMass env_;
    PointMassState state_;
};

/// One-step episodes with observation [1.0].
class BanditEnv : public EpisodicEnv {
public:
    explicit BanditEnv(DistBandit bandit);
    int state_dim() const override { return 1; }
    int n_actions() const override { return bandit_.n_actions(); }
    std::vector<double> reset(Rng &rng) override;
    Step step(int action, Rng &rng) override;
    nlohmann::json descriptor() const override { return bandit_.descriptor(); }

private:
    DistBandit bandit_;
};

/// Finite MDP with one-hot observations, truncated at `horizon` steps.
/// Violations count steps taken from states listed in `risky_states`.
class TabularEnv : public EpisodicEnv {
public:
    TabularEnv(FiniteMDP mdp, int horizon, std::vector<bool> risky_states = {}, nlohmann::json descriptor = {});
    int state_dim() const override { return mdp_.n_states; }
    int n_actions() const override { return mdp_.n_actions; }
    std::vector<double> reset(Rng &rng) override;
    Step step(int action, Rng &rng) override;
    nlohmann::json descriptor() const override { return descriptor_; }

private:
    FiniteMDP mdp_;
    int horizon_;
    std::vector<bool> risky_;
    nlohmann::json descriptor_;
    int state_ = 0;
    int steps_ = 0;
};

std::vector<double> one_hot(int index, int size);

/// Transition with a real-valued state vector (PointMass, or one-hot tabular states).
struct VectorTransition {
    std::vector<double> s;
    int a = 0;
    double r = 0.0;
    std::vector<double> sn;
    bool done = false;
};

struct VectorDataset {
    int state_dim = 0;
    int n_actions = 0;
    std::vector<VectorTransition> transitions;
    DatasetMeta meta;

    size_t size() const { return transitions.size(); }
    bool empty() const { return transitions.empty(); }
};

VectorDataset to_vector_dataset(const OfflineDataset &dataset, int n_states, int n_actions);

/// Same line-delimited layout as the tabular format with array-valued "s" and "sn".
void write_vector_dataset(const VectorDataset &dataset, std::ostream &out);
VectorDataset read_vector_dataset(std::istream &in);

} // namespace codac
