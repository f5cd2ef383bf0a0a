#pragma once

#include "codac/critic.hpp"
#include "codac/envs.hpp"
#include "codac/return_dist.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace codac {

struct TrainerConfig {
    double gamma = 0.99;
    int n_tau = 32;
    double kappa = 1.0;
    // Accepted for config compatibility; the policy is read off the critic in closed form.
    double lr_actor = 3e-4;
    double lr_critic = 3e-5;
    double lr_alpha = 3e-4;
    double polyak = 5e-3;
    int batch_size = 256;
    double omega = 0.01;
    // -1 freezes alpha at alpha_init.
    double zeta_thresh = 10.0;
    double alpha_init = 1.0;
    DistortionSpec risk = DistortionSpec::uniform();
    long total_steps = 10000;
    uint64_t seed = 0;
    // Softmax temperature of the policy used for next-action draws; 0 means argmax.
    double temperature = 1.0;
    long eval_interval = 1000;
    int eval_episodes = 100;
    OptimizerKind optimizer = OptimizerKind::adam;
    int hidden = 256;
    int n_cos = 64;

    bool alpha_frozen() const { return zeta_thresh == -1.0; }
    void validate() const;
};

nlohmann::json trainer_config_to_json(const TrainerConfig &config);

struct TrainerState {
    CriticNet critic;
    TargetNet target;
    double alpha = 1.0;
    long step = 0;
    Rng rng;
    Optimizer optimizer;
};

TrainerState init_trainer(int state_dim, int n_actions, const TrainerConfig &config);

/// Distorted expectation of each action's sorted midpoint quantiles at one state.
Eigen::VectorXd action_scores(const CriticNet &critic, std::span<const double> state, const DistortionSpec &risk, int n_quantiles);

/// softmax(Phi_g / temperature); temperature 0 puts uniform mass on the maximizers.
Eigen::VectorXd policy_from_critic(
    const CriticNet &critic, std::span<const double> state, const DistortionSpec &risk, double temperature,
    int n_quantiles = 32);

/// Samples one action per column of `states` from policy_from_critic.
std::vector<int> draw_actions(
    const CriticNet &critic, const Eigen::MatrixXd &states, const DistortionSpec &risk, double temperature,
    int n_quantiles, Rng &rng);

/// Argmax of action_scores with ties broken uniformly.
int greedy_action(const CriticNet &critic, std::span<const double> state, const DistortionSpec &risk, int n_quantiles, Rng &rng);

/// Uniform sampling with replacement. next_actions is left empty.
CriticBatch sample_batch(const VectorDataset &dataset, int batch_size, Rng &rng);

struct StepStats {
    double td_loss = 0.0;
    double penalty = 0.0;
    double gap = 0.0;
};

/// One update: next-action draw, critic step on TD loss + penalty, dual alpha
/// step, Polyak target update, step counter.
StepStats update_step(TrainerState &state, CriticBatch batch, const TrainerConfig &config);

struct EvalMetrics {
    double mean = 0.0;
    double median = 0.0;
    double cvar10 = 0.0;
    long violations = 0;
    std::vector<double> returns;
};

/// Mean, median, and the mean of the bottom ceil(0.1 n) returns.
EvalMetrics summarize_returns(std::vector<double> returns, long violations);

struct Trajectory {
    std::vector<std::vector<double>> observations;
    std::vector<int> actions;
    std::vector<double> rewards;
};

/// Greedy rollouts; returns are undiscounted episode sums.
EvalMetrics evaluate(
    const CriticNet &critic,
    EpisodicEnv &env,
    int n_episodes,
    const DistortionSpec &risk,
    Rng &rng,
    int n_quantiles = 32,
    std::vector<Trajectory> *trajectories = nullptr);

struct MetricsRow {
    long step = 0;
    double mean = 0.0;
    double median = 0.0;
    double cvar10 = 0.0;
    long violations = 0;
    double alpha = 0.0;
    double td_loss = 0.0;
    double penalty = 0.0;
};

struct TrainResult {
    TrainerState state;
    std::vector<MetricsRow> metrics;
};

/// Runs config.total_steps updates. Every eval_interval steps a metrics row is
/// recorded; evaluation fields are NaN when no environment is given.
TrainResult train(const VectorDataset &dataset, const TrainerConfig &config, EpisodicEnv *eval_env = nullptr);

void write_metrics_csv(const std::vector<MetricsRow> &rows, std::ostream &out);

struct OnlineCollectConfig {
    int episodes = 100;
    double epsilon = 0.3;
    // Updates start once the buffer holds this many transitions.
    int warmup = 256;
    // Gradient updates per environment step.
    int updates_per_step = 1;
};

/// Trains a risk-neutral agent online (penalty off, epsilon-greedy acting)
/// and returns its replay buffer.
VectorDataset collect_replay_buffer(EpisodicEnv &env, const TrainerConfig &config, const OnlineCollectConfig &collect);

struct GapProbe {
    int probes = 0;
    int positive = 0;
    std::vector<double> gaps;

    double positive_fraction() const { return probes == 0 ? 0.0 : static_cast<double>(positive) / probes; }
};

/// For random dataset transitions (s, a_D) and tau ~ U(0, 1), compares
/// G(tau; s, a_D) against the mean of G(tau; s, a) over the other actions.
GapProbe quantile_gap_probe(const CriticNet &critic, const VectorDataset &dataset, int n_probes, Rng &rng);

} // namespace codac
