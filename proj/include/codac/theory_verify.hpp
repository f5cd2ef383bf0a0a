#pragma once

#include "codac/cde_operators.hpp"
#include "codac/finite_mdp.hpp"
#include "codac/return_dist.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace codac {

enum class TheoremId {
    contraction,
    lower_bound,
    distorted_lower_bound,
    gap_expansion,
    distorted_gap_expansion,
    empirical_fixed_point_bound,
};

std::string to_string(TheoremId id);
TheoremId theorem_from_string(const std::string &name);
/// Probabilistic statements are verified by pass rate, the rest must hold on every trial.
bool is_probabilistic(TheoremId id);

/// Outcome of running one theorem check over one or more trials.
///
/// A margin is positive when the asserted inequality holds with room to
/// spare (slack included), except for contraction where the margin is the
/// measured ratio minus gamma.
struct TheoremReport {
    TheoremId theorem_id = TheoremId::contraction;
    int trials = 0;
    int passes = 0;
    int skipped = 0;
    double worst_margin = 0.0;
    CdeConfig config;
    uint64_t seed = 0;
    std::vector<double> margins;
    std::vector<bool> trial_passed;

    double pass_rate() const { return trials == 0 ? 0.0 : static_cast<double>(passes) / trials; }
    /// Pass-rate threshold: 1 - delta - 0.03 for probabilistic theorems, 1 otherwise.
    double required_pass_rate() const;
    bool passed() const;

    void add_trial(double margin, bool pass);
    void absorb(const TheoremReport &other);
};

nlohmann::json report_to_json(const TheoremReport &report);

/// 2 (v_max - v_min) / N: slack added to every one-sided tabular assertion.
double projection_slack(double v_min, double v_max, int n);

struct RandomMdpSpec {
    int n_states = 4;
    int n_actions = 3;
    double gamma = 0.9;
    int reward_atoms = 3;
    // Reward atoms are drawn from an evenly spaced grid on [0, 1].
    int reward_grid = 11;
};

/// Dirichlet(1) transition rows; reward atoms on a grid in [0, 1] with Dirichlet(1) weights.
FiniteMDP random_mdp(const RandomMdpSpec &spec, Rng &rng);

std::vector<double> dirichlet(int k, double concentration, Rng &rng);

/// Dirichlet(1) rows mixed with the uniform policy: (1 - uniform_mix) Dir + uniform_mix U.
TabularPolicy random_policy(int n_states, int n_actions, Rng &rng, double uniform_mix = 0.0);

/// Ground-truth MDP, evaluated policy, and the dataset-derived estimate.
struct EvaluationProblem {
    FiniteMDP mdp;
    TabularPolicy policy;
    BackupModel estimate;
    TabularPolicy behavior;
    Eigen::MatrixXi counts;
};

/// Throws CoverageError when the dataset misses any (s, a).
EvaluationProblem make_problem(const FiniteMDP &mdp, const OfflineDataset &dataset, const TabularPolicy &policy);

/// Problem whose estimate is the true model itself (zero estimation error).
EvaluationProblem make_exact_problem(const FiniteMDP &mdp, const TabularPolicy &policy, Eigen::MatrixXi counts);

/// c0 per the configured mode; policy_ratio uses mu against the behavior policy.
Eigen::MatrixXd resolve_c0(const CdeConfig &config, const TabularPolicy &mu, const TabularPolicy &behavior);

/// alpha_lower_bound for the problem's counts and the config's c0.
double certified_alpha(const EvaluationProblem &problem, const CdeConfig &config, const TabularPolicy &mu);

TheoremReport check_contraction(
    const ZOperator &op,
    int n_states,
    int n_actions,
    int n_quantiles,
    double v_min,
    double v_max,
    double gamma,
    double p,
    int trials,
    Rng &rng,
    double slack = 0.02);

TheoremReport check_contraction(
    const FiniteMDP &mdp, const TabularPolicy &policy, double p, int trials, Rng &rng, int n_quantiles = 64,
    double slack = 0.02);

struct LowerBoundResult {
    TheoremReport quantile;
    TheoremReport distorted;
};

/// Solves Z^pi and the conservative fixed point, then checks the per-quantile
/// lower bound and the distorted-expectation lower bound for each g.
LowerBoundResult check_lower_bounds(
    const EvaluationProblem &problem,
    const CdeConfig &config,
    const TabularPolicy &mu,
    const std::vector<DistortionSpec> &g_list);

TheoremReport check_quantile_lower_bound(
    const FiniteMDP &mdp, const OfflineDataset &dataset, const TabularPolicy &policy, const CdeConfig &config);

TheoremReport check_distorted_lower_bound(
    const FiniteMDP &mdp,
    const OfflineDataset &dataset,
    const TabularPolicy &policy,
    const CdeConfig &config,
    const std::vector<DistortionSpec> &g_list);

struct GapExpansionResult {
    TheoremReport quantile;
    TheoremReport distorted;
};

/// Gap expansion between behavior and mu with raw (unshifted) c0; requires p == 2.
GapExpansionResult check_gap_expansion(
    const EvaluationProblem &problem,
    const TabularPolicy &mu,
    const CdeConfig &config,
    const std::vector<DistortionSpec> &g_list);

GapExpansionResult check_gap_expansion(
    const FiniteMDP &mdp,
    const OfflineDataset &dataset,
    const TabularPolicy &policy,
    const TabularPolicy &mu,
    const CdeConfig &config);

TheoremReport check_empirical_fixed_point_bound(const EvaluationProblem &problem, const CdeConfig &config);

TheoremReport check_empirical_fixed_point_bound(
    const FiniteMDP &mdp, const OfflineDataset &dataset, const TabularPolicy &policy, const CdeConfig &config);

/// Randomized suite settings used by the CLI and the acceptance tests.
struct SuiteConfig {
    int trials = 100;
    uint64_t seed = 0;
    CdeConfig cde;
    // When unset, lower-bound suites use the certified alpha for each trial.
    std::optional<double> alpha;
    RandomMdpSpec mdp;
    // Contraction suite draws |S| in [2, max_states] and |A| in [1, max_actions].
    int max_states = 10;
    int max_actions = 4;
    int contraction_quantiles = 64;
    double contraction_slack = 0.02;
    int dataset_transitions = 5000;
    int episode_horizon = 100;
    // Transitions per (s, a) targeted by the empirical fixed-point suite.
    int per_pair_transitions = 500;
};

Rng trial_rng(uint64_t seed, int trial);

/// Runs the randomized suite for one theorem and returns its aggregate report.
TheoremReport run_suite(TheoremId id, const SuiteConfig &config);

/// The contraction suite checks all three operators; reports are returned in
/// the order exact, empirical, conservative.
std::vector<TheoremReport> run_contraction_suite(const SuiteConfig &config);
LowerBoundResult run_lower_bound_suite(const SuiteConfig &config);
GapExpansionResult run_gap_suite(const SuiteConfig &config);
TheoremReport run_empirical_bound_suite(const SuiteConfig &config);

} // namespace codac
