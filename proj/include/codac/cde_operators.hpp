#pragma once

#include "codac/finite_mdp.hpp"
#include "codac/return_dist.hpp"

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace codac {

enum class C0Mode { policy_ratio, constant, custom };

struct CdeConfig {
    double alpha = 0.0;
    double p = 2.0;
    double delta_conf = 0.05;
    double zeta_mono = 1.0;
    C0Mode c0_mode = C0Mode::policy_ratio;
    double c0_constant = 1.0;
    Eigen::MatrixXd c0_table;
    double tol = 1e-9;
    int max_iters = 100000;
    int n_quantiles = 32;

    void validate() const;
};

nlohmann::json cde_config_to_json(const CdeConfig &config);

/// Per-(s, a) quantile estimation error bound; +inf where n(s, a) = 0.
struct ConcentrationTable {
    Eigen::MatrixXd delta_sa;

    double max_finite() const;
    bool all_finite() const;
};

/// Raised when an empirical operator needs a state-action pair the dataset never visited.
class CoverageError : public std::runtime_error {
public:
    CoverageError(int s, int a);
    int s;
    int a;
};

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(int iterations, double residual);
    int iterations;
    double residual;
};

/// Successor and reward model that a distributional backup reads from.
/// Built from either the true MDP or an empirical estimate.
struct BackupModel {
    int n_states = 0;
    int n_actions = 0;
    double gamma = 0.0;
    std::vector<double> p;                 // [s][a][s']
    std::vector<RewardDist> rewards;       // [s][a]
    std::vector<bool> available;           // false for unvisited empirical pairs

    static BackupModel exact(const FiniteMDP &mdp);
    static BackupModel empirical(const EmpiricalModel &model, double gamma);
};

Eigen::MatrixXd bellman_q(const FiniteMDP &mdp, const TabularPolicy &policy, const Eigen::MatrixXd &q);

/// Q^pi by direct linear solve of (I - gamma P^pi) q = r.
Eigen::MatrixXd solve_q_linear(const FiniteMDP &mdp, const TabularPolicy &policy);

ZTable distributional_bellman(const BackupModel &model, const TabularPolicy &policy, const ZTable &z);
ZTable distributional_bellman(const FiniteMDP &mdp, const TabularPolicy &policy, const ZTable &z);
ZTable distributional_bellman(
    const EmpiricalModel &model, double gamma, const TabularPolicy &policy, const ZTable &z);

ZTable shift_op(const ZTable &z, const Eigen::MatrixXd &c);

/// c = |alpha c0 / p|^(1/(p-1)) sign(c0), elementwise.
Eigen::MatrixXd penalty_shift(const Eigen::MatrixXd &c0, double alpha, double p);

Eigen::MatrixXd c0_from_policies(const TabularPolicy &mu, const TabularPolicy &pi_beta, bool apply_positivity_shift);

ConcentrationTable concentration_delta(
    const Eigen::MatrixXi &counts, double zeta_mono, double delta_conf, int n_states, int n_actions);

/// Smallest alpha for which every shift c(s, a) dominates Delta(s, a).
double alpha_lower_bound(const ConcentrationTable &delta_table, const Eigen::MatrixXd &c0, double p);

/// A Z-table map together with a label for traces.
struct ZOperator {
    std::string name;
    std::function<ZTable(const ZTable &)> apply;
};

ZOperator exact_operator(const FiniteMDP &mdp, const TabularPolicy &policy);
ZOperator empirical_operator(const EmpiricalModel &model, double gamma, const TabularPolicy &policy);
/// O_c composed with the empirical operator; `c` is the already-scaled shift.
ZOperator conservative_operator(
    const EmpiricalModel &model, double gamma, const TabularPolicy &policy, const Eigen::MatrixXd &c);
ZOperator conservative_operator(const BackupModel &model, const TabularPolicy &policy, const Eigen::MatrixXd &c);

struct TraceRow {
    int iter;
    double residual;
    double wall_ms;
};

struct FixedPointResult {
    ZTable z;
    int iterations = 0;
    double residual = 0.0;
    std::vector<TraceRow> trace;
};

/// All-zero table clamped into [v_min, v_max].
ZTable initial_ztable(int n_states, int n_actions, int n, double v_min, double v_max);

/// Iterates z <- op(z) until the sup-norm change drops below tol.
/// Throws ConvergenceError after max_iters iterations.
FixedPointResult solve_fixed_point(const ZOperator &op, ZTable z0, double tol, int max_iters);

void write_trace_csv(const std::vector<TraceRow> &trace, std::ostream &out);

} // namespace codac
