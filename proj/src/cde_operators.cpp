#include "codac/cde_operators.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace codac {

namespace {

std::string coverage_message(int s, int a)
{
    std::ostringstream os;
    os << "dataset never visits (s=" << s << ", a=" << a << ")";
    return os.str();
}

std::string convergence_message(int iterations, double residual)
{
    std::ostringstream os;
    os << "fixed-point iteration did not converge after " << iterations << " iterations (residual " << residual
       << ")";
    return os.str();
}

void require_policy_shape(const TabularPolicy &policy, int n_states, int n_actions)
{
    if (policy.n_states() != n_states || policy.n_actions() != n_actions) {
        throw std::invalid_argument("policy shape does not match the model");
    }
}

} // namespace

void CdeConfig::validate() const
{
    if (!(p > 1.0)) {
        throw std::invalid_argument("CdeConfig: p must exceed 1");
    }
    if (!(tol > 0.0)) {
        throw std::invalid_argument("CdeConfig: tol must be positive");
    }
    if (alpha < 0.0) {
        throw std::invalid_argument("CdeConfig: alpha must be nonnegative");
    }
    if (!(delta_conf > 0.0 && delta_conf < 1.0)) {
        throw std::invalid_argument("CdeConfig: delta_conf must lie in (0, 1)");
    }
    if (!(zeta_mono > 0.0)) {
        throw std::invalid_argument("CdeConfig: zeta_mono must be positive");
    }
    if (max_iters < 1) {
        throw std::invalid_argument("CdeConfig: max_iters must be positive");
    }
    if (n_quantiles < 1) {
        throw std::invalid_argument("CdeConfig: n_quantiles must be positive");
    }
}

nlohmann::json cde_config_to_json(const CdeConfig &config)
{
    nlohmann::json j;
    j["alpha"] = config.alpha;
    j["p"] = config.p;
    j["delta_conf"] = config.delta_conf;
    j["zeta_mono"] = config.zeta_mono;
    switch (config.c0_mode) {
    case C0Mode::policy_ratio:
        j["c0_mode"] = "policy_ratio";
        break;
    case C0Mode::constant:
        j["c0_mode"] = "constant";
        j["c0_constant"] = config.c0_constant;
        break;
    case C0Mode::custom:
        j["c0_mode"] = "custom";
        break;
    }
    j["tol"] = config.tol;
    j["max_iters"] = config.max_iters;
    j["n_quantiles"] = config.n_quantiles;
    return j;
}

double ConcentrationTable::max_finite() const
{
    double worst = 0.0;
    for (Eigen::Index i = 0; i < delta_sa.size(); ++i) {
        const double d = delta_sa.data()[i];
        if (std::isfinite(d)) {
            worst = std::max(worst, d);
        }
    }
    return worst;
}

bool ConcentrationTable::all_finite() const
{
    return delta_sa.allFinite();
}

CoverageError::CoverageError(int s, int a) : std::runtime_error(coverage_message(s, a)), s(s), a(a) {}

ConvergenceError::ConvergenceError(int iterations, double residual)
    : std::runtime_error(convergence_message(iterations, residual)), iterations(iterations), residual(residual)
{
}

BackupModel BackupModel::exact(const FiniteMDP &mdp)
{
    BackupModel model;
    model.n_states = mdp.n_states;
    model.n_actions = mdp.n_actions;
    model.gamma = mdp.gamma;
    model.p = mdp.transition;
    model.rewards = mdp.rewards;
    model.available.assign(model.rewards.size(), true);
    return model;
}

BackupModel BackupModel::empirical(const EmpiricalModel &empirical, double gamma)
{
    BackupModel model;
    model.n_states = empirical.n_states;
    model.n_actions = empirical.n_actions;
    model.gamma = gamma;
    model.p = empirical.p_hat;
    model.rewards.resize(static_cast<size_t>(empirical.n_states) * empirical.n_actions);
    model.available.assign(model.rewards.size(), false);
    for (int s = 0; s < empirical.n_states; ++s) {
        for (int a = 0; a < empirical.n_actions; ++a) {
            const size_t sa = static_cast<size_t>(s) * empirical.n_actions + a;
            if (empirical.visited(s, a)) {
                model.rewards[sa] = empirical.reward_atoms(s, a);
                model.available[sa] = true;
            }
        }
    }
    return model;
}

Eigen::MatrixXd bellman_q(const FiniteMDP &mdp, const TabularPolicy &policy, const Eigen::MatrixXd &q)
{
    if (q.rows() != mdp.n_states || q.cols() != mdp.n_actions) {
        throw std::invalid_argument("bellman_q: Q shape does not match the MDP");
    }
    require_policy_shape(policy, mdp.n_states, mdp.n_actions);
    // v(s') = sum_a' pi(a'|s') Q(s', a')
    const Eigen::VectorXd v = (policy.probs.array() * q.array()).rowwise().sum();
    Eigen::MatrixXd out(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            double next = 0.0;
            const auto row = mdp.successors(s, a);
            for (int sn = 0; sn < mdp.n_states; ++sn) {
                next += row[static_cast<size_t>(sn)] * v(sn);
            }
            out(s, a) = mdp.mean_reward(s, a) + mdp.gamma * next;
        }
    }
    return out;
}

Eigen::MatrixXd solve_q_linear(const FiniteMDP &mdp, const TabularPolicy &policy)
{
    require_policy_shape(policy, mdp.n_states, mdp.n_actions);
    const int n = mdp.n_states * mdp.n_actions;
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd rhs(n);
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            const int row = s * mdp.n_actions + a;
            rhs(row) = mdp.mean_reward(s, a);
            for (int sn = 0; sn < mdp.n_states; ++sn) {
                for (int an = 0; an < mdp.n_actions; ++an) {
                    system(row, sn * mdp.n_actions + an) -= mdp.gamma * mdp.p(s, a, sn) * policy(sn, an);
                }
            }
        }
    }
    const Eigen::VectorXd q = system.partialPivLu().solve(rhs);
    Eigen::MatrixXd out(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            out(s, a) = q(s * mdp.n_actions + a);
        }
    }
    return out;
}

ZTable distributional_bellman(const BackupModel &model, const TabularPolicy &policy, const ZTable &z)
{
    if (z.n_states != model.n_states || z.n_actions != model.n_actions) {
        throw std::invalid_argument("distributional_bellman: Z-table shape does not match the model");
    }
    require_policy_shape(policy, model.n_states, model.n_actions);
    ZTable out(z.n_states, z.n_actions, z.n, z.v_min, z.v_max);
    std::vector<WeightedSample> samples;
    const double inv_n = 1.0 / z.n;
    for (int s = 0; s < model.n_states; ++s) {
        for (int a = 0; a < model.n_actions; ++a) {
            const size_t sa = static_cast<size_t>(s) * model.n_actions + a;
            if (!model.available[sa]) {
                throw CoverageError(s, a);
            }
            samples.clear();
            const double *succ = model.p.data() + sa * model.n_states;
            for (int sn = 0; sn < model.n_states; ++sn) {
                if (succ[sn] <= 0.0) {
                    continue;
                }
                for (int an = 0; an < model.n_actions; ++an) {
                    const double path = succ[sn] * policy(sn, an);
                    if (path <= 0.0) {
                        continue;
                    }
                    const auto next = z.at(sn, an);
                    for (const auto &atom : model.rewards[sa]) {
                        if (atom.prob <= 0.0) {
                            continue;
                        }
                        const double w = path * atom.prob * inv_n;
                        for (double v : next) {
                            samples.push_back({atom.value + model.gamma * v, w});
                        }
                    }
                }
            }
            project_quantiles(samples, out.at(s, a));
        }
    }
    return out;
}

ZTable distributional_bellman(const FiniteMDP &mdp, const TabularPolicy &policy, const ZTable &z)
{
    return distributional_bellman(BackupModel::exact(mdp), policy, z);
}

ZTable distributional_bellman(const EmpiricalModel &model, double gamma, const TabularPolicy &policy, const ZTable &z)
{
    return distributional_bellman(BackupModel::empirical(model, gamma), policy, z);
}

ZTable shift_op(const ZTable &z, const Eigen::MatrixXd &c)
{
    if (c.rows() != z.n_states || c.cols() != z.n_actions) {
        throw std::invalid_argument("shift_op: shift matrix shape does not match the Z-table");
    }
    ZTable out = z;
    for (int s = 0; s < z.n_states; ++s) {
        for (int a = 0; a < z.n_actions; ++a) {
            for (double &v : out.at(s, a)) {
                v -= c(s, a);
            }
        }
    }
    return out;
}

Eigen::MatrixXd penalty_shift(const Eigen::MatrixXd &c0, double alpha, double p)
{
    if (!(p > 1.0)) {
        throw std::invalid_argument("penalty_shift: p must exceed 1");
    }
    return c0.unaryExpr([alpha, p](double x) {
        const double sign = (x > 0.0) - (x < 0.0);
        return std::pow(std::abs(alpha * x / p), 1.0 / (p - 1.0)) * sign;
    });
}

Eigen::MatrixXd c0_from_policies(const TabularPolicy &mu, const TabularPolicy &pi_beta, bool apply_positivity_shift)
{
    if (mu.probs.rows() != pi_beta.probs.rows() || mu.probs.cols() != pi_beta.probs.cols()) {
        throw std::invalid_argument("c0_from_policies: policy shapes differ");
    }
    if ((pi_beta.probs.array() <= 0.0).any()) {
        throw std::invalid_argument(
            "c0_from_policies: behavior policy has a zero entry; every action must appear in the data "
            "for states in the dataset (coverage assumption)");
    }
    Eigen::MatrixXd c0 = ((mu.probs - pi_beta.probs).array() / pi_beta.probs.array()).matrix();
    if (apply_positivity_shift) {
        const double lowest = c0.minCoeff();
        if (lowest <= 0.0) {
            c0.array() += 1.0 - lowest;
        }
    }
    return c0;
}

ConcentrationTable concentration_delta(
    const Eigen::MatrixXi &counts, double zeta_mono, double delta_conf, int n_states, int n_actions)
{
    if (!(zeta_mono > 0.0)) {
        throw std::invalid_argument("concentration_delta: zeta must be positive");
    }
    if (!(delta_conf > 0.0 && delta_conf < 1.0)) {
        throw std::invalid_argument("concentration_delta: delta must lie in (0, 1)");
    }
    const double log_term = std::log(4.0 * n_states * n_actions / delta_conf);
    ConcentrationTable table{Eigen::MatrixXd(counts.rows(), counts.cols())};
    for (Eigen::Index s = 0; s < counts.rows(); ++s) {
        for (Eigen::Index a = 0; a < counts.cols(); ++a) {
            const int n = counts(s, a);
            table.delta_sa(s, a) = n > 0 ? std::sqrt(5.0 * n_states / n * log_term) / zeta_mono
                                         : std::numeric_limits<double>::infinity();
        }
    }
    return table;
}

double alpha_lower_bound(const ConcentrationTable &delta_table, const Eigen::MatrixXd &c0, double p)
{
    if (c0.rows() != delta_table.delta_sa.rows() || c0.cols() != delta_table.delta_sa.cols()) {
        throw std::invalid_argument("alpha_lower_bound: shape mismatch");
    }
    if ((c0.array() <= 0.0).any()) {
        throw std::invalid_argument("alpha_lower_bound: c0 must be positive everywhere");
    }
    double bound = 0.0;
    for (Eigen::Index s = 0; s < c0.rows(); ++s) {
        for (Eigen::Index a = 0; a < c0.cols(); ++a) {
            const double d = delta_table.delta_sa(s, a);
            if (!std::isfinite(d)) {
                continue;
            }
            bound = std::max(bound, p * std::pow(d, p - 1.0) / c0(s, a));
        }
    }
    return bound;
}

ZOperator exact_operator(const FiniteMDP &mdp, const TabularPolicy &policy)
{
    auto model = BackupModel::exact(mdp);
    return {"exact", [model = std::move(model), policy](const ZTable &z) {
                return distributional_bellman(model, policy, z);
            }};
}

ZOperator empirical_operator(const EmpiricalModel &empirical, double gamma, const TabularPolicy &policy)
{
    auto model = BackupModel::empirical(empirical, gamma);
    return {"empirical", [model = std::move(model), policy](const ZTable &z) {
                return distributional_bellman(model, policy, z);
            }};
}

ZOperator conservative_operator(const BackupModel &model, const TabularPolicy &policy, const Eigen::MatrixXd &c)
{
    return {"conservative", [model, policy, c](const ZTable &z) {
                return shift_op(distributional_bellman(model, policy, z), c);
            }};
}

ZOperator conservative_operator(
    const EmpiricalModel &empirical, double gamma, const TabularPolicy &policy, const Eigen::MatrixXd &c)
{
    return conservative_operator(BackupModel::empirical(empirical, gamma), policy, c);
}

ZTable initial_ztable(int n_states, int n_actions, int n, double v_min, double v_max)
{
    return ZTable(n_states, n_actions, n, v_min, v_max, std::clamp(0.0, v_min, v_max));
}

FixedPointResult solve_fixed_point(const ZOperator &op, ZTable z0, double tol, int max_iters)
{
    if (!(tol > 0.0) || max_iters < 1) {
        throw std::invalid_argument("solve_fixed_point: tol must be positive and max_iters at least 1");
    }
    using Clock = std::chrono::steady_clock;
    const auto start = Clock::now();
    FixedPointResult result;
    result.z = std::move(z0);
    for (int iter = 1; iter <= max_iters; ++iter) {
        ZTable next = op.apply(result.z);
        const double residual = sup_norm(next, result.z);
        result.z = std::move(next);
        result.iterations = iter;
        result.residual = residual;
        const double wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
        result.trace.push_back({iter, residual, wall_ms});
        if (residual < tol) {
            return result;
        }
    }
    throw ConvergenceError(result.iterations, result.residual);
}

void write_trace_csv(const std::vector<TraceRow> &trace, std::ostream &out)
{
    out << "iter,residual,wall_ms\n";
    for (const auto &row : trace) {
        out << row.iter << ',' << row.residual << ',' << row.wall_ms << '\n';
    }
}

} // namespace codac
