#pragma once

#include "codac/finite_mdp.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace codac {

struct CriticDims {
    int state_dim = 1;
    int n_actions = 1;
    int hidden = 256;
    int n_cos = 64;

    int input_dim() const { return state_dim + n_actions; }
    bool operator==(const CriticDims &) const = default;
};

/// Quantile critic G(tau; s, a) = h . (psi(s, a) * phi(tau)) + b_out with
///   psi(s, a) = relu(W1 [s; onehot(a)] + b1)
///   phi(tau)  = sigmoid(Wc cos(pi i tau) + bc),  i = 1..n_cos.
///
/// All parameters live in one flat vector in the order W1, b1, Wc, bc, h, b_out
/// (matrices column-major).
class CriticNet {
public:
    using MatMap = Eigen::Map<Eigen::MatrixXd>;
    using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
    using VecMap = Eigen::Map<Eigen::VectorXd>;
    using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

    CriticNet() : CriticNet(CriticDims{}) {}
    /// All-zero parameters.
    explicit CriticNet(CriticDims dims);
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    CriticNet(CriticDims dims, uint64_t seed);

    const CriticDims &dims() const { return dims_; }
    static Eigen::Index param_count(const CriticDims &dims);
    Eigen::Index size() const { return params_.size(); }

    Eigen::VectorXd &params() { return params_; }
    const Eigen::VectorXd &params() const { return params_; }
    void set_params(const Eigen::VectorXd &flat);

    MatMap w1() { return {params_.data() + off_w1_, dims_.hidden, dims_.input_dim()}; }
    ConstMatMap w1() const { return {params_.data() + off_w1_, dims_.hidden, dims_.input_dim()}; }
    VecMap b1() { return {params_.data() + off_b1_, dims_.hidden}; }
    ConstVecMap b1() const { return {params_.data() + off_b1_, dims_.hidden}; }
    MatMap wc() { return {params_.data() + off_wc_, dims_.hidden, dims_.n_cos}; }
    ConstMatMap wc() const { return {params_.data() + off_wc_, dims_.hidden, dims_.n_cos}; }
    VecMap bc() { return {params_.data() + off_bc_, dims_.hidden}; }
    ConstVecMap bc() const { return {params_.data() + off_bc_, dims_.hidden}; }
    VecMap head() { return {params_.data() + off_h_, dims_.hidden}; }
    ConstVecMap head() const { return {params_.data() + off_h_, dims_.hidden}; }
    double &head_bias() { return params_[off_out_]; }
    double head_bias() const { return params_[off_out_]; }

private:
    void layout();

    CriticDims dims_;
    Eigen::VectorXd params_;
    Eigen::Index off_w1_ = 0, off_b1_ = 0, off_wc_ = 0, off_bc_ = 0, off_h_ = 0, off_out_ = 0;
};

struct TargetNet {
    CriticNet net;
    double polyak = 5e-3;
};

TargetNet make_target(const CriticNet &net, double polyak = 5e-3);

/// target <- (1 - rho) target + rho net.
void polyak_update(TargetNet &target, const CriticNet &net);

/// cos(pi i tau) for i = 1..n_cos, one column per tau.
Eigen::MatrixXd cosine_features(std::span<const double> taus, int n_cos);

/// phi(tau), an H-vector with entries in (0, 1).
Eigen::VectorXd quantile_embedding(const CriticNet &net, double tau);

double forward(const CriticNet &net, std::span<const double> state, int action, double tau);

/// Column b of `states` is the state of sample b.
/// Returns G with G(b, k) = G(taus[k]; states[:, b], actions[b]).
Eigen::MatrixXd forward_batch(
    const CriticNet &net, const Eigen::MatrixXd &states, std::span<const int> actions, std::span<const double> taus);

/// Quantiles at `taus` for every action of one state: result(a, k).
Eigen::MatrixXd action_quantiles(const CriticNet &net, std::span<const double> state, std::span<const double> taus);

/// dL/dtheta for L = sum_{b,k} dG(b, k) G(b, k) with G = forward_batch(...).
Eigen::VectorXd backward_batch(
    const CriticNet &net,
    const Eigen::MatrixXd &states,
    std::span<const int> actions,
    std::span<const double> taus,
    const Eigen::MatrixXd &dG);

struct CriticBatch {
    Eigen::MatrixXd states;      // state_dim x B
    std::vector<int> actions;
    Eigen::VectorXd rewards;
    Eigen::MatrixXd next_states; // state_dim x B
    std::vector<int> next_actions;
    std::vector<bool> dones;

    int size() const { return static_cast<int>(actions.size()); }
};

struct LossAndGrad {
    double loss = 0.0;
    Eigen::VectorXd grad;
};

/// Distributional TD loss with explicit quantile draws shared across the batch:
///   delta_bij = r_b + gamma (1 - done_b) G'(taus_prime[j]; s'_b, a'_b) - G(taus[i]; s_b, a_b)
///   loss = mean_b (N N')^-1 sum_ij L_kappa(delta_bij; taus[i]).
/// The target net is held constant.
LossAndGrad td_loss_and_grads(
    const CriticNet &net,
    const TargetNet &target,
    const CriticBatch &batch,
    double gamma,
    std::span<const double> taus,
    std::span<const double> taus_prime,
    double kappa);

/// Same loss with n_tau and n_tau_prime uniform quantile draws from rng.
LossAndGrad td_loss_and_grads(
    const CriticNet &net,
    const TargetNet &target,
    const CriticBatch &batch,
    double gamma,
    int n_tau,
    int n_tau_prime,
    double kappa,
    Rng &rng);

double logsumexp(std::span<const double> values);

double logsumexp_exact(const CriticNet &net, std::span<const double> state, double tau);

/// Importance-sampled log-sum-exp over actions: M draws from the uniform
/// proposal and M from `policy_probs`, each weighted by 1 / (2 M q(a)).
double logsumexp_is(
    const CriticNet &net, std::span<const double> state, double tau, std::span<const double> policy_probs, int m,
    Rng &rng);

struct PenaltyResult {
    double penalty = 0.0;
    Eigen::VectorXd grad_theta;
    // d penalty / d alpha = omega * gap - zeta_thresh
    double grad_alpha = 0.0;
    // Batch mean of logsumexp_a G(tau) - mean_j G(tau_j; s, a_D).
    double gap = 0.0;
};

/// alpha (omega (mean_b [logsumexp_a G(tau; s_b, a) - mean_j G(taus[j]; s_b, a_b)]) - zeta_thresh)
/// with a single log-sum-exp level `tau` shared across the batch.
PenaltyResult codac_penalty_and_grads(
    const CriticNet &net,
    const Eigen::MatrixXd &states,
    std::span<const int> actions,
    double alpha,
    double omega,
    double zeta_thresh,
    double tau,
    std::span<const double> taus);

/// Draws the log-sum-exp level and N data quantile levels uniformly.
PenaltyResult codac_penalty_and_grads(
    const CriticNet &net,
    const Eigen::MatrixXd &states,
    std::span<const int> actions,
    double alpha,
    double omega,
    double zeta_thresh,
    int n_tau,
    Rng &rng);

enum class OptimizerKind { sgd, adam };

struct Optimizer {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long t = 0;

    /// Descent step params <- params - update(grad).
    void step(Eigen::VectorXd &params, const Eigen::VectorXd &grad);
};

OptimizerKind optimizer_from_string(const std::string &name);
std::string to_string(OptimizerKind kind);

/// One JSON header line (dims, seed, step, count) followed by raw little-endian float64 parameters.
void write_checkpoint(const CriticNet &net, uint64_t seed, long step, std::ostream &out);

struct Checkpoint {
    CriticNet net;
    uint64_t seed = 0;
    long step = 0;
};

Checkpoint read_checkpoint(std::istream &in);

} // namespace codac
