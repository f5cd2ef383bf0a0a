#include "codac/critic.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "codac/return_dist.hpp"

namespace codac {

namespace {

// Columns per block when sweeping a batch. Keeps the H x block hidden
// activations cache resident instead of materializing H x B matrices.
constexpr Eigen::Index kChunk = 128;

struct ForwardCache {
    Eigen::MatrixXd states; // state_dim x B
    std::vector<int> actions;
    Eigen::MatrixXd cosf;   // n_cos x K
    Eigen::MatrixXd phi;    // H x K
    Eigen::MatrixXd g;      // B x K
};

void check_inputs(const CriticDims &dims, const Eigen::MatrixXd &states, std::span<const int> actions)
{
    if (states.rows() != dims.state_dim) {
        throw std::invalid_argument(
            "critic: state dimension " + std::to_string(states.rows()) + " does not match " +
            std::to_string(dims.state_dim));
    }
    if (static_cast<Eigen::Index>(actions.size()) != states.cols()) {
        throw std::invalid_argument("critic: number of actions differs from number of states");
    }
    for (int a : actions) {
        if (a < 0 || a >= dims.n_actions) {
            throw std::invalid_argument("critic: action id " + std::to_string(a) + " out of range");
        }
    }
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd &z)
{
    return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

// Pre-activations of the feature layer for columns [begin, begin + pre.cols()).
// The one-hot half of the input selects a column of W1.
void hidden_preactivation(
    const CriticNet &net, const Eigen::MatrixXd &states, const std::vector<int> &actions, Eigen::Index begin,
    Eigen::MatrixXd &pre)
{
    const int sd = net.dims().state_dim;
    const auto w1 = net.w1();
    for (Eigen::Index b = 0; b < pre.cols(); ++b) {
        auto col = pre.col(b);
        col = net.b1() + w1.col(sd + actions[static_cast<size_t>(begin + b)]);
        for (int k = 0; k < sd; ++k) {
            col += states(k, begin + b) * w1.col(k);
        }
    }
}

ForwardCache run_forward(
    const CriticNet &net, const Eigen::MatrixXd &states, std::span<const int> actions, std::span<const double> taus)
{
    ForwardCache c;
    const CriticDims &d = net.dims();
    check_inputs(d, states, actions);
    c.states = states;
    c.actions.assign(actions.begin(), actions.end());
    c.cosf = cosine_features(taus, d.n_cos);
    c.phi = sigmoid((net.wc() * c.cosf).colwise() + net.bc());
    const Eigen::MatrixXd a = net.head().asDiagonal() * c.phi; // H x K
    const Eigen::Index n = states.cols();
    c.g.resize(n, a.cols());
    Eigen::MatrixXd pre;
    for (Eigen::Index begin = 0; begin < n; begin += kChunk) {
        const Eigen::Index len = std::min(kChunk, n - begin);
        pre.resize(d.hidden, len);
        hidden_preactivation(net, c.states, c.actions, begin, pre);
        c.g.middleRows(begin, len).noalias() = pre.cwiseMax(0.0).transpose() * a;
    }
    c.g.array() += net.head_bias();
    return c;
}

Eigen::VectorXd run_backward(const CriticNet &net, const ForwardCache &c, const Eigen::MatrixXd &dG)
{
    const CriticDims &d = net.dims();
    CriticNet grad(d);
    const Eigen::MatrixXd a = net.head().asDiagonal() * c.phi; // H x K
    Eigen::MatrixXd d_a = Eigen::MatrixXd::Zero(d.hidden, c.phi.cols()); // H x K
    const Eigen::Index n = c.states.cols();
    Eigen::MatrixXd pre, psi, d_pre;
    auto w1 = grad.w1();
    auto b1 = grad.b1();
    for (Eigen::Index begin = 0; begin < n; begin += kChunk) {
        const Eigen::Index len = std::min(kChunk, n - begin);
        pre.resize(d.hidden, len);
        hidden_preactivation(net, c.states, c.actions, begin, pre);
        psi = pre.cwiseMax(0.0);
        const auto dg = dG.middleRows(begin, len);
        d_a.noalias() += psi * dg;
        d_pre.noalias() = a * dg.transpose();
        d_pre = (pre.array() > 0.0).select(d_pre, 0.0);
        for (Eigen::Index b = 0; b < len; ++b) {
            const auto col = d_pre.col(b);
            for (int k = 0; k < d.state_dim; ++k) {
                w1.col(k) += c.states(k, begin + b) * col;
            }
            w1.col(d.state_dim + c.actions[static_cast<size_t>(begin + b)]) += col;
            b1 += col;
        }
    }
    grad.head() = (d_a.array() * c.phi.array()).rowwise().sum().matrix();
    grad.head_bias() = dG.sum();
    const Eigen::MatrixXd d_phi = net.head().asDiagonal() * d_a;
    const Eigen::MatrixXd d_prec = (d_phi.array() * c.phi.array() * (1.0 - c.phi.array())).matrix();
    grad.wc() = d_prec * c.cosf.transpose();
    grad.bc() = d_prec.rowwise().sum();
    return std::move(grad.params());
}

std::vector<double> uniform_taus(int n, Rng &rng)
{
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> taus(static_cast<size_t>(n));
    for (double &t : taus) {
        t = unif(rng);
    }
    return taus;
}

Eigen::MatrixXd column(std::span<const double> state)
{
    return Eigen::Map<const Eigen::VectorXd>(state.data(), static_cast<Eigen::Index>(state.size()));
}

} // namespace

Eigen::Index CriticNet::param_count(const CriticDims &d)
{
    return static_cast<Eigen::Index>(d.hidden) * d.input_dim() + d.hidden + static_cast<Eigen::Index>(d.hidden) * d.n_cos +
           d.hidden + d.hidden + 1;
}

CriticNet::CriticNet(CriticDims dims) : dims_(dims)
{
    if (dims.state_dim < 1 || dims.n_actions < 1 || dims.hidden < 1 || dims.n_cos < 1) {
        throw std::invalid_argument("CriticNet dimensions must be positive");
    }
    layout();
    params_ = Eigen::VectorXd::Zero(param_count(dims_));
}

CriticNet::CriticNet(CriticDims dims, uint64_t seed) : CriticNet(dims)
{
    Rng rng(seed);
    auto fill = [&rng](double *begin, Eigen::Index count, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> unif(-bound, bound);
        for (Eigen::Index i = 0; i < count; ++i) {
            begin[i] = unif(rng);
        }
    };
    const int h = dims_.hidden;
    fill(params_.data() + off_w1_, static_cast<Eigen::Index>(h) * dims_.input_dim(), dims_.input_dim());
    fill(params_.data() + off_b1_, h, dims_.input_dim());
    fill(params_.data() + off_wc_, static_cast<Eigen::Index>(h) * dims_.n_cos, dims_.n_cos);
    fill(params_.data() + off_bc_, h, dims_.n_cos);
    fill(params_.data() + off_h_, h + 1, h);
}

void CriticNet::layout()
{
    const Eigen::Index h = dims_.hidden;
    off_w1_ = 0;
    off_b1_ = off_w1_ + h * dims_.input_dim();
    off_wc_ = off_b1_ + h;
    off_bc_ = off_wc_ + h * dims_.n_cos;
    off_h_ = off_bc_ + h;
    off_out_ = off_h_ + h;
}

void CriticNet::set_params(const Eigen::VectorXd &flat)
{
    if (flat.size() != params_.size()) {
        throw std::invalid_argument("CriticNet::set_params: expected " + std::to_string(params_.size()) +
                                    " values, got " + std::to_string(flat.size()));
    }
    params_ = flat;
}

TargetNet make_target(const CriticNet &net, double polyak)
{
    return {net, polyak};
}

void polyak_update(TargetNet &target, const CriticNet &net)
{
    if (!(target.net.dims() == net.dims())) {
        throw std::invalid_argument("polyak_update: target and source shapes differ");
    }
    target.net.params() = (1.0 - target.polyak) * target.net.params() + target.polyak * net.params();
}

Eigen::MatrixXd cosine_features(std::span<const double> taus, int n_cos)
{
    Eigen::MatrixXd c(n_cos, static_cast<Eigen::Index>(taus.size()));
    for (Eigen::Index k = 0; k < c.cols(); ++k) {
        const double tau = taus[static_cast<size_t>(k)];
        if (!(tau >= 0.0 && tau <= 1.0)) {
            throw std::invalid_argument("quantile level outside [0, 1]");
        }
        for (int i = 0; i < n_cos; ++i) {
            c(i, k) = std::cos((i + 1) * std::numbers::pi * tau);
        }
    }
    return c;
}

Eigen::VectorXd quantile_embedding(const CriticNet &net, double tau)
{
    const double taus[1] = {tau};
    return sigmoid((net.wc() * cosine_features(taus, net.dims().n_cos)).colwise() + net.bc());
}

double forward(const CriticNet &net, std::span<const double> state, int action, double tau)
{
    const int actions[1] = {action};
    const double taus[1] = {tau};
    return run_forward(net, column(state), actions, taus).g(0, 0);
}

Eigen::MatrixXd forward_batch(
    const CriticNet &net, const Eigen::MatrixXd &states, std::span<const int> actions, std::span<const double> taus)
{
    return run_forward(net, states, actions, taus).g;
}

Eigen::MatrixXd action_quantiles(const CriticNet &net, std::span<const double> state, std::span<const double> taus)
{
    const int n_actions = net.dims().n_actions;
    const Eigen::MatrixXd states = column(state).replicate(1, n_actions);
    std::vector<int> actions(static_cast<size_t>(n_actions));
    for (int a = 0; a < n_actions; ++a) {
        actions[static_cast<size_t>(a)] = a;
    }
    return run_forward(net, states, actions, taus).g;
}

Eigen::VectorXd backward_batch(
    const CriticNet &net,
    const Eigen::MatrixXd &states,
    std::span<const int> actions,
    std::span<const double> taus,
    const Eigen::MatrixXd &dG)
{
    const auto cache = run_forward(net, states, actions, taus);
    if (dG.rows() != cache.g.rows() || dG.cols() != cache.g.cols()) {
        throw std::invalid_argument("backward_batch: upstream gradient shape mismatch");
    }
    return run_backward(net, cache, dG);
}

LossAndGrad td_loss_and_grads(
    const CriticNet &net,
    const TargetNet &target,
    const CriticBatch &batch,
    double gamma,
    std::span<const double> taus,
    std::span<const double> taus_prime,
    double kappa)
{
    const int b = batch.size();
    if (b == 0) {
        throw std::invalid_argument("td_loss_and_grads: empty batch");
    }
    if (taus.empty() || taus_prime.empty()) {
        throw std::invalid_argument("td_loss_and_grads: need at least one quantile draw on each side");
    }
    if (batch.rewards.size() != b || static_cast<int>(batch.next_actions.size()) != b ||
        static_cast<int>(batch.dones.size()) != b || batch.next_states.cols() != b) {
        throw std::invalid_argument("td_loss_and_grads: batch fields have inconsistent lengths");
    }
    const auto cache = run_forward(net, batch.states, batch.actions, taus);
    const Eigen::MatrixXd next = forward_batch(target.net, batch.next_states, batch.next_actions, taus_prime);
    const auto n = static_cast<Eigen::Index>(taus.size());
    const auto n_prime = static_cast<Eigen::Index>(taus_prime.size());
    const double scale = 1.0 / (static_cast<double>(b) * n * n_prime);
    LossAndGrad out;
    Eigen::MatrixXd dG = Eigen::MatrixXd::Zero(b, n);
    for (int s = 0; s < b; ++s) {
        const double discount = batch.dones[static_cast<size_t>(s)] ? 0.0 : gamma;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double tau = taus[static_cast<size_t>(i)];
            double grad_sum = 0.0;
            for (Eigen::Index j = 0; j < n_prime; ++j) {
                const double delta = batch.rewards(s) + discount * next(s, j) - cache.g(s, i);
                out.loss += huber_quantile_loss(delta, tau, kappa);
                grad_sum += huber_quantile_loss_grad(delta, tau, kappa);
            }
            // d delta / d G = -1
            dG(s, i) = -grad_sum * scale;
        }
    }
    out.loss *= scale;
    out.grad = run_backward(net, cache, dG);
    return out;
}

LossAndGrad td_loss_and_grads(
    const CriticNet &net,
    const TargetNet &target,
    const CriticBatch &batch,
    double gamma,
    int n_tau,
    int n_tau_prime,
    double kappa,
    Rng &rng)
{
    if (n_tau < 1 || n_tau_prime < 1) {
        throw std::invalid_argument("td_loss_and_grads: N and N' must be at least 1");
    }
    const auto taus = uniform_taus(n_tau, rng);
    const auto taus_prime = uniform_taus(n_tau_prime, rng);
    return td_loss_and_grads(net, target, batch, gamma, taus, taus_prime, kappa);
}

double logsumexp(std::span<const double> values)
{
    if (values.empty()) {
        throw std::invalid_argument("logsumexp of an empty set");
    }
    const double top = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(top)) {
        return top;
    }
    double acc = 0.0;
    for (double v : values) {
        acc += std::exp(v - top);
    }
    return top + std::log(acc);
}

double logsumexp_exact(const CriticNet &net, std::span<const double> state, double tau)
{
    const double taus[1] = {tau};
    const Eigen::VectorXd q = action_quantiles(net, state, taus).col(0);
    return logsumexp(std::span<const double>(q.data(), static_cast<size_t>(q.size())));
}

double logsumexp_is(
    const CriticNet &net, std::span<const double> state, double tau, std::span<const double> policy_probs, int m,
    Rng &rng)
{
    const int n_actions = net.dims().n_actions;
    if (m < 1) {
        throw std::invalid_argument("logsumexp_is: M must be at least 1");
    }
    if (static_cast<int>(policy_probs.size()) != n_actions) {
        throw std::invalid_argument("logsumexp_is: proposal has the wrong number of actions");
    }
    const double taus[1] = {tau};
    const Eigen::VectorXd q = action_quantiles(net, state, taus).col(0);
    std::uniform_int_distribution<int> uniform(0, n_actions - 1);
    std::vector<double> terms;
    terms.reserve(static_cast<size_t>(2 * m));
    const double log_uniform = -std::log(static_cast<double>(n_actions));
    for (int k = 0; k < m; ++k) {
        terms.push_back(q(uniform(rng)) - log_uniform);
    }
    for (int k = 0; k < m; ++k) {
        const int a = sample_index(policy_probs, rng);
        const double prob = policy_probs[static_cast<size_t>(a)];
        if (!(prob > 0.0)) {
            throw std::domain_error(
                "logsumexp_is: proposal assigns zero probability to drawn action " + std::to_string(a));
        }
        terms.push_back(q(a) - std::log(prob));
    }
    return logsumexp(terms) - std::log(2.0 * m);
}

PenaltyResult codac_penalty_and_grads(
    const CriticNet &net,
    const Eigen::MatrixXd &states,
    std::span<const int> actions,
    double alpha,
    double omega,
    double zeta_thresh,
    double tau,
    std::span<const double> taus)
{
    if (alpha < 0.0) {
        throw std::invalid_argument("codac penalty: alpha must be nonnegative");
    }
    const auto b = states.cols();
    if (b == 0 || taus.empty()) {
        throw std::invalid_argument("codac penalty: empty batch or quantile set");
    }
    const int n_actions = net.dims().n_actions;
    // Every action at every batch state, sample-major: column b * A + a.
    Eigen::MatrixXd all_states(states.rows(), b * n_actions);
    std::vector<int> all_actions(static_cast<size_t>(b * n_actions));
    for (Eigen::Index s = 0; s < b; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            all_states.col(s * n_actions + a) = states.col(s);
            all_actions[static_cast<size_t>(s * n_actions + a)] = a;
        }
    }
    const double lse_tau[1] = {tau};
    const auto lse_cache = run_forward(net, all_states, all_actions, lse_tau);
    const auto data_cache = run_forward(net, states, actions, taus);
    const auto n = static_cast<Eigen::Index>(taus.size());

    Eigen::MatrixXd d_lse(b * n_actions, 1);
    double gap = 0.0;
    std::vector<double> row(static_cast<size_t>(n_actions));
    for (Eigen::Index s = 0; s < b; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            row[static_cast<size_t>(a)] = lse_cache.g(s * n_actions + a, 0);
        }
        const double lse = logsumexp(row);
        gap += lse - data_cache.g.row(s).mean();
        for (int a = 0; a < n_actions; ++a) {
            d_lse(s * n_actions + a, 0) = std::exp(row[static_cast<size_t>(a)] - lse) / static_cast<double>(b);
        }
    }
    gap /= static_cast<double>(b);

    PenaltyResult out;
    out.gap = gap;
    out.grad_alpha = omega * gap - zeta_thresh;
    out.penalty = alpha * out.grad_alpha;
    if (alpha == 0.0 || omega == 0.0) {
        out.grad_theta = Eigen::VectorXd::Zero(net.size());
        return out;
    }
    const Eigen::MatrixXd d_data = Eigen::MatrixXd::Constant(b, n, -1.0 / (static_cast<double>(b) * n));
    out.grad_theta = (alpha * omega) * (run_backward(net, lse_cache, d_lse) + run_backward(net, data_cache, d_data));
    return out;
}

PenaltyResult codac_penalty_and_grads(
    const CriticNet &net,
    const Eigen::MatrixXd &states,
    std::span<const int> actions,
    double alpha,
    double omega,
    double zeta_thresh,
    int n_tau,
    Rng &rng)
{
    if (n_tau < 1) {
        throw std::invalid_argument("codac penalty: N must be at least 1");
    }
    const double tau = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto taus = uniform_taus(n_tau, rng);
    return codac_penalty_and_grads(net, states, actions, alpha, omega, zeta_thresh, tau, taus);
}

void Optimizer::step(Eigen::VectorXd &params, const Eigen::VectorXd &grad)
{
    if (grad.size() != params.size()) {
        throw std::invalid_argument("optimizer: gradient size differs from parameter size");
    }
    if (kind == OptimizerKind::sgd) {
        params -= lr * grad;
        return;
    }
    if (m.size() != params.size()) {
        m = Eigen::VectorXd::Zero(params.size());
        v = Eigen::VectorXd::Zero(params.size());
        t = 0;
    }
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

OptimizerKind optimizer_from_string(const std::string &name)
{
    if (name == "sgd") {
        return OptimizerKind::sgd;
    }
    if (name == "adam") {
        return OptimizerKind::adam;
    }
    throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind)
{
    return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

void write_checkpoint(const CriticNet &net, uint64_t seed, long step, std::ostream &out)
{
    const auto &d = net.dims();
    nlohmann::json header{
        {"schema_version", 1},
        {"dims", {{"state_dim", d.state_dim}, {"n_actions", d.n_actions}, {"hidden", d.hidden}, {"n_cos", d.n_cos}}},
        {"seed", seed},
        {"step", step},
        {"count", net.size()},
        {"dtype", "float64-le"},
    };
    out << header.dump() << '\n';
    out.write(reinterpret_cast<const char *>(net.params().data()),
              static_cast<std::streamsize>(net.size() * sizeof(double)));
}

Checkpoint read_checkpoint(std::istream &in)
{
    std::string line;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("checkpoint: missing header");
    }
    const auto header = nlohmann::json::parse(line);
    const auto &dj = header.at("dims");
    CriticDims dims{dj.at("state_dim").get<int>(), dj.at("n_actions").get<int>(), dj.at("hidden").get<int>(),
                    dj.at("n_cos").get<int>()};
    Checkpoint ckpt{CriticNet(dims), header.value("seed", uint64_t{0}), header.value("step", 0L)};
    const auto count = header.at("count").get<Eigen::Index>();
    if (count != ckpt.net.size()) {
        throw std::invalid_argument("checkpoint: parameter count does not match dims");
    }
    in.read(reinterpret_cast<char *>(ckpt.net.params().data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
        throw std::invalid_argument("checkpoint: truncated parameter block");
    }
    return ckpt;
}

} // namespace codac
