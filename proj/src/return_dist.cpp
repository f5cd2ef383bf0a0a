#include "codac/return_dist.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace codac {

namespace {

// Cumulative weights that tie a midpoint up to rounding resolve to the
// smaller value, matching the infimum in the inverse-CDF definition.
constexpr double kTieTolerance = 1e-12;

} // namespace

std::vector<double> quantile_midpoints(int n)
{
    std::vector<double> taus(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        taus[static_cast<size_t>(i)] = quantile_midpoint(i, n);
    }
    return taus;
}

QuantileFn::QuantileFn(std::vector<double> values) : values_(std::move(values))
{
    if (!std::is_sorted(values_.begin(), values_.end())) {
        throw std::invalid_argument("QuantileFn values must be nondecreasing");
    }
}

ZTable::ZTable(int n_states, int n_actions, int n, double v_min, double v_max, double fill)
    : n_states(n_states), n_actions(n_actions), n(n), v_min(v_min), v_max(v_max)
{
    if (n_states < 1 || n_actions < 1 || n < 1) {
        throw std::invalid_argument("ZTable dimensions must be positive");
    }
    values.assign(static_cast<size_t>(n_states) * n_actions * n, fill);
}

QuantileFn ZTable::quantile(int s, int a) const
{
    const auto row = at(s, a);
    return QuantileFn(std::vector<double>(row.begin(), row.end()));
}

bool ZTable::same_shape(const ZTable &other) const
{
    return n_states == other.n_states && n_actions == other.n_actions && n == other.n;
}

DistortionSpec DistortionSpec::cvar(double xi)
{
    if (!(xi > 0.0 && xi <= 1.0)) {
        throw std::invalid_argument("CVaR level must lie in (0, 1]");
    }
    return {Kind::cvar, xi};
}

void project_quantiles(std::span<WeightedSample> samples, std::span<double> out)
{
    if (samples.empty()) {
        throw std::invalid_argument("quantile projection of an empty sample set");
    }
    std::sort(samples.begin(), samples.end(), [](const WeightedSample &x, const WeightedSample &y) {
        return x.value < y.value;
    });
    double total = 0.0;
    for (const auto &sample : samples) {
        if (sample.weight < 0.0) {
            throw std::invalid_argument("quantile projection with a negative weight");
        }
        total += sample.weight;
    }
    if (!(total > 0.0)) {
        throw std::invalid_argument("quantile projection needs positive total weight");
    }
    const int n = static_cast<int>(out.size());
    size_t k = 0;
    double cumulative = samples[0].weight;
    for (int i = 0; i < n; ++i) {
        const double target = quantile_midpoint(i, n) * total - kTieTolerance * total;
        while (cumulative < target && k + 1 < samples.size()) {
            ++k;
            cumulative += samples[k].weight;
        }
        out[static_cast<size_t>(i)] = samples[k].value;
    }
}

QuantileFn from_weighted_samples(std::vector<WeightedSample> samples, int n)
{
    if (n < 1) {
        throw std::invalid_argument("from_weighted_samples: n must be positive");
    }
    std::vector<double> values(static_cast<size_t>(n));
    project_quantiles(samples, values);
    return QuantileFn(std::move(values));
}

double wasserstein(std::span<const double> a, std::span<const double> b, double p)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("wasserstein: quantile grids differ in size");
    }
    if (p < 1.0) {
        throw std::invalid_argument("wasserstein: p must be at least 1");
    }
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        acc += std::pow(std::abs(a[i] - b[i]), p);
    }
    return std::pow(acc / static_cast<double>(a.size()), 1.0 / p);
}

double wasserstein(const QuantileFn &a, const QuantileFn &b, double p)
{
    return wasserstein(std::span<const double>(a.values()), std::span<const double>(b.values()), p);
}

double sup_wasserstein(const ZTable &a, const ZTable &b, double p)
{
    if (!a.same_shape(b)) {
        throw std::invalid_argument("sup_wasserstein: table shapes differ");
    }
    double worst = 0.0;
    for (int s = 0; s < a.n_states; ++s) {
        for (int ac = 0; ac < a.n_actions; ++ac) {
            worst = std::max(worst, wasserstein(a.at(s, ac), b.at(s, ac), p));
        }
    }
    return worst;
}

double sup_norm(const ZTable &a, const ZTable &b)
{
    if (!a.same_shape(b)) {
        throw std::invalid_argument("sup_norm: table shapes differ");
    }
    double worst = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
    }
    return worst;
}

double distorted_expectation(std::span<const double> values, const DistortionSpec &g)
{
    if (values.empty()) {
        throw std::invalid_argument("distorted_expectation of an empty quantile function");
    }
    const int n = static_cast<int>(values.size());
    int count = n;
    if (g.kind == DistortionSpec::Kind::cvar) {
        count = 0;
        while (count < n && quantile_midpoint(count, n) <= g.xi) {
            ++count;
        }
        count = std::max(count, 1);
    }
    double sum = 0.0;
    for (int i = 0; i < count; ++i) {
        sum += values[static_cast<size_t>(i)];
    }
    return sum / count;
}

double distorted_expectation(const QuantileFn &q, const DistortionSpec &g)
{
    return distorted_expectation(std::span<const double>(q.values()), g);
}

double huber_quantile_loss(double delta, double tau, double kappa)
{
    const double weight = std::abs(tau - (delta < 0.0 ? 1.0 : 0.0));
    const double magnitude = std::abs(delta);
    if (magnitude <= kappa) {
        return weight * delta * delta / (2.0 * kappa);
    }
    return weight * (magnitude - kappa / 2.0);
}

double huber_quantile_loss_grad(double delta, double tau, double kappa)
{
    const double weight = std::abs(tau - (delta < 0.0 ? 1.0 : 0.0));
    if (std::abs(delta) <= kappa) {
        return weight * delta / kappa;
    }
    return delta < 0.0 ? -weight : weight;
}

nlohmann::json ztable_to_json(const ZTable &z)
{
    nlohmann::json values = nlohmann::json::array();
    for (int s = 0; s < z.n_states; ++s) {
        nlohmann::json row = nlohmann::json::array();
        for (int a = 0; a < z.n_actions; ++a) {
            const auto q = z.at(s, a);
            row.push_back(std::vector<double>(q.begin(), q.end()));
        }
        values.push_back(std::move(row));
    }
    return {{"n", z.n}, {"v_min", z.v_min}, {"v_max", z.v_max}, {"values", std::move(values)}};
}

ZTable ztable_from_json(const nlohmann::json &j)
{
    const auto &values = j.at("values");
    const int n_states = static_cast<int>(values.size());
    if (n_states == 0) {
        throw std::invalid_argument("ztable json: no states");
    }
    const int n_actions = static_cast<int>(values.at(0).size());
    ZTable z(n_states, n_actions, j.at("n").get<int>(), j.at("v_min").get<double>(), j.at("v_max").get<double>());
    for (int s = 0; s < n_states; ++s) {
        if (static_cast<int>(values.at(s).size()) != n_actions) {
            throw std::invalid_argument("ztable json: ragged action dimension");
        }
        for (int a = 0; a < n_actions; ++a) {
            const auto q = values.at(s).at(a).get<std::vector<double>>();
            if (static_cast<int>(q.size()) != z.n) {
                throw std::invalid_argument("ztable json: quantile vector length differs from n");
            }
            std::copy(q.begin(), q.end(), z.at(s, a).begin());
        }
    }
    return z;
}

} // namespace codac
