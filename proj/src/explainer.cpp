// SPDX-License-Identifier: Apache-2.0
#include <meditool/error.hpp>
#include <meditool/explainer.hpp>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace meditool::xai
{

std::string_view to_string(Method method) noexcept
{
    switch (method)
    {
        case Method::Exact: return "exact";
        case Method::Sampled: return "sampled";
        case Method::LinearClosedForm: return "linear_closed_form";
    }
    return "unknown";
}

namespace
{

void check_sizes(std::span<const double> patient, std::span<const double> baseline,
                 std::vector<std::string>& names)
{
    if (patient.size() != baseline.size())
        throw Error(ErrorCode::InvalidArgument,
                    fmt::format("patient has {} features but baseline has {}", patient.size(), baseline.size()));
    if (names.empty())
        for (std::size_t i = 0; i < patient.size(); ++i)
            names.push_back(fmt::format("x{}", i + 1));
    if (names.size() != patient.size())
        throw Error(ErrorCode::InvalidArgument, "feature name count does not match the record");
}

// 1 / (n * C(n-1, k)) == k! (n-k-1)! / n!
std::vector<double> coalition_weights(std::size_t n)
{
    auto weights = std::vector<double>(n, 0.0);
    double binom = 1.0; // C(n-1, k)
    for (std::size_t k = 0; k < n; ++k)
    {
        weights[k] = 1.0 / (static_cast<double>(n) * binom);
        binom = binom * static_cast<double>(n - 1 - k) / static_cast<double>(k + 1);
    }
    return weights;
}

// Unbiased uniform index in [0, bound) from a 64-bit engine.
std::size_t uniform_below(std::mt19937_64& rng, std::size_t bound)
{
    auto const range = static_cast<std::uint64_t>(bound);
    auto const limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
    std::uint64_t draw = 0;
    do
        draw = rng();
    while (draw >= limit);
    return static_cast<std::size_t>(draw % range);
}

struct PermutationAccumulator
{
    std::vector<double> sum;
    std::vector<double> sum_sq;
    std::vector<double> hybrid;
    std::size_t count = 0;

    explicit PermutationAccumulator(std::size_t n): sum(n, 0.0), sum_sq(n, 0.0), hybrid(n, 0.0) {}

    void add(const ValueFunction& value, std::span<const double> patient, std::span<const double> baseline,
             double base_value, std::span<const std::size_t> order)
    {
        std::copy(baseline.begin(), baseline.end(), hybrid.begin());
        double previous = base_value;
        for (auto const i: order)
        {
            hybrid[i] = patient[i];
            double const current = value(hybrid);
            double const marginal = current - previous;
            sum[i] += marginal;
            sum_sq[i] += marginal * marginal;
            previous = current;
        }
        ++count;
    }
};

AttributionVector finish_sampled(PermutationAccumulator& acc, double base_value, double prediction,
                                 std::vector<std::string> names)
{
    auto const n = acc.sum.size();
    auto attr = AttributionVector {};
    attr.features = std::move(names);
    attr.method = Method::Sampled;
    attr.base_value = base_value;
    attr.prediction = prediction;
    attr.n_permutations = acc.count;
    attr.phi.resize(n);
    attr.standard_error.resize(n);
    auto const m = static_cast<double>(acc.count);
    for (std::size_t i = 0; i < n; ++i)
    {
        auto const mean = acc.sum[i] / m;
        attr.phi[i] = mean;
        if (acc.count > 1)
        {
            auto const var = std::max(0.0, (acc.sum_sq[i] - m * mean * mean) / (m - 1.0));
            attr.standard_error[i] = std::sqrt(var / m);
        }
    }

    // Enforce efficiency exactly.
    double total = 0.0;
    double magnitude = 0.0;
    for (auto const p: attr.phi)
    {
        total += p;
        magnitude += std::abs(p);
    }
    auto const residual = (prediction - base_value) - total;
    if (n > 0 && residual != 0.0)
    {
        for (std::size_t i = 0; i < n; ++i)
            attr.phi[i] += magnitude > 0.0 ? residual * std::abs(attr.phi[i]) / magnitude
                                           : residual / static_cast<double>(n);
    }
    return attr;
}

void require_valid(const risk::RiskModel& model, const risk::PatientRecord& record, std::string_view label)
{
    auto issues = model.validate(record);
    if (issues.empty())
        return;
    for (auto& issue: issues)
        issue = fmt::format("{}: {}", label, issue);
    throw Error(ErrorCode::ValidationFailure, fmt::format("{} record is not valid: {}", label, fmt::join(issues, "; ")),
                std::move(issues));
}

std::vector<std::string> feature_names(const risk::RiskModel& model)
{
    auto names = std::vector<std::string> {};
    for (const auto& f: model.features())
        names.push_back(f.name);
    return names;
}

} // namespace

AttributionVector exact_shapley(const ValueFunction& value, std::span<const double> patient,
                                std::span<const double> baseline, std::vector<std::string> names)
{
    check_sizes(patient, baseline, names);
    auto const n = patient.size();
    if (n > kExactFeatureCap)
        throw Error(ErrorCode::TooManyFeatures,
                    fmt::format("exact Shapley supports at most {} features, model has {}", kExactFeatureCap, n),
                    { fmt::format("n={}", n), fmt::format("cap={}", kExactFeatureCap) });

    auto attr = AttributionVector {};
    attr.features = std::move(names);
    attr.method = Method::Exact;
    attr.phi.assign(n, 0.0);

    auto const masks = std::size_t { 1 } << n;
    auto v = std::vector<double>(masks);
    auto hybrid = std::vector<double>(n);
    for (std::size_t mask = 0; mask < masks; ++mask)
    {
        for (std::size_t i = 0; i < n; ++i)
            hybrid[i] = (mask >> i) & 1U ? patient[i] : baseline[i];
        v[mask] = value(hybrid);
    }
    attr.base_value = v.front();
    attr.prediction = v.back();
    if (n == 0)
        return attr;

    auto const weights = coalition_weights(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        auto const bit = std::size_t { 1 } << i;
        double phi = 0.0;
        for (std::size_t mask = 0; mask < masks; ++mask)
        {
            if (mask & bit)
                continue;
            auto const size = static_cast<std::size_t>(std::popcount(mask));
            phi += weights[size] * (v[mask | bit] - v[mask]);
        }
        attr.phi[i] = phi;
    }
    return attr;
}

AttributionVector sampled_shapley(const ValueFunction& value, std::span<const double> patient,
                                  std::span<const double> baseline, std::size_t n_permutations, std::uint64_t seed,
                                  std::vector<std::string> names)
{
    check_sizes(patient, baseline, names);
    if (n_permutations == 0)
        throw Error(ErrorCode::InvalidArgument, "n_permutations must be at least 1");
    auto const n = patient.size();
    auto const base_value = value(baseline);
    auto const prediction = value(patient);

    auto rng = std::mt19937_64(seed);
    auto order = std::vector<std::size_t>(n);
    auto acc = PermutationAccumulator(n);
    for (std::size_t p = 0; p < n_permutations; ++p)
    {
        std::iota(order.begin(), order.end(), std::size_t { 0 });
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[uniform_below(rng, i)]);
        acc.add(value, patient, baseline, base_value, order);
    }
    auto attr = finish_sampled(acc, base_value, prediction, std::move(names));
    attr.seed = seed;
    return attr;
}

AttributionVector permutation_shapley(const ValueFunction& value, std::span<const double> patient,
                                      std::span<const double> baseline,
                                      std::span<const std::vector<std::size_t>> permutations,
                                      std::vector<std::string> names)
{
    check_sizes(patient, baseline, names);
    if (permutations.empty())
        throw Error(ErrorCode::InvalidArgument, "at least one permutation is required");
    auto const n = patient.size();
    auto const base_value = value(baseline);
    auto const prediction = value(patient);
    auto acc = PermutationAccumulator(n);
    for (const auto& order: permutations)
    {
        auto sorted = order;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i)
            if (sorted.size() != n || sorted[i] != i)
                throw Error(ErrorCode::InvalidArgument, "each permutation must list every feature index once");
        acc.add(value, patient, baseline, base_value, order);
    }
    return finish_sampled(acc, base_value, prediction, std::move(names));
}

AttributionVector linear_shapley(std::span<const double> weights, double intercept, std::span<const double> patient,
                                 std::span<const double> baseline, std::vector<std::string> names)
{
    check_sizes(patient, baseline, names);
    if (weights.size() != patient.size())
        throw Error(ErrorCode::InvalidArgument, "weight count does not match the record");
    auto attr = AttributionVector {};
    attr.features = std::move(names);
    attr.method = Method::LinearClosedForm;
    attr.base_value = intercept;
    attr.prediction = intercept;
    for (std::size_t i = 0; i < weights.size(); ++i)
    {
        attr.phi.push_back(weights[i] * (patient[i] - baseline[i]));
        attr.base_value += weights[i] * baseline[i];
        attr.prediction += weights[i] * patient[i];
    }
    return attr;
}

ValueFunction probability_function(const risk::RiskModel& model)
{
    return [&model](std::span<const double> encoded) { return model.probability(encoded); };
}

AttributionVector exact_shapley(const risk::RiskModel& model, const risk::PatientRecord& patient,
                                const risk::PatientRecord& baseline)
{
    require_valid(model, patient, "patient");
    require_valid(model, baseline, "baseline");
    auto const x = model.encode(patient);
    auto const b = model.encode(baseline);
    return exact_shapley(probability_function(model), x, b, feature_names(model));
}

AttributionVector sampled_shapley(const risk::RiskModel& model, const risk::PatientRecord& patient,
                                  const risk::PatientRecord& baseline, std::size_t n_permutations, std::uint64_t seed)
{
    require_valid(model, patient, "patient");
    require_valid(model, baseline, "baseline");
    auto const x = model.encode(patient);
    auto const b = model.encode(baseline);
    return sampled_shapley(probability_function(model), x, b, n_permutations, seed, feature_names(model));
}

std::vector<Contributor> top_contributors(const AttributionVector& attr, std::size_t k)
{
    auto order = std::vector<std::size_t>(attr.phi.size());
    std::iota(order.begin(), order.end(), std::size_t { 0 });
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(attr.phi[a]) > std::abs(attr.phi[b]); });
    order.resize(std::min(k, order.size()));

    auto out = std::vector<Contributor> {};
    for (auto const i: order)
    {
        auto const phi = attr.phi[i];
        auto name = i < attr.features.size() ? attr.features[i] : fmt::format("x{}", i + 1);
        out.push_back({ std::move(name), phi, phi > 0.0 ? "increases" : phi < 0.0 ? "decreases" : "none" });
    }
    return out;
}

} // namespace meditool::xai
