// SPDX-License-Identifier: Apache-2.0
#include <meditool/error.hpp>
#include <meditool/risk_models.hpp>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace meditool::risk
{

std::string_view to_string(ModelKind kind) noexcept
{
    switch (kind)
    {
        case ModelKind::CoxBaselineSurvival: return "cox_baseline_survival";
        case ModelKind::Logistic: return "logistic";
    }
    return "unknown";
}

std::string_view to_string(FeatureType type) noexcept
{
    switch (type)
    {
        case FeatureType::Continuous: return "continuous";
        case FeatureType::Boolean: return "boolean";
        case FeatureType::Categorical: return "categorical";
    }
    return "unknown";
}

RiskEstimate RiskEstimate::from_linear_predictor(ModelKind kind, double eta, double baseline_survival,
                                                 std::string model_id, int horizon_years)
{
    auto estimate = RiskEstimate {};
    estimate.model_id = std::move(model_id);
    estimate.horizon_years = horizon_years;
    if (!std::isfinite(eta) || std::abs(eta) > kLinearPredictorClamp)
    {
        estimate.clamped = true;
        eta = std::isnan(eta) ? 0.0 : std::clamp(eta, -kLinearPredictorClamp, kLinearPredictorClamp);
    }
    estimate.linear_predictor = eta;
    if (kind == ModelKind::CoxBaselineSurvival)
        estimate.probability = 1.0 - std::pow(baseline_survival, std::exp(eta));
    else
        estimate.probability = 1.0 / (1.0 + std::exp(-eta));
    estimate.percent = 100.0 * estimate.probability;
    return estimate;
}

namespace
{

/// Collects field-level problems while reading a model document.
class Reader
{
  public:
    std::vector<std::string> problems;

    const nlohmann::json* field(const nlohmann::json& obj, std::string_view key, std::string_view where)
    {
        if (!obj.is_object())
        {
            problems.push_back(fmt::format("{}: expected an object", where));
            return nullptr;
        }
        auto const it = obj.find(key);
        if (it == obj.end())
        {
            problems.push_back(fmt::format("{}: missing field '{}'", where, key));
            return nullptr;
        }
        return &*it;
    }

    std::optional<std::string> text(const nlohmann::json& obj, std::string_view key, std::string_view where)
    {
        auto const* v = field(obj, key, where);
        if (!v)
            return std::nullopt;
        if (!v->is_string())
        {
            problems.push_back(fmt::format("{}.{}: expected a string", where, key));
            return std::nullopt;
        }
        return v->get<std::string>();
    }

    std::optional<double> number(const nlohmann::json& obj, std::string_view key, std::string_view where)
    {
        auto const* v = field(obj, key, where);
        if (!v)
            return std::nullopt;
        if (!v->is_number())
        {
            problems.push_back(fmt::format("{}.{}: expected a number", where, key));
            return std::nullopt;
        }
        return v->get<double>();
    }

    std::string optional_text(const nlohmann::json& obj, std::string_view key)
    {
        auto const it = obj.find(key);
        return it != obj.end() && it->is_string() ? it->get<std::string>() : std::string {};
    }
};

bool holds_number(const FeatureValue& v)
{
    return std::holds_alternative<double>(v);
}

std::string value_text(const FeatureValue& v)
{
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, bool>)
                return x ? "true" : "false";
            else if constexpr (std::is_same_v<T, double>)
                return fmt::format("{}", x);
            else
                return "'" + x + "'";
        },
        v);
}

double derived_value(const DerivedFeature& d, std::span<const double> encoded)
{
    switch (d.op)
    {
        case DerivedOp::Product: return encoded[d.inputs[0]] * encoded[d.inputs[1]];
        case DerivedOp::Square: return encoded[d.inputs[0]] * encoded[d.inputs[0]];
        case DerivedOp::Log: return std::log(encoded[d.inputs[0]]);
    }
    return 0.0;
}

} // namespace

RiskModel RiskModel::from_json(const nlohmann::json& doc)
{
    auto model = RiskModel {};
    auto r = Reader {};

    if (!doc.is_object())
        throw Error(ErrorCode::MalformedModelFile, "model file must be a JSON object");

    model._modelId = r.text(doc, "model_id", "model").value_or("");
    model._title = r.optional_text(doc, "title");
    model._toolName = r.optional_text(doc, "tool_name");
    model._description = r.optional_text(doc, "description");
    model._provenanceNote = r.optional_text(doc, "provenance_note");
    if (auto const it = doc.find("horizon_years"); it != doc.end())
    {
        if (it->is_number_integer() && it->get<int>() > 0)
            model._horizonYears = it->get<int>();
        else
            r.problems.push_back("model.horizon_years: expected a positive integer");
    }

    auto const kind = r.text(doc, "kind", "model");
    if (kind == "cox_baseline_survival")
        model._kind = ModelKind::CoxBaselineSurvival;
    else if (kind == "logistic")
        model._kind = ModelKind::Logistic;
    else if (kind)
        r.problems.push_back(fmt::format("model.kind: unknown kind '{}'", *kind));

    if (auto const v = r.number(doc, "intercept_or_S0", "model"))
    {
        if (model._kind == ModelKind::CoxBaselineSurvival)
        {
            if (!(*v > 0.0 && *v < 1.0))
                r.problems.push_back(
                    fmt::format("model.intercept_or_S0: baseline survival must lie in (0,1), got {}", *v));
            model._baselineSurvival = *v;
        }
        else
        {
            model._intercept = *v;
        }
    }

    // Base features
    auto names = std::set<std::string> {};
    if (auto const* features = r.field(doc, "features", "model"))
    {
        if (!features->is_array() || features->empty())
            r.problems.push_back("model.features: expected a non-empty array");
        else
        {
            for (std::size_t i = 0; i < features->size(); ++i)
            {
                auto const& fj = (*features)[i];
                auto const where = fmt::format("features[{}]", i);
                auto f = Feature {};
                f.name = r.text(fj, "name", where).value_or("");
                if (!f.name.empty() && !names.insert(f.name).second)
                    r.problems.push_back(fmt::format("{}: duplicate feature name '{}'", where, f.name));
                f.units = r.optional_text(fj, "units");
                f.description = r.optional_text(fj, "description");
                auto const type = r.text(fj, "type", where);
                if (type == "continuous")
                {
                    f.type = FeatureType::Continuous;
                    f.min = r.number(fj, "min", where).value_or(0.0);
                    f.max = r.number(fj, "max", where).value_or(0.0);
                    f.mean = r.number(fj, "mean", where).value_or(0.0);
                    f.scale = r.number(fj, "scale", where).value_or(1.0);
                    f.integer = fj.value("integer", false);
                    if (!(f.min <= f.max))
                        r.problems.push_back(fmt::format("{}: min must not exceed max", where));
                    if (!(f.scale > 0.0))
                        r.problems.push_back(fmt::format("{}: scale must be positive", where));
                    if (fj.contains("default"))
                        r.problems.push_back(fmt::format("{}: continuous features cannot declare a default", where));
                }
                else if (type == "boolean")
                {
                    f.type = FeatureType::Boolean;
                    if (auto const it = fj.find("default"); it != fj.end())
                    {
                        if (it->is_boolean())
                            f.default_value = it->get<bool>();
                        else
                            r.problems.push_back(fmt::format("{}.default: expected a boolean", where));
                    }
                }
                else if (type == "categorical")
                {
                    f.type = FeatureType::Categorical;
                    if (auto const* levels = r.field(fj, "levels", where))
                    {
                        if (!levels->is_array() || levels->size() < 2)
                            r.problems.push_back(fmt::format("{}.levels: expected at least two levels", where));
                        else
                            for (const auto& level: *levels)
                                f.levels.push_back(level.is_string() ? level.get<std::string>() : level.dump());
                    }
                    auto const reference = r.text(fj, "reference", where);
                    auto const it = std::find(f.levels.begin(), f.levels.end(), reference.value_or(""));
                    if (reference && it == f.levels.end())
                        r.problems.push_back(
                            fmt::format("{}.reference: '{}' is not one of the levels", where, *reference));
                    else if (reference)
                        f.reference_level = static_cast<std::size_t>(it - f.levels.begin());
                    if (auto const d = fj.find("default"); d != fj.end())
                    {
                        if (d->is_string() && std::find(f.levels.begin(), f.levels.end(), d->get<std::string>())
                                                  != f.levels.end())
                            f.default_value = d->get<std::string>();
                        else
                            r.problems.push_back(fmt::format("{}.default: expected one of the levels", where));
                    }
                }
                else if (type)
                {
                    r.problems.push_back(fmt::format("{}.type: unknown feature type '{}'", where, *type));
                }
                model._features.push_back(std::move(f));
            }
        }
    }

    // Derived features
    if (auto const it = doc.find("derived_features"); it != doc.end())
    {
        if (!it->is_array())
            r.problems.push_back("model.derived_features: expected an array");
        else
        {
            for (std::size_t i = 0; i < it->size(); ++i)
            {
                auto const& dj = (*it)[i];
                auto const where = fmt::format("derived_features[{}]", i);
                auto d = DerivedFeature {};
                d.name = r.text(dj, "name", where).value_or("");
                if (!d.name.empty() && !names.insert(d.name).second)
                    r.problems.push_back(fmt::format("{}: duplicate feature name '{}'", where, d.name));
                d.scale = dj.contains("scale") ? r.number(dj, "scale", where).value_or(1.0) : 1.0;
                if (!(d.scale > 0.0))
                    r.problems.push_back(fmt::format("{}: scale must be positive", where));
                auto const op = r.text(dj, "op", where);
                std::size_t arity = 0;
                if (op == "product")
                    d.op = DerivedOp::Product, arity = 2;
                else if (op == "square")
                    d.op = DerivedOp::Square, arity = 1;
                else if (op == "log")
                    d.op = DerivedOp::Log, arity = 1;
                else if (op)
                    r.problems.push_back(fmt::format("{}.op: unknown op '{}' (expected product, square, log)", where, *op));

                if (auto const* inputs = r.field(dj, "inputs", where))
                {
                    if (!inputs->is_array() || (arity && inputs->size() != arity))
                        r.problems.push_back(fmt::format("{}.inputs: expected {} feature name(s)", where, arity));
                    else
                    {
                        for (const auto& input: *inputs)
                        {
                            auto const name = input.is_string() ? input.get<std::string>() : std::string {};
                            auto const idx = model.feature_index(name);
                            if (!idx)
                            {
                                r.problems.push_back(fmt::format("{}.inputs: unknown base feature '{}'", where, name));
                                continue;
                            }
                            auto const& base = model._features[*idx];
                            if (base.type == FeatureType::Categorical)
                                r.problems.push_back(
                                    fmt::format("{}.inputs: categorical feature '{}' cannot be used", where, name));
                            else if (d.op != DerivedOp::Product && base.type != FeatureType::Continuous)
                                r.problems.push_back(
                                    fmt::format("{}.inputs: '{}' must be continuous for {}", where, name, *op));
                            else if (d.op == DerivedOp::Log && !(base.min > 0.0))
                                r.problems.push_back(
                                    fmt::format("{}.inputs: log requires '{}' to have a positive minimum", where, name));
                            d.inputs.push_back(*idx);
                        }
                    }
                }
                model._derived.push_back(std::move(d));
            }
        }
    }

    if (!r.problems.empty())
        throw Error(ErrorCode::MalformedModelFile, fmt::format("malformed model file '{}'", model._modelId), r.problems);

    // Expanded term names, in the order the coefficients must appear.
    for (const auto& f: model._features)
    {
        if (f.type == FeatureType::Categorical)
        {
            for (std::size_t l = 0; l < f.levels.size(); ++l)
                if (l != f.reference_level)
                    model._termNames.push_back(fmt::format("{}={}", f.name, f.levels[l]));
        }
        else
            model._termNames.push_back(f.name);
    }
    for (const auto& d: model._derived)
        model._termNames.push_back(d.name);

    auto const* coefficients = r.field(doc, "coefficients", "model");
    if (!coefficients || !coefficients->is_array())
        throw Error(ErrorCode::MalformedModelFile, "model.coefficients: expected an array",
                    { "model.coefficients: expected an array of {term, beta}" });
    if (coefficients->size() != model._termNames.size())
        throw Error(ErrorCode::CoefficientCountMismatch,
                    fmt::format("model '{}' declares {} terms but has {} coefficients", model._modelId,
                                model._termNames.size(), coefficients->size()),
                    { fmt::format("expected terms: {}", fmt::join(model._termNames, ", ")) });
    for (std::size_t i = 0; i < coefficients->size(); ++i)
    {
        auto const& cj = (*coefficients)[i];
        auto const where = fmt::format("coefficients[{}]", i);
        auto const term = r.text(cj, "term", where);
        auto const value = r.number(cj, "beta", where);
        if (term && *term != model._termNames[i])
            r.problems.push_back(fmt::format("{}: expected term '{}', found '{}'", where, model._termNames[i], *term));
        if (value && !std::isfinite(*value))
            r.problems.push_back(fmt::format("{}: coefficient must be finite", where));
        model._coefficients.push_back(value.value_or(0.0));
    }
    if (!r.problems.empty())
        throw Error(ErrorCode::MalformedModelFile, fmt::format("malformed model file '{}'", model._modelId), r.problems);

    // The reference patient doubles as the explanation baseline, so it must be a valid record.
    for (const auto& issue: model.validate(model.reference_patient()))
        r.problems.push_back(fmt::format("reference patient: {}", issue));
    if (!r.problems.empty())
        throw Error(ErrorCode::MalformedModelFile, fmt::format("malformed model file '{}'", model._modelId), r.problems);

    // Centre derived features on the reference patient.
    auto const reference = model.encode(model.reference_patient());
    for (auto& d: model._derived)
        d.centre = derived_value(d, reference);

    if (auto const it = doc.find("example_patient"); it != doc.end())
        model._examplePatient = *it;

    if (auto const it = doc.find("test_vectors"); it != doc.end() && it->is_array())
    {
        for (std::size_t i = 0; i < it->size(); ++i)
        {
            auto const& tj = (*it)[i];
            auto const where = fmt::format("test_vectors[{}]", i);
            auto const* patient = r.field(tj, "patient", where);
            auto const expected = r.number(tj, "expected_probability", where);
            if (!patient || !expected)
                continue;
            auto const record = model.patient_from_json(*patient);
            auto const issues = model.validate(record);
            if (!issues.empty())
            {
                r.problems.push_back(fmt::format("{}: invalid patient ({})", where, fmt::join(issues, "; ")));
                continue;
            }
            auto const got = predict(model, record).probability;
            if (!(std::abs(got - *expected) <= kTestVectorTolerance))
                r.problems.push_back(fmt::format("{}: expected probability {}, computed {}", where, *expected, got));
            model._testVectors.push_back(TestVector { *patient, *expected });
        }
        if (!r.problems.empty())
            throw Error(ErrorCode::MalformedModelFile,
                        fmt::format("model '{}' fails its packaged test vectors", model._modelId), r.problems);
    }

    return model;
}

std::optional<std::size_t> RiskModel::feature_index(std::string_view name) const
{
    for (std::size_t i = 0; i < _features.size(); ++i)
        if (_features[i].name == name)
            return i;
    return std::nullopt;
}

PatientRecord RiskModel::reference_patient() const
{
    auto patient = PatientRecord {};
    for (const auto& f: _features)
    {
        switch (f.type)
        {
            case FeatureType::Continuous: patient[f.name] = f.mean; break;
            case FeatureType::Boolean: patient[f.name] = false; break;
            case FeatureType::Categorical: patient[f.name] = f.levels[f.reference_level]; break;
        }
    }
    return patient;
}

PatientRecord RiskModel::complete(const PatientRecord& patient) const
{
    auto out = patient;
    for (const auto& f: _features)
        if (f.default_value && !out.contains(f.name))
            out[f.name] = *f.default_value;
    return out;
}

std::vector<double> RiskModel::encode(const PatientRecord& patient) const
{
    auto encoded = std::vector<double>(_features.size(), 0.0);
    for (std::size_t i = 0; i < _features.size(); ++i)
    {
        const auto& f = _features[i];
        auto it = patient.find(f.name);
        auto const& value = it != patient.end() ? it->second : f.default_value.value();
        switch (f.type)
        {
            case FeatureType::Continuous: encoded[i] = std::get<double>(value); break;
            case FeatureType::Boolean: encoded[i] = std::get<bool>(value) ? 1.0 : 0.0; break;
            case FeatureType::Categorical: {
                auto const& level = std::get<std::string>(value);
                encoded[i] = static_cast<double>(std::find(f.levels.begin(), f.levels.end(), level) - f.levels.begin());
                break;
            }
        }
    }
    return encoded;
}

double RiskModel::linear_predictor(std::span<const double> encoded) const
{
    double eta = _kind == ModelKind::Logistic ? _intercept : 0.0;
    std::size_t term = 0;
    for (std::size_t i = 0; i < _features.size(); ++i)
    {
        const auto& f = _features[i];
        switch (f.type)
        {
            case FeatureType::Continuous: eta += _coefficients[term++] * ((encoded[i] - f.mean) / f.scale); break;
            case FeatureType::Boolean: eta += _coefficients[term++] * encoded[i]; break;
            case FeatureType::Categorical: {
                auto const level = static_cast<std::size_t>(encoded[i]);
                for (std::size_t l = 0; l < f.levels.size(); ++l)
                {
                    if (l == f.reference_level)
                        continue;
                    if (l == level)
                        eta += _coefficients[term];
                    ++term;
                }
                break;
            }
        }
    }
    for (const auto& d: _derived)
        eta += _coefficients[term++] * ((derived_value(d, encoded) - d.centre) / d.scale);
    return eta;
}

double RiskModel::probability(std::span<const double> encoded) const
{
    return RiskEstimate::from_linear_predictor(_kind, linear_predictor(encoded), _baselineSurvival, {}, _horizonYears)
        .probability;
}

std::vector<std::string> RiskModel::validate(const PatientRecord& patient) const
{
    auto issues = std::vector<std::string> {};
    for (const auto& f: _features)
    {
        auto const it = patient.find(f.name);
        if (it == patient.end())
        {
            if (!f.default_value)
                issues.push_back(fmt::format("missing required feature '{}'", f.name));
            continue;
        }
        auto const& value = it->second;
        switch (f.type)
        {
            case FeatureType::Continuous: {
                if (!holds_number(value))
                {
                    issues.push_back(fmt::format("{} must be a number, got {}", f.name, value_text(value)));
                    break;
                }
                auto const x = std::get<double>(value);
                if (!std::isfinite(x) || x < f.min || x > f.max)
                    issues.push_back(fmt::format("{}={} out of range [{},{}]{}", f.name, x, f.min, f.max,
                                                 f.units.empty() ? "" : " " + f.units));
                else if (f.integer && std::floor(x) != x)
                    issues.push_back(fmt::format("{}={} must be a whole number", f.name, x));
                break;
            }
            case FeatureType::Boolean:
                if (!std::holds_alternative<bool>(value))
                    issues.push_back(fmt::format("{} must be true or false, got {}", f.name, value_text(value)));
                break;
            case FeatureType::Categorical: {
                auto const* level = std::get_if<std::string>(&value);
                if (!level || std::find(f.levels.begin(), f.levels.end(), *level) == f.levels.end())
                    issues.push_back(fmt::format("{}: unknown level {}; accepted levels: {}", f.name,
                                                 value_text(value), fmt::join(f.levels, ", ")));
                break;
            }
        }
    }
    for (const auto& [name, value]: patient)
        if (!feature_index(name))
            issues.push_back(fmt::format("unknown feature '{}'", name));
    return issues;
}

PatientRecord RiskModel::patient_from_json(const nlohmann::json& j) const
{
    auto patient = PatientRecord {};
    if (!j.is_object())
        return patient;
    for (const auto& [key, value]: j.items())
    {
        if (value.is_boolean())
            patient[key] = value.get<bool>();
        else if (value.is_number())
            patient[key] = value.get<double>();
        else if (value.is_string())
            patient[key] = value.get<std::string>();
        else
            patient[key] = value.dump();
    }
    return patient;
}

nlohmann::json RiskModel::patient_to_json(const PatientRecord& patient) const
{
    auto j = nlohmann::json::object();
    for (const auto& [name, value]: patient)
    {
        auto const idx = feature_index(name);
        std::visit(
            [&](const auto& x) {
                using T = std::decay_t<decltype(x)>;
                if constexpr (std::is_same_v<T, double>)
                {
                    if (idx && _features[*idx].integer && std::floor(x) == x)
                        j[name] = static_cast<std::int64_t>(x);
                    else
                        j[name] = x;
                }
                else
                    j[name] = x;
            },
            value);
    }
    return j;
}

RiskModel load_model_from_string(std::string_view document)
{
    auto doc = nlohmann::json {};
    try
    {
        doc = nlohmann::json::parse(document);
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw Error(ErrorCode::MalformedModelFile, "model file is not valid JSON", { e.what() });
    }
    return RiskModel::from_json(doc);
}

RiskModel load_model(const std::filesystem::path& model_file)
{
    auto in = std::ifstream(model_file);
    if (!in)
        throw Error(ErrorCode::MalformedModelFile, fmt::format("cannot open model file '{}'", model_file.string()));
    auto buffer = std::stringstream {};
    buffer << in.rdbuf();
    return load_model_from_string(buffer.str());
}

std::vector<std::string> validate_patient(const RiskModel& model, const PatientRecord& patient)
{
    return model.validate(patient);
}

RiskEstimate predict(const RiskModel& model, const PatientRecord& patient)
{
    if (auto issues = model.validate(patient); !issues.empty())
        throw Error(ErrorCode::ValidationFailure,
                    fmt::format("patient record is not valid for model '{}': {}", model.model_id(),
                                fmt::join(issues, "; ")),
                    std::move(issues));
    auto const encoded = model.encode(patient);
    return RiskEstimate::from_linear_predictor(model.kind(), model.linear_predictor(encoded),
                                               model.baseline_survival(), model.model_id(), model.horizon_years());
}

Counterfactual counterfactual(const RiskModel& model, const PatientRecord& patient, const PatientRecord& overrides)
{
    auto prefixed = [](std::vector<std::string> issues, std::string_view prefix) {
        for (auto& issue: issues)
            issue = std::string(prefix) + issue;
        return issues;
    };

    if (auto issues = model.validate(patient); !issues.empty())
    {
        auto details = prefixed(std::move(issues), "baseline: ");
        throw Error(ErrorCode::ValidationFailure,
                    fmt::format("baseline patient is not valid: {}", fmt::join(details, "; ")), details);
    }

    auto modified = patient;
    for (const auto& [name, value]: overrides)
        modified[name] = value;
    if (auto issues = model.validate(modified); !issues.empty())
    {
        auto details = prefixed(std::move(issues), "override: ");
        throw Error(ErrorCode::ValidationFailure,
                    fmt::format("override is not valid: {}", fmt::join(details, "; ")), details);
    }

    auto result = Counterfactual {};
    result.baseline = predict(model, patient);
    result.modified = predict(model, modified);
    result.delta_percent = result.modified.percent - result.baseline.percent;
    return result;
}

} // namespace meditool::risk
