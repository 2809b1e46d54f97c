// SPDX-License-Identifier: Apache-2.0
#include <meditool/canonical_json.hpp>
#include <meditool/clinical_tools.hpp>
#include <meditool/error.hpp>
#include <meditool/protocol.hpp>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <cmath>
#include <set>

namespace meditool::tools
{

using nlohmann::json;

namespace
{

double round_to(double value, int places)
{
    auto const scale = std::pow(10.0, places);
    return std::round(value * scale) / scale;
}

ArgumentSpec feature_argument(const risk::Feature& f, bool with_limits)
{
    auto arg = ArgumentSpec {};
    arg.name = f.name;
    arg.units = f.units;
    arg.description = f.description;
    switch (f.type)
    {
        case risk::FeatureType::Continuous:
            arg.type = f.integer ? ArgType::Integer : ArgType::Number;
            if (with_limits)
            {
                arg.min = f.min;
                arg.max = f.max;
            }
            arg.required = with_limits;
            break;
        case risk::FeatureType::Boolean:
            arg.type = ArgType::Boolean;
            arg.required = with_limits && !f.default_value;
            break;
        case risk::FeatureType::Categorical:
            arg.type = ArgType::Enum;
            arg.enum_values = f.levels;
            arg.required = with_limits && !f.default_value;
            break;
    }
    return arg;
}

std::vector<std::string> model_ids(const ModelSet& models)
{
    auto ids = std::vector<std::string> {};
    for (const auto& m: models)
        ids.push_back(m->model_id());
    return ids;
}

const risk::RiskModel& model_named(const ModelSet& models, const std::string& id)
{
    for (const auto& m: models)
        if (m->model_id() == id)
            return *m;
    throw ToolFailure(fmt::format("unknown model '{}'; available: {}", id, fmt::join(model_ids(models), ", ")));
}

risk::PatientRecord patient_on_record(const risk::RiskModel& model, const CallContext& ctx)
{
    auto const* state = ctx.state;
    if (!state || !state->contains("patients") || !(*state)["patients"].contains(model.model_id()))
        throw ToolFailure(fmt::format("no patient on record for model '{}'; call {} with the patient's values first",
                                      model.model_id(), model.tool_name()));
    return model.patient_from_json((*state)["patients"][model.model_id()]);
}

std::string reference_description(const risk::RiskModel& model)
{
    auto parts = std::vector<std::string> {};
    for (const auto& f: model.features())
    {
        switch (f.type)
        {
            case risk::FeatureType::Continuous: parts.push_back(fmt::format("{}={}", f.name, f.mean)); break;
            case risk::FeatureType::Boolean: parts.push_back(fmt::format("{}=false", f.name)); break;
            case risk::FeatureType::Categorical:
                parts.push_back(fmt::format("{}={}", f.name, f.levels[f.reference_level]));
                break;
        }
    }
    return fmt::format("contributions are relative to a single reference patient ({})", fmt::join(parts, ", "));
}

} // namespace

double round_percent(double percent)
{
    return round_to(percent, 1);
}

json risk_payload(const risk::RiskEstimate& estimate)
{
    return {
        { "model_id", estimate.model_id },
        { "probability", estimate.probability },
        { "risk_percent", round_percent(estimate.percent) },
        { "horizon_years", estimate.horizon_years },
        { "linear_predictor", estimate.linear_predictor },
        { "clamped", estimate.clamped },
    };
}

ToolSpec risk_tool_spec(const risk::RiskModel& model)
{
    auto spec = ToolSpec {};
    spec.name = model.tool_name().empty() ? model.model_id() + "_risk" : model.tool_name();
    spec.description = model.description().empty()
                           ? fmt::format("{}-year risk from model {}.", model.horizon_years(), model.model_id())
                           : model.description();
    for (const auto& f: model.features())
        spec.arguments.push_back(feature_argument(f, true));
    if (auto const& example = model.example_patient())
    {
        spec.example.arguments = *example;
        auto const patient = model.patient_from_json(*example);
        spec.example.rendered_result =
            protocol::render_observation(ToolResult::success(spec.name, risk_payload(risk::predict(model, patient))));
    }
    return spec;
}

void register_risk_tool(ToolRegistry& registry, std::shared_ptr<const risk::RiskModel> model)
{
    auto spec = risk_tool_spec(*model);
    registry.register_tool(std::move(spec), [model](const json& args, CallContext& ctx) {
        auto const patient = model->patient_from_json(args);
        auto const estimate = risk::predict(*model, patient);
        if (ctx.state)
            (*ctx.state)["patients"][model->model_id()] = model->patient_to_json(model->complete(patient));
        return risk_payload(estimate);
    });
}

void register_counterfactual_tool(ToolRegistry& registry, const ModelSet& models)
{
    auto spec = ToolSpec {};
    spec.name = "counterfactual_risk";
    spec.description = "Recalculates the risk for the patient on record with some values changed, for example a "
                       "younger age or no smoking. Give the model and only the values to change.";
    auto model_arg = ArgumentSpec {};
    model_arg.name = "model";
    model_arg.type = ArgType::Enum;
    model_arg.enum_values = model_ids(models);
    model_arg.description = "Which risk model to re-score.";
    spec.arguments.push_back(model_arg);

    auto seen = std::set<std::string> { "model" };
    for (const auto& m: models)
        for (const auto& f: m->features())
            if (seen.insert(f.name).second)
                spec.arguments.push_back(feature_argument(f, false));

    if (!models.empty())
    {
        auto const& first = *models.front();
        auto const age = first.feature_index("age");
        spec.example.arguments = { { "model", first.model_id() } };
        if (age)
            spec.example.arguments["age"] = static_cast<int>(first.features()[*age].min + 10);
        spec.example.rendered_result = "Observation: {\"baseline_risk_percent\": <risk now>, \"delta_percent\": "
                                       "<change>, \"model_id\": \"" + first.model_id() + "\", \"modified_risk_percent\": "
                                       "<risk with changes>, ...}";
    }

    registry.register_tool(std::move(spec), [models](const json& args, CallContext& ctx) {
        auto const& model = model_named(models, args.at("model").get<std::string>());
        auto const patient = patient_on_record(model, ctx);
        auto overrides_json = args;
        overrides_json.erase("model");
        if (overrides_json.empty())
            overrides_json = json::object();
        auto const overrides = model.patient_from_json(overrides_json);
        auto const cf = risk::counterfactual(model, patient, overrides);
        return json {
            { "model_id", model.model_id() },
            { "horizon_years", model.horizon_years() },
            { "overrides", model.patient_to_json(overrides) },
            { "baseline_probability", cf.baseline.probability },
            { "modified_probability", cf.modified.probability },
            { "baseline_risk_percent", round_percent(cf.baseline.percent) },
            { "modified_risk_percent", round_percent(cf.modified.percent) },
            { "delta_percent", round_percent(cf.delta_percent) },
        };
    });
}

void register_explain_tool(ToolRegistry& registry, const ModelSet& models, ExplainSettings settings)
{
    auto spec = ToolSpec {};
    spec.name = "explain_prediction";
    spec.description = "Explains the risk of the patient on record with Shapley values: how much each input "
                       "raised or lowered the risk, in percentage points, against a reference patient.";
    auto model_arg = ArgumentSpec {};
    model_arg.name = "model";
    model_arg.type = ArgType::Enum;
    model_arg.enum_values = model_ids(models);
    model_arg.description = "Which risk model to explain.";
    spec.arguments.push_back(model_arg);
    auto top_k = ArgumentSpec {};
    top_k.name = "top_k";
    top_k.type = ArgType::Integer;
    top_k.required = false;
    top_k.min = 1;
    top_k.max = 20;
    top_k.description = "Number of contributors to list (default 5).";
    spec.arguments.push_back(top_k);
    auto method = ArgumentSpec {};
    method.name = "method";
    method.type = ArgType::Enum;
    method.required = false;
    method.enum_values = { "exact", "sampled" };
    method.description = "exact enumerates all coalitions (default); sampled uses seeded permutations.";
    spec.arguments.push_back(method);
    if (!models.empty())
    {
        spec.example.arguments = { { "model", models.back()->model_id() }, { "top_k", 3 } };
        spec.example.rendered_result =
            "Observation: {\"method\": \"exact\", \"model_id\": \"" + models.back()->model_id()
            + "\", \"risk_percent\": <risk>, \"top_contributors\": [{\"contribution_percent\": <points>, "
              "\"direction\": \"increases\", \"feature\": <name>, \"value\": <patient value>}, ...], ...}";
    }

    registry.register_tool(std::move(spec), [models, settings](const json& args, CallContext& ctx) {
        auto const& model = model_named(models, args.at("model").get<std::string>());
        auto const patient = model.complete(patient_on_record(model, ctx));
        auto const baseline = model.reference_patient();
        auto const k = args.value("top_k", std::int64_t { 5 });
        auto const method = args.value("method", std::string { "exact" });
        auto const attr = method == "sampled"
                              ? xai::sampled_shapley(model, patient, baseline, settings.n_permutations, settings.seed)
                              : xai::exact_shapley(model, patient, baseline);
        auto const patient_json = model.patient_to_json(patient);

        auto contributors = json::array();
        for (const auto& c: xai::top_contributors(attr, static_cast<std::size_t>(k)))
            contributors.push_back({
                { "feature", c.feature },
                { "contribution_percent", round_to(100.0 * c.phi, 2) },
                { "direction", c.direction },
                { "value", patient_json.value(c.feature, json(nullptr)) },
            });
        auto payload = json {
            { "model_id", model.model_id() },
            { "method", xai::to_string(attr.method) },
            { "risk_percent", round_percent(100.0 * attr.prediction) },
            { "reference_risk_percent", round_percent(100.0 * attr.base_value) },
            { "baseline", reference_description(model) },
            { "top_contributors", std::move(contributors) },
        };
        if (attr.method == xai::Method::Sampled)
        {
            payload["n_permutations"] = attr.n_permutations;
            payload["seed"] = attr.seed;
        }
        return payload;
    });
}

void register_search_tool(ToolRegistry& registry, std::shared_ptr<const knowledge::KnowledgeStore> store)
{
    auto spec = ToolSpec {};
    spec.name = "search_knowledge";
    spec.description = "Searches the approved documents (risk model papers and clinical guidelines) and returns "
                       "the best matching passages with their source.";
    auto query = ArgumentSpec {};
    query.name = "query";
    query.type = ArgType::Text;
    query.min_length = 1;
    query.max_length = 500;
    query.description = "Search words.";
    spec.arguments.push_back(query);
    auto kind = ArgumentSpec {};
    kind.name = "source_kind";
    kind.type = ArgType::Enum;
    kind.required = false;
    kind.enum_values = { "paper", "guideline" };
    kind.description = "Restrict to papers or to guidelines.";
    spec.arguments.push_back(kind);
    auto k = ArgumentSpec {};
    k.name = "k";
    k.type = ArgType::Integer;
    k.required = false;
    k.min = 1;
    k.max = 10;
    k.description = "Number of passages (default 3).";
    spec.arguments.push_back(k);
    spec.example.arguments = { { "query", "statin threshold" }, { "source_kind", "guideline" }, { "k", 1 } };
    spec.example.rendered_result = "Observation: {\"hits\": [{\"char_span\": [<begin>, <end>], \"doc_id\": <document>, "
                                   "\"rank\": 1, \"text\": <passage>, ...}], \"query\": \"statin threshold\"}";

    registry.register_tool(std::move(spec), [store](const json& args, CallContext&) {
        auto const query_text = args.at("query").get<std::string>();
        auto filter = std::optional<knowledge::SourceKind> {};
        if (args.contains("source_kind"))
            filter = knowledge::source_kind_from_string(args["source_kind"].get<std::string>());
        auto const k = static_cast<std::size_t>(args.value("k", std::int64_t { 3 }));
        auto hits = json::array();
        for (const auto& hit: store->search(query_text, k, filter))
            hits.push_back({
                { "rank", hit.rank },
                { "score", round_to(hit.score, 4) },
                { "chunk_id", hit.chunk.chunk_id },
                { "doc_id", hit.chunk.doc_id },
                { "title", hit.chunk.title },
                { "source_kind", knowledge::to_string(hit.chunk.source_kind) },
                { "char_span", { hit.chunk.char_span.first, hit.chunk.char_span.second } },
                { "text", hit.chunk.text },
            });
        return json { { "query", query_text }, { "hits", std::move(hits) } };
    });
}

void register_clinical_tools(ToolRegistry& registry, const ModelSet& models,
                             std::shared_ptr<const knowledge::KnowledgeStore> store, ExplainSettings settings)
{
    for (const auto& m: models)
        register_risk_tool(registry, m);
    if (!models.empty())
    {
        register_counterfactual_tool(registry, models);
        register_explain_tool(registry, models, settings);
    }
    if (store)
        register_search_tool(registry, std::move(store));
}

} // namespace meditool::tools
