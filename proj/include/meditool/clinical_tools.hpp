// SPDX-License-Identifier: Apache-2.0
#pragma once

// The approved tool set: one risk calculator per model file, counterfactual
// re-scoring, Shapley explanations and document search.
//
// Risk tools keep the last validated patient per model in the session's tool
// state under "patients", so follow-up tools (counterfactual_risk,
// explain_prediction) work on the patient already on record.

#include <meditool/explainer.hpp>
#include <meditool/knowledge_store.hpp>
#include <meditool/risk_models.hpp>
#include <meditool/tool_registry.hpp>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace meditool::tools
{

struct ExplainSettings
{
    std::size_t n_permutations = 2000;
    std::uint64_t seed = 7;
};

using ModelSet = std::vector<std::shared_ptr<const risk::RiskModel>>;

/// Rounded to one decimal place, as shown to the model and the clinician.
double round_percent(double percent);

nlohmann::json risk_payload(const risk::RiskEstimate& estimate);

ToolSpec risk_tool_spec(const risk::RiskModel& model);
void register_risk_tool(ToolRegistry& registry, std::shared_ptr<const risk::RiskModel> model);
void register_counterfactual_tool(ToolRegistry& registry, const ModelSet& models);
void register_explain_tool(ToolRegistry& registry, const ModelSet& models, ExplainSettings settings = {});
void register_search_tool(ToolRegistry& registry, std::shared_ptr<const knowledge::KnowledgeStore> store);

/// Registers every tool above in a fixed order: risk tools (model order),
/// counterfactual_risk, explain_prediction, search_knowledge.
void register_clinical_tools(ToolRegistry& registry, const ModelSet& models,
                             std::shared_ptr<const knowledge::KnowledgeStore> store, ExplainSettings settings = {});

} // namespace meditool::tools
