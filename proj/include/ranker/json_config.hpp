#pragma once

#include <string>

#include <json.hpp>

#include "ranker/baseline.hpp"
#include "ranker/corpus.hpp"
#include "ranker/evalrank.hpp"
#include "ranker/pairgen.hpp"
#include "ranker/rankhead.hpp"
#include "ranker/training.hpp"

namespace ranker {

std::string to_string(EncoderKind k);
std::string to_string(HeadVariant v);
std::string to_string(GainKind g);
std::string to_string(PairOrder o);
std::string to_string(SplitStrategy s);

EncoderKind encoder_kind_from_string(const std::string& s);
HeadVariant head_variant_from_string(const std::string& s);
GainKind gain_from_string(const std::string& s);
PairOrder pair_order_from_string(const std::string& s);
SplitStrategy split_strategy_from_string(const std::string& s);

nlohmann::json to_json(const EncoderConfig& cfg);
nlohmann::json to_json(const HeadConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const LossConfig& cfg);
nlohmann::json to_json(const OptimConfig& cfg);
nlohmann::json to_json(const MetricsConfig& cfg);
nlohmann::json to_json(const PairPolicy& policy);
nlohmann::json to_json(const SyntheticSpec& spec);
nlohmann::json to_json(const MetricsReport& report);
nlohmann::json to_json(const HeadToHeadReport& report);
nlohmann::json to_json(const RankedList& ranked);
nlohmann::json to_json(const TemporalReport& report);
nlohmann::json to_json(const GridResult& result);

// Missing keys keep the current (default) value, so configs merge
// defaults <- file <- flags.
void merge_from_json(EncoderConfig& cfg, const nlohmann::json& j);
void merge_from_json(HeadConfig& cfg, const nlohmann::json& j);
void merge_from_json(ModelConfig& cfg, const nlohmann::json& j);
void merge_from_json(LossConfig& cfg, const nlohmann::json& j);
void merge_from_json(OptimConfig& cfg, const nlohmann::json& j);
void merge_from_json(MetricsConfig& cfg, const nlohmann::json& j);
void merge_from_json(PairPolicy& policy, const nlohmann::json& j);
void merge_from_json(SyntheticSpec& spec, const nlohmann::json& j);

// Canonical serialization: sorted keys, two-space indent, trailing newline.
// Reports are byte-comparable across runs.
std::string canonical_dump(const nlohmann::json& j);

}  // namespace ranker
