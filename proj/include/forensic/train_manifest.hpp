#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "forensic/json_util.hpp"
#include "forensic/schema.hpp"

namespace forensic::train {

enum class Stage { VE, DFT };
enum class Component { VisionEncoder, Llm };

std::string_view to_string(Stage stage);
std::string_view to_string(Component component);
Stage parse_stage(std::string_view text);  // "ve" / "dft", any case

struct StageConfig {
    Stage stage = Stage::VE;
    Component trainable_component = Component::VisionEncoder;
    int adapter_rank = 0;
    double learning_rate = 0.0;
    std::string schedule;
    std::string optimizer;
    std::string dataset_ref;
    long long image_pixel_budget = 0;
    // Not given by the recipe; left unset for the operator to fill in.
    std::optional<int> batch_size;
    std::optional<int> epochs;
    std::optional<double> warmup_ratio;
};

StageConfig emit_stage_config(Stage stage);

// Keys: stage, trainable_component, frozen_components, adapter {type, rank},
// learning_rate, schedule, optimizer, dataset_ref, image_pixel_budget,
// batch_size, epochs, warmup_ratio (null until set), notes.
Json to_json(const StageConfig& config);

// Total over any JSON value; never throws.
ValidationReport validate_config(const Json& doc);

// Also flags unset operator fields, for use before training starts.
ValidationReport validate_ready(const Json& doc);

}  // namespace forensic::train
