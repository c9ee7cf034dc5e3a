#include "forensic/train_manifest.hpp"

#include <cmath>

#include "forensic/error.hpp"

namespace forensic::train {

namespace {

constexpr std::string_view kStageNote =
    "Adapter ranks 16 and 128 are listed for three stages while the recipe defines two; two stages are modeled.";

}  // namespace

std::string_view to_string(Stage stage) {
    return stage == Stage::VE ? "VE" : "DFT";
}

std::string_view to_string(Component component) {
    return component == Component::VisionEncoder ? "vision_encoder" : "llm";
}

Stage parse_stage(std::string_view text) {
    const std::string t = to_lower(text);
    if (t == "ve") return Stage::VE;
    if (t == "dft") return Stage::DFT;
    throw ConfigError("unknown stage '" + std::string(text) + "' (expected ve or dft)");
}

StageConfig emit_stage_config(Stage stage) {
    StageConfig c;
    c.stage = stage;
    c.learning_rate = 1e-4;
    c.schedule = "cosine";
    c.optimizer = "adam";
    c.image_pixel_budget = 1024LL * 1024;
    if (stage == Stage::VE) {
        c.trainable_component = Component::VisionEncoder;
        c.adapter_rank = 16;
        c.dataset_ref = "p1.jsonl";
    } else {
        c.trainable_component = Component::Llm;
        c.adapter_rank = 128;
        c.dataset_ref = "p2.jsonl";
    }
    return c;
}

Json to_json(const StageConfig& c) {
    const Component frozen = c.trainable_component == Component::Llm ? Component::VisionEncoder : Component::Llm;
    Json j{{"stage", to_string(c.stage)},
           {"trainable_component", to_string(c.trainable_component)},
           {"frozen_components", {to_string(frozen)}},
           {"adapter", {{"type", "lora"}, {"rank", c.adapter_rank}}},
           {"learning_rate", c.learning_rate},
           {"schedule", c.schedule},
           {"optimizer", c.optimizer},
           {"dataset_ref", c.dataset_ref},
           {"image_pixel_budget", c.image_pixel_budget},
           {"batch_size", nullptr},
           {"epochs", nullptr},
           {"warmup_ratio", nullptr},
           {"notes", {kStageNote}}};
    if (c.batch_size) j["batch_size"] = *c.batch_size;
    if (c.epochs) j["epochs"] = *c.epochs;
    if (c.warmup_ratio) j["warmup_ratio"] = *c.warmup_ratio;
    return j;
}

namespace {

bool positive_int(const Json& v) {
    return v.is_number_integer() && v.get<long long>() > 0;
}

bool positive_real(const Json& v) {
    return v.is_number() && std::isfinite(v.get<double>()) && v.get<double>() > 0.0;
}

}  // namespace

ValidationReport validate_config(const Json& doc) {
    ValidationReport r;
    if (!doc.is_object()) {
        r.add("not an object");
        return r;
    }
    auto str = [&](const char* key) -> std::string {
        const auto it = doc.find(key);
        return it != doc.end() && it->is_string() ? it->get<std::string>() : std::string();
    };

    const std::string stage = str("stage");
    if (stage != "VE" && stage != "DFT") {
        r.add("bad stage", stage);
    }
    const std::string trainable = str("trainable_component");
    if (trainable != "vision_encoder" && trainable != "llm") {
        r.add("bad trainable_component", trainable);
    }
    if (stage == "VE" && trainable == "llm") {
        r.add("VE must train the vision encoder");
    }
    if (stage == "DFT" && trainable == "vision_encoder") {
        r.add("DFT must train the llm");
    }
    const auto frozen = doc.find("frozen_components");
    if (frozen == doc.end() || !frozen->is_array()) {
        r.add("missing frozen_components");
    } else {
        bool trainable_frozen = false;
        bool other_frozen = false;
        for (const Json& f : *frozen) {
            if (!f.is_string()) {
                r.add("bad frozen_components entry");
                continue;
            }
            if (f.get<std::string>() == trainable) trainable_frozen = true;
            else if (f.get<std::string>() == "vision_encoder" || f.get<std::string>() == "llm") other_frozen = true;
        }
        if (trainable_frozen) {
            r.add("trainable component is frozen", trainable);
        }
        if (!other_frozen) {
            r.add("more than one component trainable");
        }
    }

    const auto adapter = doc.find("adapter");
    if (adapter == doc.end() || !adapter->is_object() || !adapter->contains("rank") ||
        !positive_int((*adapter)["rank"])) {
        r.add("adapter rank must be a positive integer");
    }
    if (!doc.contains("learning_rate") || !positive_real(doc["learning_rate"])) {
        r.add("learning_rate must be positive");
    }
    if (str("schedule") != "cosine") {
        r.add("bad schedule", str("schedule"));
    }
    if (str("optimizer") != "adam") {
        r.add("bad optimizer", str("optimizer"));
    }
    if (str("dataset_ref").empty()) {
        r.add("missing dataset_ref");
    }
    if (!doc.contains("image_pixel_budget") || !positive_int(doc["image_pixel_budget"])) {
        r.add("image_pixel_budget must be a positive integer");
    }
    for (const char* key : {"batch_size", "epochs"}) {
        if (!doc.contains(key)) {
            r.add("missing field", key);
        } else if (!doc[key].is_null() && !positive_int(doc[key])) {
            r.add("bad field", key);
        }
    }
    if (!doc.contains("warmup_ratio")) {
        r.add("missing field", "warmup_ratio");
    } else if (const Json& w = doc["warmup_ratio"];
               !w.is_null() && !(w.is_number() && w.get<double>() >= 0.0 && w.get<double>() <= 1.0)) {
        r.add("bad field", "warmup_ratio");
    }
    return r;
}

ValidationReport validate_ready(const Json& doc) {
    ValidationReport r = validate_config(doc);
    if (doc.is_object()) {
        for (const char* key : {"batch_size", "epochs", "warmup_ratio"}) {
            if (doc.contains(key) && doc[key].is_null()) {
                r.add("unset field", key);
            }
        }
    }
    return r;
}

}  // namespace forensic::train
