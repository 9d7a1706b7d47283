#include "ibt/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>
#include <type_traits>

namespace ibt::config {

namespace {

template <typename V>
void visit(masking::MaskingConfig& c, V&& v) {
  v("text_anchor_prob", c.text_anchor_prob);
  v("min_extension", c.min_extension);
  v("max_extension", c.max_extension);
  v("mask_token_prob", c.mask_token_prob);
  v("random_token_prob", c.random_token_prob);
  v("image_anchor_prob", c.image_anchor_prob);
  v("iou_threshold", c.iou_threshold);
  v("link_by_iou", c.link_by_iou);
}

template <typename V>
void visit(model::ModelConfig& c, V&& v) {
  v("hidden_size", c.hidden_size);
  v("num_heads", c.num_heads);
  v("ffn_size", c.ffn_size);
  v("num_interaction_layers", c.num_interaction_layers);
  v("num_extraction_layers", c.num_extraction_layers);
  v("vocab_size", c.vocab_size);
  v("object_feature_dim", c.object_feature_dim);
  v("max_text_len", c.max_text_len);
  v("max_objects", c.max_objects);
  v("ln_eps", c.ln_eps);
  v("init_std", c.init_std);
  v("num_object_classes", c.num_object_classes);
  v("variant", c.variant);
  v("tie_msm_weights", c.tie_msm_weights);
}

template <typename V>
void visit(training::TrainConfig& c, V&& v) {
  v("lambda_msm", c.lambda_msm);
  v("lambda_mrm", c.lambda_mrm);
  v("lambda_itm", c.lambda_itm);
  v("learning_rate", c.learning_rate);
  v("beta1", c.beta1);
  v("beta2", c.beta2);
  v("eps", c.eps);
  v("weight_decay", c.weight_decay);
  v("warmup_steps", c.warmup_steps);
  v("total_steps", c.total_steps);
  v("batch_size", c.batch_size);
  v("seed", c.seed);
  v("ema_rate", c.ema_rate);
  v("hard_negative_prob", c.hard_negative_prob);
  v("itm_unmasked", c.itm_unmasked);
  v("targets_on_negatives", c.targets_on_negatives);
  v("masking", c.masking);
}

template <typename T>
Json section_to_json(T config) {
  Json j = Json::object();
  visit(config, [&](const char* key, auto& value) {
    using F = std::decay_t<decltype(value)>;
    if constexpr (std::is_same_v<F, model::Variant>) {
      j[key] = model::variant_name(value);
    } else if constexpr (std::is_same_v<F, masking::MaskingConfig>) {
      j[key] = section_to_json(value);
    } else {
      j[key] = value;
    }
  });
  return j;
}

template <typename T>
void section_overlay(T& config, const Json& j, const std::string& path) {
  if (!j.is_object()) throw std::invalid_argument("config: " + path + " must be an object");
  std::set<std::string> known;
  visit(config, [&](const char* key, auto& value) {
    known.insert(key);
    auto it = j.find(key);
    if (it == j.end()) return;
    const std::string where = path + "." + key;
    using F = std::decay_t<decltype(value)>;
    try {
      if constexpr (std::is_same_v<F, model::Variant>) {
        value = model::parse_variant(it->template get<std::string>());
      } else if constexpr (std::is_same_v<F, masking::MaskingConfig>) {
        section_overlay(value, *it, where);
      } else if constexpr (std::is_same_v<F, bool>) {
        if (!it->is_boolean()) throw std::invalid_argument("expected a boolean");
        value = it->template get<bool>();
      } else if constexpr (std::is_integral_v<F>) {
        if (!it->is_number_integer()) throw std::invalid_argument("expected an integer");
        if (std::is_unsigned_v<F> && it->is_number_integer() && !it->is_number_unsigned() &&
            it->template get<long long>() < 0) {
          throw std::invalid_argument("expected a non-negative integer");
        }
        value = it->template get<F>();
      } else {
        if (!it->is_number()) throw std::invalid_argument("expected a number");
        value = it->template get<F>();
      }
    } catch (const std::invalid_argument& e) {
      const std::string msg = e.what();
      if (msg.rfind("config: ", 0) == 0) throw;
      throw std::invalid_argument("config: " + where + ": " + msg);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config: " + where + ": " + e.what());
    }
  });
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw std::invalid_argument("config: unknown key " + path + "." + key);
}

}  // namespace

RunConfig RunConfig::full() { return {model::ModelConfig::full(), training::TrainConfig::full()}; }

Json to_json(const RunConfig& config) {
  Json j;
  j["model"] = section_to_json(config.model);
  j["train"] = section_to_json(config.train);
  return j;
}

void overlay(RunConfig& config, const Json& json) {
  if (!json.is_object()) throw std::invalid_argument("config: top level must be an object");
  for (const auto& [key, value] : json.items()) {
    if (key == "model") {
      section_overlay(config.model, value, "model");
    } else if (key == "train") {
      section_overlay(config.train, value, "train");
    } else {
      throw std::invalid_argument("config: unknown key " + key);
    }
  }
}

RunConfig load(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  overlay(base, j);
  return base;
}

}  // namespace ibt::config
