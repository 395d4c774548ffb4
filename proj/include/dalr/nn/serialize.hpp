// JSON form of network parameters: a spec header plus the flat view.
#pragma once

#include "dalr/nn/network.hpp"

#include <json.hpp>

namespace dalr::nn {

inline nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json j = {{"layer_widths", spec.layer_widths},
                      {"hidden_activation", "relu"},
                      {"dropout_rate", spec.dropout_rate}};
  if (spec.aux_head)
    j["aux_head"] = {{"taps", spec.aux_head->taps}, {"width", spec.aux_head->width}};
  return j;
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  j.at("layer_widths").get_to(spec.layer_widths);
  if (j.value("hidden_activation", std::string("relu")) != "relu")
    throw InvalidInput("unsupported hidden activation");
  spec.dropout_rate = j.value("dropout_rate", 0.0);
  if (j.contains("aux_head"))
    spec.aux_head = LossHeadSpec{j.at("aux_head").at("taps").get<std::size_t>(),
                                 j.at("aux_head").at("width").get<std::size_t>()};
  spec.validate();
  return spec;
}

inline nlohmann::json parameters_to_json(const NetworkSpec& spec, const Parameters& params) {
  const Vector flat = params.flatten();
  return {{"spec", spec_to_json(spec)},
          {"parameters", std::vector<double>(flat.data(), flat.data() + flat.size())}};
}

/// Returns the spec header and the parameters it describes.
inline std::pair<NetworkSpec, Parameters> parameters_from_json(const nlohmann::json& j) {
  NetworkSpec spec = spec_from_json(j.at("spec"));
  const auto values = j.at("parameters").get<std::vector<double>>();
  const Vector flat = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  return {spec, Parameters::unflatten(spec, flat)};
}

}  // namespace dalr::nn
