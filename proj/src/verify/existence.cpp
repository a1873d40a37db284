#include "orthoconv/verify/existence.hpp"

namespace orthoconv::verify {

std::vector<ExistenceRule> default_existence_rules() {
  using layers::ConvLayerConfig;
  std::vector<ExistenceRule> rules;
  rules.push_back({"positive_dimensions", [](const ConvLayerConfig& c) -> std::optional<std::string> {
                     if (c.c_in < 1 || c.c_out < 1 || c.kernel_size < 1 || c.stride < 1 || c.dilation < 1)
                       return std::string("channels, kernel size, stride and dilation must all be >= 1");
                     return std::nullopt;
                   }});
  rules.push_back({"group_divisibility", [](const ConvLayerConfig& c) -> std::optional<std::string> {
                     if (c.groups < 1 || c.c_in % c.groups != 0 || c.c_out % c.groups != 0)
                       return "groups " + std::to_string(c.groups) + " must divide c_in " + std::to_string(c.c_in) +
                              " and c_out " + std::to_string(c.c_out);
                     return std::nullopt;
                   }});
  rules.push_back({"kernel_smaller_than_stride", [](const ConvLayerConfig& c) -> std::optional<std::string> {
                     if (c.kernel_size < c.stride)
                       return "kernel size " + std::to_string(c.kernel_size) + " is smaller than stride " +
                              std::to_string(c.stride) + " (k >= s required)";
                     return std::nullopt;
                   }});
  rules.push_back({"isometry_dimension", [](const ConvLayerConfig& c) -> std::optional<std::string> {
                     const long budget = static_cast<long>(c.c_in) * c.stride * c.stride;
                     if (c.require_isometry && c.c_out > budget)
                       return "isometry requested with c_out " + std::to_string(c.c_out) + " > c_in * s^2 = " +
                              std::to_string(budget);
                     return std::nullopt;
                   }});
  rules.push_back({"strided_dilation", [](const ConvLayerConfig& c) -> std::optional<std::string> {
                     if (c.stride > 1 && c.dilation > 1)
                       return "stride " + std::to_string(c.stride) + " with dilation " + std::to_string(c.dilation) +
                              " leaves overlapping, non-orthogonal patches (dilation must be 1 when strided)";
                     return std::nullopt;
                   }});
  return rules;
}

ExistenceVerdict existence_check(const layers::ConvLayerConfig& cfg, const std::vector<ExistenceRule>& rules) {
  for (const auto& rule : rules) {
    try {
      if (auto reason = rule.check(cfg)) return {false, rule.name, *reason};
    } catch (const std::exception& e) {
      return {false, rule.name, std::string("rule failed: ") + e.what()};
    }
  }
  return {};
}

}  // namespace orthoconv::verify
