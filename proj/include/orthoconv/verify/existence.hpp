#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "orthoconv/layers/config.hpp"

namespace orthoconv::verify {

struct ExistenceVerdict {
  bool accepted = true;
  std::string rule;    // name of the rule that rejected, empty when accepted
  std::string reason;
};

/// A rule returns a reason string when the configuration cannot be realized.
struct ExistenceRule {
  std::string name;
  std::function<std::optional<std::string>(const layers::ConvLayerConfig&)> check;
};

/// positive_dimensions, group_divisibility, kernel_smaller_than_stride, isometry_dimension,
/// strided_dilation.
std::vector<ExistenceRule> default_existence_rules();

/// First failing rule wins. Never throws.
ExistenceVerdict existence_check(const layers::ConvLayerConfig& cfg,
                                 const std::vector<ExistenceRule>& rules = default_existence_rules());

}  // namespace orthoconv::verify
