#pragma once

#include <filesystem>
#include <iosfwd>

#include "json.hpp"
#include "orthoconv/core/tensor.hpp"
#include "orthoconv/layers/config.hpp"

namespace orthoconv::layers {

// OKRN container: "OKRN", u32 version, 4 x u32 shape, row-major f64 payload. Little-endian.
inline constexpr std::uint32_t okrn_version = 1;

void write_okrn(std::ostream& out, const Tensor4& k);
Tensor4 read_okrn(std::istream& in);
void write_okrn(const std::filesystem::path& path, const Tensor4& k);
Tensor4 read_okrn(const std::filesystem::path& path);

/// `<kernel file>.json`
std::filesystem::path descriptor_path(const std::filesystem::path& kernel_path);
void write_descriptor(const std::filesystem::path& kernel_path, const ConvLayerConfig& cfg);
ConvLayerConfig read_descriptor(const std::filesystem::path& kernel_path);

nlohmann::json config_to_json(const ConvLayerConfig& cfg);
/// Missing keys keep their defaults; unknown enum strings throw FormatError.
ConvLayerConfig config_from_json(const nlohmann::json& j);

}  // namespace orthoconv::layers
