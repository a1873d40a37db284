#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "orthoconv/layers/layers.hpp"
#include "orthoconv/verify/spectrum.hpp"

namespace orthoconv::cli {

/// Parsed verification suite. `layers` keeps the raw descriptors; they are built lazily so that
/// every layer draws from its own seeded generator.
struct SuiteSpec {
  std::vector<nlohmann::json> layers;
  int height = 8;
  int width = 8;
  std::uint64_t seed = 0;
  std::optional<double> tolerance;
  std::vector<std::string> methods{"toeplitz"};
  std::string output;

  /// Throws FormatError on malformed input.
  static SuiteSpec parse(const nlohmann::json& j);
  static SuiteSpec load(const std::filesystem::path& path);
};

/// Every AOC and SOC configuration of the orthogonality sweep that passes the existence check:
/// k in {1,2,3,5}, s in {1,2}, d in {1,2}, g in {1,2}, (c_in,c_out) in {(4,4),(4,8),(8,4)},
/// zero and circular padding, transposed (zero padding only). SOC is restricted to c_in = c_out.
std::vector<nlohmann::json> grid_layers();

/// Deterministic generator for layer `index` of a suite seeded with `seed`.
layers::Rng layer_rng(std::uint64_t seed, std::size_t index);

/// A linear layer ready for spectral checks.
struct LinearLayer {
  std::string type;
  layers::ConvLayerConfig cfg;
  Tensor4 kernel;
  verify::Contract contract = verify::Contract::orthogonal;
  double default_tolerance = 1e-4;
};

bool is_linear_type(const std::string& type);
LinearLayer build_linear(const nlohmann::json& desc, layers::Rng& rng);

/// A non-linear block checked through its Jacobian.
struct MapLayer {
  std::string type;
  verify::MapFn fn;
  MapShape in_shape;
  std::function<bool(const FeatureMap&)> accept_point;
  bool require_iso = false;
  std::string description;
};

MapLayer build_map(const nlohmann::json& desc, layers::Rng& rng, int height, int width);

struct RunOptions {
  bool timing = false;
  std::optional<double> tolerance;  // overrides every per-layer tolerance
  unsigned threads = 1;
};

struct LayerOutcome {
  std::vector<nlohmann::json> records;
  bool passed = true;
  std::vector<std::string> lines;  // human-readable summary
};

/// Runs one descriptor. Never throws for layer-level failures; those become violation records.
LayerOutcome run_layer(const nlohmann::json& desc, std::size_t index, const SuiteSpec& suite, const RunOptions& opts);

/// Runs all layers on a worker pool; results keep descriptor order.
std::vector<LayerOutcome> run_suite(const SuiteSpec& suite, const RunOptions& opts);

/// OKRN_THREADS if set (>= 1), else the hardware concurrency.
unsigned worker_count();

}  // namespace orthoconv::cli
