#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "orthoconv/cli/suite.hpp"

namespace orthoconv::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_violation = 1;
inline constexpr int exit_usage = 2;

struct VerifyArgs {
  std::filesystem::path spec;  // may be empty with `grid`
  bool grid = false;
  std::optional<double> tolerance;
  std::filesystem::path report;  // falls back to the spec's "output"
  bool timing = false;
  bool quiet = false;
};

/// 0 when every record passes, 1 on any violation or rejection, 2 on unreadable input.
int cmd_verify(const VerifyArgs& args, std::ostream& out, std::ostream& err);

/// Overrides for the config of a kernel file. Unset fields come from the sidecar descriptor or,
/// without one, from the kernel shape (stride 1, no dilation, one group, circular padding).
struct ConvFlags {
  std::optional<int> stride;
  std::optional<int> dilation;
  std::optional<int> groups;
  std::optional<std::string> padding;
  std::optional<bool> transposed;
};

struct SpectrumArgs {
  std::filesystem::path kernel;
  std::vector<std::string> methods{"toeplitz"};
  bool all = false;
  int size = 8;
  ConvFlags conv;
};

/// Prints a JSON array with one report per method. 2 on a bad file or unusable method.
int cmd_spectrum(const SpectrumArgs& args, std::ostream& out, std::ostream& err);

/// Per-call times of interleaved timing rounds, one vector per callable.
std::vector<std::vector<double>> interleaved_samples(const std::vector<std::function<void()>>& fns, int rounds,
                                                     double sample_seconds = 0.02);

/// Per-call medians of interleaved timing rounds. Each callable is repeated so that one sample
/// takes about `sample_seconds`.
std::vector<double> interleaved_medians(const std::vector<std::function<void()>>& fns, int rounds,
                                        double sample_seconds = 0.02);

inline constexpr std::array<int, 3> bench_batches{1, 8, 32};

struct BenchRow {
  std::string type;
  std::string config;
  std::array<double, 3> construction{};  // seconds, per batch size
  std::array<double, 3> constrained{};   // forward of the layer
  std::array<double, 3> plain{};         // plain convolution, same kernel
  std::optional<double> soc_explicit;    // batch 32
  std::optional<double> soc_implicit;
  double construction_spread = 0.0;      // max / min - 1
  double forward_ratio_max = 0.0;        // max over batches of |median paired ratio - 1|
};

BenchRow bench_layer(const nlohmann::json& desc, layers::Rng& rng, int height, int width, int rounds = 9,
                     double sample_seconds = 0.02);

struct BenchArgs {
  std::filesystem::path spec;
  int rounds = 9;
  double flat_tolerance = 0.2;
};

/// Prints a timing table. 1 when construction time is not flat across batch sizes.
int cmd_bench(const BenchArgs& args, std::ostream& out, std::ostream& err);

struct ExportArgs {
  std::string type = "aoc";
  layers::ConvLayerConfig cfg;
  std::uint64_t seed = 0;
  double scale = 1.0;
  std::filesystem::path out;
};

/// Builds a random layer kernel and writes it with its descriptor.
int cmd_export(const ExportArgs& args, std::ostream& out, std::ostream& err);

}  // namespace orthoconv::cli
