#include "orthoconv/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#ifdef __linux__
#include <pthread.h>
#include <sched.h>
#endif

#include "orthoconv/core/errors.hpp"
#include "orthoconv/layers/io.hpp"

namespace orthoconv::cli {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

// Bench timings run on a single core.
void pin_to_one_core() {
#ifdef __linux__
  cpu_set_t set;
  CPU_ZERO(&set);
  if (sched_getaffinity(0, sizeof set, &set) != 0) return;
  for (int c = 0; c < CPU_SETSIZE; ++c) {
    if (CPU_ISSET(c, &set)) {
      cpu_set_t one;
      CPU_ZERO(&one);
      CPU_SET(c, &one);
      pthread_setaffinity_np(pthread_self(), sizeof one, &one);
      return;
    }
  }
#endif
}

std::vector<FeatureMap> random_batch(int n, MapShape shape, layers::Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<FeatureMap> batch;
  for (int i = 0; i < n; ++i) {
    FeatureMap x(shape.channels, shape.height, shape.width);
    for (double& v : x.values()) v = dist(rng);
    batch.push_back(std::move(x));
  }
  return batch;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

layers::ConvLayerConfig config_for_kernel(const std::filesystem::path& path, const Tensor4& k, const ConvFlags& f) {
  layers::ConvLayerConfig cfg;
  if (std::filesystem::exists(layers::descriptor_path(path))) {
    cfg = layers::read_descriptor(path);
  } else {
    cfg.groups = f.groups.value_or(1);
    cfg.transposed = f.transposed.value_or(false);
    cfg.kernel_size = k.kh();
    const int fwd_in = k.c_in() * cfg.groups;
    cfg.c_in = cfg.transposed ? k.c_out() : fwd_in;
    cfg.c_out = cfg.transposed ? fwd_in : k.c_out();
    if (cfg.transposed) cfg.padding_mode = PaddingMode::zero;
  }
  if (f.stride) cfg.stride = *f.stride;
  if (f.dilation) cfg.dilation = *f.dilation;
  if (f.groups) cfg.groups = *f.groups;
  if (f.transposed) cfg.transposed = *f.transposed;
  if (f.padding) {
    if (*f.padding == "zero") cfg.padding_mode = PaddingMode::zero;
    else if (*f.padding == "circular") cfg.padding_mode = PaddingMode::circular;
    else throw FormatError("unknown padding '" + *f.padding + "'");
  }
  if (k.kh() != k.kw()) throw ShapeError("kernel must be square");
  if (k.kh() != cfg.kernel_size && !std::filesystem::exists(layers::descriptor_path(path))) cfg.kernel_size = k.kh();
  if (k.c_out() != cfg.kernel_out() || k.c_in() * cfg.groups != cfg.kernel_in())
    throw ShapeError("kernel " + k.shape_string() + " does not match config " + cfg.describe());
  cfg.validate();
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------------------------

int cmd_verify(const VerifyArgs& args, std::ostream& out, std::ostream& err) {
  SuiteSpec suite;
  try {
    if (!args.spec.empty()) suite = SuiteSpec::load(args.spec);
    else if (!args.grid) throw FormatError("verify needs --spec or --grid");
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  }
  if (args.grid)
    for (auto& desc : grid_layers()) suite.layers.push_back(std::move(desc));

  RunOptions opts;
  opts.timing = args.timing;
  opts.tolerance = args.tolerance;
  opts.threads = worker_count();
  const auto outcomes = run_suite(suite, opts);

  json report = json::array();
  bool all_pass = true;
  std::size_t failures = 0;
  for (const auto& o : outcomes) {
    for (const auto& r : o.records) report.push_back(r);
    for (const auto& line : o.lines)
      if (!args.quiet || line.rfind("[FAIL]", 0) == 0) out << line << '\n';
    if (!o.passed) ++failures;
    all_pass = all_pass && o.passed;
  }
  out << outcomes.size() - failures << "/" << outcomes.size() << " layers passed\n";

  const std::filesystem::path report_path = !args.report.empty() ? args.report : std::filesystem::path(suite.output);
  if (!report_path.empty()) {
    try {
      write_json(report_path, report);
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return exit_usage;
    }
  }
  return all_pass ? exit_ok : exit_violation;
}

int cmd_spectrum(const SpectrumArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const Tensor4 k = layers::read_okrn(args.kernel);
    const auto cfg = config_for_kernel(args.kernel, k, args.conv);
    const auto setup = verify::verification_setup(cfg, k, args.size);
    const verify::ReportFormat format{args.all, false};
    json reports = json::array();
    for (const auto& m : args.methods) {
      verify::SpectrumReport rep;
      if (m == "toeplitz") {
        rep = verify::toeplitz_svd_spectrum(k, setup.spec, setup.in_shape);
      } else if (m == "fft") {
        if (setup.spec.padding_mode != PaddingMode::circular || setup.spec.stride_h != 1 || setup.spec.transposed)
          throw ConfigError("fft needs circular padding, stride 1 and a non-transposed layer");
        rep = verify::fft_circular_spectrum(k, setup.spec, setup.in_shape.height, setup.in_shape.width);
      } else if (m == "gram") {
        rep = verify::gram_bound(k, setup.spec);
      } else if (m == "power") {
        rep = verify::operator_power_iteration(k, setup.spec, setup.in_shape, 200);
      } else {
        throw ConfigError("unknown method '" + m + "'");
      }
      json r = verify::to_json(rep, format);
      r["config"] = cfg.describe();
      reports.push_back(r);
    }
    out << reports.dump(2) << '\n';
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  }
  return exit_ok;
}

// ---------------------------------------------------------------------------------------------

std::vector<std::vector<double>> interleaved_samples(const std::vector<std::function<void()>>& fns, int rounds,
                                                     double sample_seconds) {
  std::vector<int> reps(fns.size(), 1);
  for (std::size_t i = 0; i < fns.size(); ++i) {
    fns[i]();  // warm-up
    const auto t0 = Clock::now();
    fns[i]();
    const double once = std::chrono::duration<double>(Clock::now() - t0).count();
    reps[i] = std::clamp(static_cast<int>(sample_seconds / std::max(once, 1e-9)), 1, 1 << 20);
  }
  std::vector<std::vector<double>> samples(fns.size());
  for (int r = 0; r < rounds; ++r) {
    // Odd rounds run back to front so no callable always goes first.
    for (std::size_t step = 0; step < fns.size(); ++step) {
      const std::size_t i = r % 2 ? fns.size() - 1 - step : step;
      const auto t0 = Clock::now();
      for (int j = 0; j < reps[i]; ++j) fns[i]();
      samples[i].push_back(std::chrono::duration<double>(Clock::now() - t0).count() / reps[i]);
    }
  }
  return samples;
}

std::vector<double> interleaved_medians(const std::vector<std::function<void()>>& fns, int rounds,
                                        double sample_seconds) {
  auto samples = interleaved_samples(fns, rounds, sample_seconds);
  std::vector<double> out;
  for (auto& s : samples) out.push_back(median(s));
  return out;
}

BenchRow bench_layer(const json& desc, layers::Rng& rng, int height, int width, int rounds, double sample_seconds) {
  BenchRow row;
  row.type = desc.at("type").get<std::string>();
  if (row.type != "aoc" && row.type != "soc") throw ConfigError("bench supports aoc and soc layers");
  auto cfg = layers::config_from_json(desc);
  cfg.validate();
  row.config = cfg.describe();

  const auto aoc = row.type == "aoc" ? layers::random_aoc_params(cfg, rng) : layers::AocParams{};
  const auto soc = row.type == "soc" ? layers::random_soc_params(cfg, rng) : layers::SocParams{};
  auto make_layer = [&] { return row.type == "aoc" ? layers::make_aoc_layer(aoc, cfg) : layers::make_soc_layer(soc, cfg); };
  const layers::ConvLayer layer = make_layer();
  // The plain path reads the layer's own kernel so both paths touch the same memory.
  const Tensor4& plain_kernel = layer.kernel;
  const ConvSpec plain_spec = layer.spec;

  const MapShape in_shape{cfg.c_in, height, width};
  std::array<std::vector<FeatureMap>, 3> batches;
  for (std::size_t b = 0; b < bench_batches.size(); ++b) batches[b] = random_batch(bench_batches[b], in_shape, rng);

  // Construction never reads the batch; it is timed once per batch size with that batch live.
  std::vector<std::function<void()>> fns;
  volatile double sink = 0.0;
  for (std::size_t b = 0; b < bench_batches.size(); ++b)
    fns.push_back([&, b] { sink = sink + make_layer().kernel.values()[0] + batches[b].front().values()[0] * 0.0; });
  for (std::size_t b = 0; b < bench_batches.size(); ++b) {
    fns.push_back([&, b] {
      for (const auto& x : batches[b]) sink = sink + layer.forward(x).values()[0];
    });
    fns.push_back([&, b] {
      for (const auto& x : batches[b]) sink = sink + apply_conv(x, plain_kernel, plain_spec).values()[0];
    });
  }

  const bool square = cfg.c_in == cfg.c_out && cfg.stride == 1 && !cfg.transposed;
  Tensor4 generator;
  ConvSpec gen_spec;
  if (row.type == "soc" && square) {
    generator = layers::soc_generator(soc.kernel, cfg.groups);
    gen_spec = layers::circular_same_spec(generator, cfg.dilation, cfg.groups);
    gen_spec.padding_mode = cfg.padding_mode;
    fns.push_back([&] {
      for (const auto& x : batches[2]) sink = sink + layer.forward(x).values()[0];
    });
    fns.push_back([&] {
      for (const auto& x : batches[2])
        sink = sink + layers::soc_implicit_apply(x, generator, cfg.soc_terms, gen_spec).values()[0];
    });
  }

  auto samples = interleaved_samples(fns, rounds, sample_seconds);
  std::vector<double> t;
  for (auto s : samples) t.push_back(median(s));
  double lo = t[0], hi = t[0];
  for (std::size_t b = 0; b < 3; ++b) {
    row.construction[b] = t[b];
    row.constrained[b] = t[3 + 2 * b];
    row.plain[b] = t[4 + 2 * b];
    lo = std::min(lo, t[b]);
    hi = std::max(hi, t[b]);
    // Ratios of adjacent samples cancel slow drift in machine load.
    std::vector<double> ratio;
    for (int r = 0; r < rounds; ++r) ratio.push_back(samples[3 + 2 * b][r] / samples[4 + 2 * b][r]);
    row.forward_ratio_max = std::max(row.forward_ratio_max, std::abs(median(ratio) - 1.0));
  }
  row.construction_spread = hi / lo - 1.0;
  if (t.size() > 9) {
    row.soc_explicit = t[9];
    row.soc_implicit = t[10];
  }
  return row;
}

int cmd_bench(const BenchArgs& args, std::ostream& out, std::ostream& err) {
  SuiteSpec suite;
  try {
    suite = SuiteSpec::load(args.spec);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  }
  pin_to_one_core();
  bool flat = true;
  out << "layer  type  config                                   batch  construct_ms  forward_ms  plain_ms  ratio\n";
  for (std::size_t i = 0; i < suite.layers.size(); ++i) {
    const auto& desc = suite.layers[i];
    const auto type = desc.value("type", std::string());
    if (type != "aoc" && type != "soc") continue;
    layers::Rng rng = layer_rng(suite.seed, i);
    BenchRow row;
    try {
      row = bench_layer(desc, rng, suite.height, suite.width, args.rounds);
    } catch (const Error& e) {
      out << i << "  " << type << "  skipped: " << e.what() << '\n';
      continue;
    }
    for (std::size_t b = 0; b < bench_batches.size(); ++b) {
      char line[256];
      std::snprintf(line, sizeof line, "%-5zu  %-4s  %-40s %5d  %12.4f  %10.4f  %8.4f  %5.3f\n", i, type.c_str(),
                    row.config.c_str(), bench_batches[b], row.construction[b] * 1e3, row.constrained[b] * 1e3,
                    row.plain[b] * 1e3, row.constrained[b] / row.plain[b]);
      out << line;
    }
    out << "       construction spread " << fmt("%.1f%%", 100.0 * row.construction_spread)
        << (row.construction_spread <= args.flat_tolerance ? " (flat)" : " (NOT flat)") << '\n';
    if (row.soc_explicit)
      out << "       soc batch 32: explicit " << fmt("%.4f", *row.soc_explicit * 1e3) << " ms, implicit "
          << fmt("%.4f", *row.soc_implicit * 1e3) << " ms\n";
    flat = flat && row.construction_spread <= args.flat_tolerance;
  }
  return flat ? exit_ok : exit_violation;
}

int cmd_export(const ExportArgs& args, std::ostream& out, std::ostream& err) {
  try {
    if (args.out.empty()) throw FormatError("export needs --out");
    json desc = layers::config_to_json(args.cfg);
    desc["type"] = args.type;
    desc["scale"] = args.scale;
    layers::Rng rng = layer_rng(args.seed, 0);
    const LinearLayer layer = build_linear(desc, rng);
    layers::write_okrn(args.out, layer.kernel);
    layers::write_descriptor(args.out, layer.cfg);
    out << "wrote " << args.out.string() << " " << layer.kernel.shape_string() << '\n';
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  }
  return exit_ok;
}

}  // namespace orthoconv::cli
