#include "orthoconv/cli/suite.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "orthoconv/blocks/blocks.hpp"
#include "orthoconv/core/errors.hpp"
#include "orthoconv/layers/io.hpp"
#include "orthoconv/verify/existence.hpp"

namespace orthoconv::cli {

namespace {

using nlohmann::json;

const std::vector<std::string>& known_types() {
  static const std::vector<std::string> types{"aoc",      "soc",        "aol",     "plain",   "sll",
                                              "sll_aoc",  "sandwich",   "activation", "residual"};
  return types;
}

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods{"toeplitz", "fft", "gram", "power", "jacobian"};
  return methods;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

FeatureMap scaled(FeatureMap y, double s) {
  if (s != 1.0) y *= s;
  return y;
}

json base_record(const json& desc, std::size_t index, const std::string& config) {
  return {{"layer", index}, {"type", desc.value("type", std::string("?"))}, {"config", config}};
}

std::vector<std::array<double, 2>> random_directions(int pairs, layers::Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::array<double, 2>> v;
  for (int p = 0; p < pairs; ++p) v.push_back({n(rng), n(rng)});
  return v;
}

// AOL-rescaled circular convolution followed by MaxMin; the inner map of residual blocks.
verify::MapFn aol_maxmin(int channels, int kernel_size, layers::Rng& rng) {
  Tensor4 k = layers::aol_rescale(layers::random_kernel(channels, channels, kernel_size, kernel_size, rng));
  const ConvSpec spec = layers::circular_same_spec(k);
  const auto act = blocks::ActivationKind::maxmin();
  return [k, spec, act](const FeatureMap& x) { return blocks::apply_activation(act, conv2d_forward(x, k, spec)); };
}

}  // namespace

// ---------------------------------------------------------------------------------------------

SuiteSpec SuiteSpec::parse(const json& j) {
  if (!j.is_object()) throw FormatError("suite spec must be a JSON object");
  SuiteSpec s;
  try {
    if (j.contains("layers")) {
      if (!j.at("layers").is_array()) throw FormatError("'layers' must be an array");
      for (const auto& l : j.at("layers")) {
        if (!l.is_object() || !l.contains("type")) throw FormatError("every layer needs a 'type'");
        const auto type = l.at("type").get<std::string>();
        if (std::find(known_types().begin(), known_types().end(), type) == known_types().end())
          throw FormatError("unknown layer type '" + type + "'");
        if (is_linear_type(type)) (void)layers::config_from_json(l);
        s.layers.push_back(l);
      }
    }
    if (j.contains("input_shape")) {
      const auto& shape = j.at("input_shape");
      if (!shape.is_array() || shape.size() != 2) throw FormatError("'input_shape' must be [height, width]");
      s.height = shape.at(0).get<int>();
      s.width = shape.at(1).get<int>();
      if (s.height < 1 || s.width < 1) throw FormatError("'input_shape' entries must be >= 1");
    }
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("tolerance")) s.tolerance = j.at("tolerance").get<double>();
    if (j.contains("methods")) {
      s.methods = j.at("methods").get<std::vector<std::string>>();
      for (const auto& m : s.methods)
        if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
          throw FormatError("unknown method '" + m + "'");
    }
    s.output = j.value("output", std::string());
  } catch (const json::exception& e) {
    throw FormatError(std::string("suite spec: ") + e.what());
  }
  return s;
}

SuiteSpec SuiteSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open spec file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("spec file: ") + e.what());
  }
  return parse(j);
}

std::vector<json> grid_layers() {
  std::vector<json> out;
  const std::vector<std::pair<int, int>> channels{{4, 4}, {4, 8}, {8, 4}};
  for (const char* type : {"aoc", "soc"}) {
    for (int k : {1, 2, 3, 5})
      for (int s : {1, 2})
        for (int d : {1, 2})
          for (int g : {1, 2})
            for (auto [ci, co] : channels)
              for (const char* pad : {"zero", "circular"})
                for (bool tr : {false, true}) {
                  if (tr && std::string(pad) == "circular") continue;
                  if (std::string(type) == "soc" && ci != co) continue;
                  json desc{{"type", type},      {"c_in", ci},  {"c_out", co},       {"kernel_size", k},
                            {"stride", s},       {"dilation", d}, {"groups", g},     {"padding_mode", pad},
                            {"transposed", tr}};
                  if (!verify::existence_check(layers::config_from_json(desc)).accepted) continue;
                  out.push_back(desc);
                }
  }
  return out;
}

layers::Rng layer_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return layers::Rng(seq);
}

bool is_linear_type(const std::string& type) {
  return type == "aoc" || type == "soc" || type == "aol" || type == "plain";
}

LinearLayer build_linear(const json& desc, layers::Rng& rng) {
  LinearLayer l;
  l.type = desc.at("type").get<std::string>();
  l.cfg = layers::config_from_json(desc);
  l.cfg.validate();
  const int g = l.cfg.groups;
  if (l.type == "aoc") {
    l.kernel = layers::aoc_kernel(layers::random_aoc_params(l.cfg, rng), l.cfg);
  } else if (l.type == "soc") {
    l.kernel = layers::soc_explicit_kernel(layers::random_soc_params(l.cfg, rng), l.cfg);
    l.default_tolerance = 5e-3;
  } else if (l.type == "aol") {
    const Tensor4 raw = layers::random_kernel(l.cfg.kernel_out(), l.cfg.kernel_in() / g, l.cfg.kernel_size,
                                              l.cfg.kernel_size, rng);
    l.kernel = layers::aol_rescale(raw, l.cfg.aol_steps, g);
    l.contract = verify::Contract::lipschitz;
  } else if (l.type == "plain") {
    l.kernel = layers::random_kernel(l.cfg.kernel_out(), l.cfg.kernel_in() / g, l.cfg.kernel_size, l.cfg.kernel_size, rng);
    l.contract = verify::Contract::lipschitz;
  } else {
    throw FormatError("'" + l.type + "' is not a linear layer type");
  }
  const double scale = desc.value("scale", 1.0);
  if (scale != 1.0) l.kernel *= scale;
  return l;
}

MapLayer build_map(const json& desc, layers::Rng& rng, int height, int width) {
  MapLayer m;
  m.type = desc.at("type").get<std::string>();
  const int c = desc.value("channels", 4);
  const int k = desc.value("kernel_size", 3);
  const double scale = desc.value("scale", 1.0);
  m.in_shape = {c, height, width};
  m.require_iso = desc.value("require_iso", false);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  verify::MapFn fn;

  if (m.type == "sll") {
    const int g = desc.value("groups", 1);
    const int d = desc.value("dilation", 1);
    auto p = layers::random_sll_params(c, k, rng, g);
    const Tensor4 kr = layers::sll_rescale(p.kernel, p.q, g);
    const ConvSpec spec = layers::circular_same_spec(kr, d, g);
    fn = [kr, spec, bias = p.bias](const FeatureMap& x) { return layers::sll_forward(x, kr, bias, spec); };
    m.description = "c=" + std::to_string(c) + " k=" + std::to_string(k);
  } else if (m.type == "sll_aoc") {
    const int s = desc.value("stride", 2);
    const int c_out = desc.value("c_out", c);
    const int k_post = desc.value("post_kernel_size", s == 1 ? k : 2 * s);
    layers::ConvLayerConfig pre{.c_in = c, .c_out = c, .kernel_size = k};
    layers::ConvLayerConfig post{.c_in = c, .c_out = c_out, .kernel_size = k_post, .stride = s};
    const Tensor4 k_pre = layers::aoc_kernel(layers::random_aoc_params(pre, rng), pre);
    const Tensor4 k_po = layers::aoc_kernel(layers::random_aoc_params(post, rng), post);
    auto p = layers::random_sll_params(c, k, rng);
    const auto fused = layers::fuse_sll_aoc(layers::sll_rescale(p.kernel, p.q), k_pre, k_po, s);
    fn = [fused, bias = p.bias](const FeatureMap& x) { return layers::sll_aoc_block(x, fused, bias); };
    m.description = "c=" + std::to_string(c) + "->" + std::to_string(c_out) + " s=" + std::to_string(s);
  } else if (m.type == "sandwich") {
    const int c_out = desc.value("c_out", c);
    const int hidden = desc.value("hidden", c);
    const dense::OrthoParams ortho{.method = dense::OrthoMethod::qr};
    const auto params = layers::random_aoc_params(layers::sandwich_config(c, c_out, hidden, k, ortho), rng);
    const auto kernels = layers::sandwich_kernels(params, c, c_out, hidden, k, ortho);
    std::vector<double> dv, bv;
    for (int i = 0; i < hidden; ++i) {
      dv.push_back(u(rng));
      bv.push_back(0.1 * n(rng));
    }
    const ConvSpec spec = layers::circular_same_spec(kernels.b);
    fn = [kernels, dv, bv, spec](const FeatureMap& x) { return layers::sandwich_aoc_forward(x, kernels, dv, bv, spec); };
    m.description = "c=" + std::to_string(c) + " hidden=" + std::to_string(hidden);
  } else if (m.type == "activation") {
    const auto name = desc.value("activation", std::string("maxmin"));
    blocks::ActivationKind act;
    switch (blocks::activation_from_string(name)) {
      case blocks::ActivationType::abs: act = blocks::ActivationKind::abs(); break;
      case blocks::ActivationType::soft_huber: act = blocks::ActivationKind::soft_huber(desc.value("delta", 0.1)); break;
      case blocks::ActivationType::maxmin: act = blocks::ActivationKind::maxmin(); break;
      case blocks::ActivationType::householder:
        act = blocks::ActivationKind::householder(random_directions(c / 2, rng));
        break;
      case blocks::ActivationType::householder2:
        act = blocks::ActivationKind::householder2(random_directions(c / 2, rng), random_directions(c / 2, rng));
        break;
    }
    act.legacy_unnormalized = desc.value("legacy", false);
    fn = [act](const FeatureMap& x) { return blocks::apply_activation(act, x); };
    m.accept_point = [act](const FeatureMap& x) { return blocks::distance_to_kinks(act, x) >= 1e-3; };
    m.description = name;
  } else if (m.type == "residual") {
    const auto name = desc.value("residual", std::string("additive"));
    blocks::ResidualKind kind;
    if (name == "concat") kind.type = blocks::ResidualType::concat;
    else if (name == "l2norm") kind.type = blocks::ResidualType::l2norm;
    else if (name == "additive") kind.type = blocks::ResidualType::additive;
    else if (name == "prescaled_additive") kind.type = blocks::ResidualType::prescaled_additive;
    else throw FormatError("unknown residual kind '" + name + "'");
    kind.alpha = desc.value("alpha", 0.5);
    kind.epsilon = desc.value("epsilon", 1e-6);
    auto inner = aol_maxmin(kind.type == blocks::ResidualType::concat ? c / 2 : c, k, rng);
    fn = [kind, inner](const FeatureMap& x) { return blocks::apply_residual(kind, x, inner); };
    m.description = name;
  } else {
    throw FormatError("'" + m.type + "' is not a non-linear layer type");
  }
  m.fn = scale == 1.0 ? fn : verify::MapFn([fn, scale](const FeatureMap& x) { return scaled(fn(x), scale); });
  return m;
}

// ---------------------------------------------------------------------------------------------

LayerOutcome run_layer(const json& desc, std::size_t index, const SuiteSpec& suite, const RunOptions& opts) {
  LayerOutcome out;
  const std::string type = desc.value("type", std::string("?"));
  const verify::ReportFormat format{false, opts.timing};
  auto tolerance_for = [&](double type_default) {
    if (opts.tolerance) return *opts.tolerance;
    if (desc.contains("tolerance")) return desc.at("tolerance").get<double>();
    if (suite.tolerance) return *suite.tolerance;
    return type_default;
  };
  auto fail = [&](const std::string& config, const std::string& what, json extra) {
    json r = base_record(desc, index, config);
    r["verdict"] = "violation";
    r.update(extra);
    out.records.push_back(r);
    out.passed = false;
    out.lines.push_back("[FAIL] layer " + std::to_string(index) + " " + type + " " + config + ": " + what);
  };

  layers::Rng rng = layer_rng(suite.seed, index);
  if (is_linear_type(type)) {
    layers::ConvLayerConfig cfg;
    try {
      cfg = layers::config_from_json(desc);
    } catch (const Error& e) {
      fail("", e.what(), {{"error", e.what()}});
      return out;
    }
    const std::string config = cfg.describe();
    const auto existence = verify::existence_check(cfg);
    if (!existence.accepted) {
      fail(config, "rejected (" + existence.reason + ")",
           {{"rejected", true}, {"rule", existence.rule}, {"reason", existence.reason}});
      return out;
    }
    try {
      const LinearLayer layer = build_linear(desc, rng);
      const double tol = tolerance_for(layer.default_tolerance);
      const auto setup = verify::verification_setup(layer.cfg, layer.kernel, suite.height);
      for (const auto& method : suite.methods) {
        verify::SpectrumReport rep;
        if (method == "toeplitz") {
          rep = verify::toeplitz_svd_spectrum(layer.kernel, setup.spec, setup.in_shape, layer.contract, tol);
        } else if (method == "fft") {
          if (setup.spec.padding_mode != PaddingMode::circular || setup.spec.stride_h != 1) continue;
          rep = verify::fft_circular_spectrum(layer.kernel, setup.spec, setup.in_shape.height, setup.in_shape.width,
                                              layer.contract, tol);
        } else if (method == "gram") {
          rep = verify::gram_bound(layer.kernel, setup.spec, {6, true, tol});
        } else if (method == "power") {
          rep = verify::operator_power_iteration(layer.kernel, setup.spec, setup.in_shape, 200, suite.seed, tol);
        } else {
          continue;  // jacobian applies to non-linear blocks
        }
        json r = base_record(desc, index, config);
        r.update(verify::to_json(rep, format));
        out.records.push_back(r);
        const bool ok = rep.passed();
        out.passed = out.passed && ok;
        out.lines.push_back(std::string(ok ? "[PASS] " : "[FAIL] ") + "layer " + std::to_string(index) + " " + type +
                            " " + config + " " + verify::to_string(rep.method) + " sigma_max=" + fmt(rep.sigma_max) +
                            (rep.sigma_min ? " sigma_min=" + fmt(*rep.sigma_min) : std::string()) + " " +
                            verify::to_string(rep.verdict));
      }
    } catch (const Error& e) {
      fail(config, e.what(), {{"error", e.what()}});
    }
    return out;
  }

  try {
    const MapLayer layer = build_map(desc, rng, suite.height, suite.width);
    verify::JacobianOptions jo;
    jo.n_points = desc.value("points", 5);
    jo.require_iso = layer.require_iso;
    jo.tolerance = tolerance_for(1e-4);
    jo.seed = suite.seed + index;
    jo.accept_point = layer.accept_point;
    const auto rep = verify::jacobian_spectral_check(layer.fn, layer.in_shape, jo);
    json r = base_record(desc, index, layer.description);
    r.update(verify::to_json(rep, format));
    out.records.push_back(r);
    out.passed = rep.passed();
    out.lines.push_back(std::string(out.passed ? "[PASS] " : "[FAIL] ") + "layer " + std::to_string(index) + " " + type +
                        " " + layer.description + " jacobian sigma_max=" + fmt(rep.sigma_max) + " " +
                        verify::to_string(rep.verdict));
  } catch (const Error& e) {
    fail("", e.what(), {{"error", e.what()}});
  }
  return out;
}

std::vector<LayerOutcome> run_suite(const SuiteSpec& suite, const RunOptions& opts) {
  std::vector<LayerOutcome> results(suite.layers.size());
  const unsigned workers =
      std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(std::max<std::size_t>(1, suite.layers.size()))));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < suite.layers.size(); i = next++) results[i] = run_layer(suite.layers[i], i, suite, opts);
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
  }
  return results;
}

unsigned worker_count() {
  if (const char* env = std::getenv("OKRN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace orthoconv::cli
