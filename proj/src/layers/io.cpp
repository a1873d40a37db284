#include "orthoconv/layers/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "orthoconv/core/errors.hpp"

namespace orthoconv::layers {

namespace {

constexpr std::array<char, 4> magic{'O', 'K', 'R', 'N'};

template <class U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw FormatError("OKRN: truncated file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

const char* padding_name(PaddingMode m) { return m == PaddingMode::circular ? "circular" : "zero"; }

PaddingMode padding_from(const std::string& s) {
  if (s == "circular") return PaddingMode::circular;
  if (s == "zero") return PaddingMode::zero;
  throw FormatError("unknown padding mode '" + s + "'");
}

}  // namespace

void write_okrn(std::ostream& out, const Tensor4& k) {
  out.write(magic.data(), magic.size());
  put_le<std::uint32_t>(out, okrn_version);
  for (int d : k.dims()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (double v : k.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw FormatError("OKRN: write failed");
}

Tensor4 read_okrn(std::istream& in) {
  std::array<char, 4> head{};
  in.read(head.data(), head.size());
  if (!in || head != magic) throw FormatError("OKRN: bad magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != okrn_version) throw FormatError("OKRN: unsupported version " + std::to_string(version));
  std::array<int, 4> dims{};
  std::uint64_t count = 1;
  for (int& d : dims) {
    const auto v = get_le<std::uint32_t>(in);
    if (v == 0 || v > (1u << 20)) throw FormatError("OKRN: bad shape entry " + std::to_string(v));
    d = static_cast<int>(v);
    count *= v;
  }
  if (count > (1ull << 28)) throw FormatError("OKRN: payload too large");
  std::vector<double> values(count);
  for (double& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("OKRN: trailing bytes after payload");
  return Tensor4(dims[0], dims[1], dims[2], dims[3], std::move(values));
}

void write_okrn(const std::filesystem::path& path, const Tensor4& k) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_okrn(out, k);
}

Tensor4 read_okrn(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_okrn(in);
}

std::filesystem::path descriptor_path(const std::filesystem::path& kernel_path) {
  return kernel_path.string() + ".json";
}

nlohmann::json config_to_json(const ConvLayerConfig& cfg) {
  return {{"c_in", cfg.c_in},
          {"c_out", cfg.c_out},
          {"kernel_size", cfg.kernel_size},
          {"stride", cfg.stride},
          {"dilation", cfg.dilation},
          {"groups", cfg.groups},
          {"transposed", cfg.transposed},
          {"padding_mode", padding_name(cfg.padding_mode)},
          {"soc_terms", cfg.soc_terms},
          {"aol_steps", cfg.aol_steps},
          {"require_isometry", cfg.require_isometry},
          {"ortho",
           {{"method", dense::to_string(cfg.ortho.method)},
            {"beta", cfg.ortho.beta},
            {"iterations", cfg.ortho.iterations},
            {"exp_terms", cfg.ortho.exp_terms},
            {"epsilon", cfg.ortho.epsilon},
            {"pre_normalize", cfg.ortho.pre_normalize},
            {"power_iters", cfg.ortho.power_iters}}}};
}

ConvLayerConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("layer config must be a JSON object");
  ConvLayerConfig cfg;
  try {
    cfg.c_in = j.value("c_in", cfg.c_in);
    cfg.c_out = j.value("c_out", cfg.c_out);
    cfg.kernel_size = j.value("kernel_size", cfg.kernel_size);
    cfg.stride = j.value("stride", cfg.stride);
    cfg.dilation = j.value("dilation", cfg.dilation);
    cfg.groups = j.value("groups", cfg.groups);
    cfg.transposed = j.value("transposed", cfg.transposed);
    if (j.contains("padding_mode")) cfg.padding_mode = padding_from(j.at("padding_mode").get<std::string>());
    cfg.soc_terms = j.value("soc_terms", cfg.soc_terms);
    cfg.aol_steps = j.value("aol_steps", cfg.aol_steps);
    cfg.require_isometry = j.value("require_isometry", cfg.require_isometry);
    if (j.contains("ortho")) {
      const auto& o = j.at("ortho");
      if (o.contains("method")) {
        try {
          cfg.ortho.method = dense::ortho_method_from_string(o.at("method").get<std::string>());
        } catch (const ConfigError& e) {
          throw FormatError(e.what());
        }
      }
      cfg.ortho.beta = o.value("beta", cfg.ortho.beta);
      cfg.ortho.iterations = o.value("iterations", cfg.ortho.iterations);
      cfg.ortho.exp_terms = o.value("exp_terms", cfg.ortho.exp_terms);
      cfg.ortho.epsilon = o.value("epsilon", cfg.ortho.epsilon);
      cfg.ortho.pre_normalize = o.value("pre_normalize", cfg.ortho.pre_normalize);
      cfg.ortho.power_iters = o.value("power_iters", cfg.ortho.power_iters);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("layer config: ") + e.what());
  }
  return cfg;
}

void write_descriptor(const std::filesystem::path& kernel_path, const ConvLayerConfig& cfg) {
  std::ofstream out(descriptor_path(kernel_path));
  if (!out) throw FormatError("cannot write descriptor for " + kernel_path.string());
  out << config_to_json(cfg).dump(2) << '\n';
}

ConvLayerConfig read_descriptor(const std::filesystem::path& kernel_path) {
  std::ifstream in(descriptor_path(kernel_path));
  if (!in) throw FormatError("missing descriptor " + descriptor_path(kernel_path).string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("descriptor: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace orthoconv::layers
