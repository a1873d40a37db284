#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "orthoconv/cli/commands.hpp"
#include "orthoconv/layers/io.hpp"

using namespace orthoconv;
using namespace orthoconv::cli;
using nlohmann::json;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("orthoconv_cli_" + name);
}

std::filesystem::path write_spec(const std::string& name, const json& j) {
  const auto p = temp_path(name);
  std::ofstream(p) << j.dump();
  return p;
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CmdResult {
  int code;
  std::string out;
  std::string err;
};

CmdResult run_verify(const std::filesystem::path& spec, const std::filesystem::path& report = {}) {
  std::ostringstream out, err;
  VerifyArgs a;
  a.spec = spec;
  a.report = report;
  const int code = cmd_verify(a, out, err);
  return {code, out.str(), err.str()};
}

json aoc_spec(json layer) {
  return {{"seed", 7}, {"input_shape", {8, 8}}, {"layers", json::array({layer})}};
}

}  // namespace

TEST(Verify, StridedAocPasses) {
  const auto spec = write_spec("aoc.json", aoc_spec({{"type", "aoc"}, {"c_in", 4}, {"c_out", 8}, {"kernel_size", 3},
                                                     {"stride", 2}, {"padding_mode", "zero"}}));
  const auto report = temp_path("aoc_report.json");
  const CmdResult r = run_verify(spec, report);
  EXPECT_EQ(r.code, exit_ok) << r.out << r.err;
  const json rep = read_json(report);
  ASSERT_EQ(rep.size(), 1u);
  EXPECT_LE(rep[0].at("sigma_max").get<double>(), 1 + 1e-4);
  EXPECT_EQ(rep[0].at("verdict"), "orthogonal");
}

TEST(Verify, ScaledKernelIsViolation) {
  const auto spec = write_spec("scaled.json", aoc_spec({{"type", "aoc"}, {"scale", 2.0}}));
  const auto report = temp_path("scaled_report.json");
  const CmdResult r = run_verify(spec, report);
  EXPECT_EQ(r.code, exit_violation);
  EXPECT_EQ(read_json(report)[0].at("verdict"), "violation");
}

TEST(Verify, ImpossibleIsometryRejectedWithReason) {
  const auto spec = write_spec("iso.json", aoc_spec({{"type", "aoc"}, {"c_in", 1}, {"c_out", 8}, {"kernel_size", 3},
                                                     {"stride", 2}, {"require_isometry", true}}));
  const auto report = temp_path("iso_report.json");
  const CmdResult r = run_verify(spec, report);
  EXPECT_EQ(r.code, exit_violation);
  const json rec = read_json(report)[0];
  EXPECT_EQ(rec.at("verdict"), "violation");
  EXPECT_EQ(rec.at("rejected"), true);
  EXPECT_EQ(rec.at("rule"), "isometry_dimension");
  EXPECT_FALSE(rec.at("reason").get<std::string>().empty());
}

TEST(Verify, ParseErrorsExitTwo) {
  std::ofstream(temp_path("broken.json")) << "{ not json";
  EXPECT_EQ(run_verify(temp_path("broken.json")).code, exit_usage);
  EXPECT_EQ(run_verify(temp_path("does_not_exist.json")).code, exit_usage);
  EXPECT_EQ(run_verify(write_spec("unknown.json", aoc_spec({{"type", "dense"}}))).code, exit_usage);
  EXPECT_EQ(run_verify(write_spec("badmethod.json", {{"methods", {"magic"}}})).code, exit_usage);
  EXPECT_EQ(run_verify(write_spec("badpad.json", aoc_spec({{"type", "aoc"}, {"padding_mode", "reflect"}}))).code,
            exit_usage);
}

TEST(Verify, ReportIsByteIdenticalAcrossRunsAndThreads) {
  const json spec_json = {
      {"seed", 42},
      {"methods", {"toeplitz", "gram", "power"}},
      {"layers",
       {{{"type", "aoc"}, {"c_in", 4}, {"c_out", 4}},
        {{"type", "soc"}, {"c_in", 4}, {"c_out", 4}},
        {{"type", "aol"}, {"c_in", 4}, {"c_out", 4}},
        {{"type", "activation"}, {"activation", "maxmin"}, {"channels", 2}, {"points", 1}}}}};
  const auto spec = write_spec("det.json", spec_json);
  const auto a = temp_path("det_a.json");
  const auto b = temp_path("det_b.json");
  ASSERT_EQ(run_verify(spec, a).code, exit_ok);
  ::setenv("OKRN_THREADS", "3", 1);
  ASSERT_EQ(run_verify(spec, b).code, exit_ok);
  ::unsetenv("OKRN_THREADS");
  EXPECT_EQ(read_text(a), read_text(b));
  EXPECT_EQ(read_json(a).size(), 3u * 3 + 1);
}

TEST(Verify, SeedChangesParameters) {
  layers::Rng a = layer_rng(1, 0), b = layer_rng(2, 0), c = layer_rng(1, 1);
  const auto x = a();
  EXPECT_NE(x, b());
  EXPECT_NE(x, c());
  layers::Rng a2 = layer_rng(1, 0);
  EXPECT_EQ(x, a2());
}

TEST(Verify, TolerancePriority) {
  json layer = {{"type", "aoc"}, {"scale", 1.001}};
  const auto loose = write_spec("tol_loose.json", {{"tolerance", 1e-2}, {"layers", {layer}}});
  EXPECT_EQ(run_verify(loose).code, exit_ok);
  layer["tolerance"] = 1e-4;
  const auto tight = write_spec("tol_tight.json", {{"tolerance", 1e-2}, {"layers", {layer}}});
  EXPECT_EQ(run_verify(tight).code, exit_violation);
  std::ostringstream out, err;
  VerifyArgs args;
  args.spec = tight;
  args.tolerance = 1e-2;
  EXPECT_EQ(cmd_verify(args, out, err), exit_ok);
}

TEST(Verify, GridConfigurationsAllExist) {
  const auto grid = grid_layers();
  EXPECT_GT(grid.size(), 200u);
  bool even = false, one = false, transposed = false, dilated = false, grouped = false;
  for (const auto& d : grid) {
    even = even || d.at("kernel_size") == 2;
    one = one || d.at("kernel_size") == 1;
    transposed = transposed || d.at("transposed") == true;
    dilated = dilated || d.at("dilation") == 2;
    grouped = grouped || d.at("groups") == 2;
    EXPECT_FALSE(d.at("transposed") == true && d.at("padding_mode") == "circular");
  }
  EXPECT_TRUE(even && one && transposed && dilated && grouped);
}

class SpectrumCmd : public ::testing::Test {
 protected:
  CmdResult spectrum(const std::filesystem::path& kernel, std::vector<std::string> methods, bool all = false) {
    SpectrumArgs a;
    a.kernel = kernel;
    a.methods = std::move(methods);
    a.all = all;
    std::ostringstream out, err;
    const int code = cmd_spectrum(a, out, err);
    return {code, out.str(), err.str()};
  }
};

TEST_F(SpectrumCmd, IdentityAndDoubleOneByOne) {
  for (double s : {1.0, 2.0}) {
    Tensor4 k = Tensor4::delta(3);
    k *= s;
    const auto path = temp_path("scaled_" + std::to_string(static_cast<int>(s)) + ".okrn");
    std::filesystem::remove(layers::descriptor_path(path));
    layers::write_okrn(path, k);
    const CmdResult r = spectrum(path, {"toeplitz", "fft", "gram", "power"});
    ASSERT_EQ(r.code, exit_ok) << r.err;
    const json j = json::parse(r.out);
    ASSERT_EQ(j.size(), 4u);
    for (const auto& rep : j) {
      EXPECT_NEAR(rep.at("sigma_max").get<double>(), s, 1e-9) << rep.at("method");
      if (!rep.at("sigma_min").is_null()) {
        EXPECT_NEAR(rep.at("sigma_min").get<double>(), s, 1e-9);
      }
    }
  }
}

TEST_F(SpectrumCmd, ExportedKernelRoundTripsBitwise) {
  ExportArgs e;
  e.type = "aoc";
  e.cfg = {.c_in = 4, .c_out = 8, .kernel_size = 3, .stride = 2, .padding_mode = PaddingMode::zero};
  e.seed = 3;
  e.out = temp_path("export.okrn");
  std::ostringstream o, er;
  ASSERT_EQ(cmd_export(e, o, er), exit_ok) << er.str();

  layers::Rng rng = layer_rng(3, 0);
  json desc = layers::config_to_json(e.cfg);
  desc["type"] = "aoc";
  const LinearLayer direct = build_linear(desc, rng);
  const Tensor4 loaded = layers::read_okrn(e.out);
  EXPECT_EQ(std::memcmp(direct.kernel.values().data(), loaded.values().data(), loaded.size() * sizeof(double)), 0);

  const CmdResult a = spectrum(e.out, {"toeplitz"}, true);
  const CmdResult b = spectrum(e.out, {"toeplitz"}, true);
  ASSERT_EQ(a.code, exit_ok) << a.err;
  EXPECT_EQ(a.out, b.out);
  const json j = json::parse(a.out);
  const auto ref = verify::toeplitz_svd_spectrum(
      direct.kernel, verify::verification_setup(direct.cfg, direct.kernel).spec,
      verify::verification_setup(direct.cfg, direct.kernel).in_shape);
  EXPECT_EQ(j[0].at("all_values").get<std::vector<double>>(), ref.all_values);
  EXPECT_EQ(j[0].at("verdict"), "orthogonal");
}

TEST_F(SpectrumCmd, BadFilesExitTwo) {
  const auto path = temp_path("garbage.okrn");
  std::ofstream(path) << "NOPE";
  EXPECT_EQ(spectrum(path, {"toeplitz"}).code, exit_usage);
  EXPECT_EQ(spectrum(temp_path("missing.okrn"), {"toeplitz"}).code, exit_usage);
}

TEST_F(SpectrumCmd, FftNeedsCircularStrideOne) {
  const auto path = temp_path("strided.okrn");
  layers::write_okrn(path, Tensor4(4, 1, 2, 2, std::vector<double>(16, 0.5)));
  std::filesystem::remove(layers::descriptor_path(path));
  SpectrumArgs a;
  a.kernel = path;
  a.methods = {"fft"};
  a.conv.stride = 2;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_spectrum(a, out, err), exit_usage);
  a.methods = {"toeplitz"};
  EXPECT_EQ(cmd_spectrum(a, out, err), exit_ok) << err.str();
}

TEST(Bench, TimingHelperRanksWork) {
  volatile double sink = 0.0;
  const auto t = interleaved_medians(
      {[&] { sink = sink + 1.0; },
       [&] {
         for (int i = 0; i < 20000; ++i) sink = sink + i;
       }},
      3, 0.002);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_LT(t[0], t[1]);
}

TEST(Bench, RowShape) {
  layers::Rng rng(1);
  const BenchRow row = bench_layer({{"type", "soc"}, {"c_in", 4}, {"c_out", 4}}, rng, 8, 8, 3);
  for (std::size_t b = 0; b < 3; ++b) {
    EXPECT_GT(row.construction[b], 0.0);
    EXPECT_GT(row.plain[b], 0.0);
  }
  EXPECT_TRUE(row.soc_explicit.has_value());
  EXPECT_THROW(bench_layer({{"type", "sll"}}, rng, 8, 8, 3), ConfigError);
}
