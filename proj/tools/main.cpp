#include <iostream>

#include "CLI11.hpp"
#include "orthoconv/cli/commands.hpp"
#include "orthoconv/core/errors.hpp"
#include "orthoconv/dense/ortho.hpp"

using namespace orthoconv;

namespace {

void add_conv_flags(CLI::App* cmd, cli::ConvFlags& f) {
  cmd->add_option("--stride", f.stride, "stride override");
  cmd->add_option("--dilation", f.dilation, "dilation override");
  cmd->add_option("--groups", f.groups, "group count override");
  cmd->add_option("--padding", f.padding, "zero or circular")->check(CLI::IsMember({"zero", "circular"}));
  cmd->add_option("--transposed", f.transposed, "treat the kernel as a transposed layer");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orthogonal and 1-Lipschitz convolution construction and verification"};
  app.require_subcommand(1);

  cli::VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "run a verification suite");
  v->add_option("--spec", verify.spec, "suite spec (JSON)");
  v->add_flag("--grid", verify.grid, "append the full AOC/SOC configuration sweep");
  v->add_option("--tol", verify.tolerance, "tolerance for every layer");
  v->add_option("--report", verify.report, "write the JSON report here");
  v->add_flag("--timing", verify.timing, "include elapsed seconds in the report");
  v->add_flag("--quiet,-q", verify.quiet, "print failures and the summary only");

  cli::SpectrumArgs spectrum;
  std::string method = "toeplitz";
  auto* s = app.add_subcommand("spectrum", "singular values of a kernel file");
  s->add_option("--kernel", spectrum.kernel, "OKRN kernel file")->required();
  s->add_option("--method", spectrum.methods, "toeplitz, fft, gram or power (repeatable)")
      ->check(CLI::IsMember({"toeplitz", "fft", "gram", "power"}));
  s->add_flag("--all", spectrum.all, "dump every singular value");
  s->add_option("--size", spectrum.size, "input side length")->check(CLI::PositiveNumber);
  add_conv_flags(s, spectrum.conv);

  cli::BenchArgs bench;
  auto* b = app.add_subcommand("bench", "time kernel construction and forward passes");
  b->add_option("--spec", bench.spec, "suite spec (JSON)")->required();
  b->add_option("--rounds", bench.rounds, "timing rounds")->check(CLI::PositiveNumber);

  cli::ExportArgs exp;
  std::string padding = "circular";
  std::string ortho = "qr";
  auto* e = app.add_subcommand("export", "write a random layer kernel as OKRN");
  e->add_option("--type", exp.type, "aoc, soc, aol or plain")->check(CLI::IsMember({"aoc", "soc", "aol", "plain"}));
  e->add_option("--c-in", exp.cfg.c_in);
  e->add_option("--c-out", exp.cfg.c_out);
  e->add_option("--kernel-size", exp.cfg.kernel_size);
  e->add_option("--stride", exp.cfg.stride);
  e->add_option("--dilation", exp.cfg.dilation);
  e->add_option("--groups", exp.cfg.groups);
  e->add_flag("--transposed", exp.cfg.transposed);
  e->add_option("--padding", padding)->check(CLI::IsMember({"zero", "circular"}));
  e->add_option("--ortho", ortho, "dense orthogonalization method");
  e->add_option("--seed", exp.seed);
  e->add_option("--scale", exp.scale);
  e->add_option("--out", exp.out, "output kernel file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : cli::exit_usage;
  }

  if (*v) return cli::cmd_verify(verify, std::cout, std::cerr);
  if (*s) return cli::cmd_spectrum(spectrum, std::cout, std::cerr);
  if (*b) return cli::cmd_bench(bench, std::cout, std::cerr);
  exp.cfg.padding_mode = padding == "zero" ? PaddingMode::zero : PaddingMode::circular;
  try {
    exp.cfg.ortho.method = dense::ortho_method_from_string(ortho);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return cli::exit_usage;
  }
  return cli::cmd_export(exp, std::cout, std::cerr);
}
