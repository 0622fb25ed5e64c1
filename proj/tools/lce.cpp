// lce — blind super-resolution pipeline driver.
// Subcommands: synth, train, eval, analyze, verify, info.
// Exit codes: 0 success, 1 verification failure, 2 usage/config error, 3 I/O error.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "lce/core.hpp"

namespace {

int not_implemented(const std::string& name) {
  std::fprintf(stderr, "%s: not wired up yet\n", name.c_str());
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LCE blind super-resolution pipeline"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "synthesize a degraded dataset");
  auto* train = app.add_subcommand("train", "train the corrector or super resolver");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  auto* analyze = app.add_subcommand("analyze", "correction-error analysis report");
  auto* verify = app.add_subcommand("verify", "run self-verification suites");
  auto* info = app.add_subcommand("info", "print model parameter / mult-add counts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return not_implemented("synth");
    if (train->parsed()) return not_implemented("train");
    if (eval->parsed()) return not_implemented("eval");
    if (analyze->parsed()) return not_implemented("analyze");
    if (verify->parsed()) return not_implemented("verify");
    if (info->parsed()) return not_implemented("info");
  } catch (const lce::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const lce::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const lce::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fatal: %s\n", e.what());
    return 1;
  }
  return 2;
}
