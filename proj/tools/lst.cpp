// lst: command-line harness for the large-sparse-target output layer.
//
//   lst verify    lockstep equivalence of factored vs naive (exit 1 on breach)
//   lst bench     per-batch timing sweep over D, CSV output
//   lst train     demo training run, step,loss CSV output
//   lst gen-data  sparse example file generation
//
// Exit codes: 0 ok, 1 verification failed, 2 usage error, 3 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "lst/harness/bench.hpp"
#include "lst/harness/log.hpp"
#include "lst/harness/synthetic.hpp"
#include "lst/harness/train.hpp"
#include "lst/harness/verify.hpp"

namespace {

using namespace lst;
using namespace lst::harness;

const std::map<std::string, Impl> kImplMap{{"naive", Impl::naive}, {"factored", Impl::factored}, {"both", Impl::both}};
const std::map<std::string, SingularDetector> kDetectorMap{{"auto", SingularDetector::automatic},
                                                           {"svd", SingularDetector::full_svd},
                                                           {"power", SingularDetector::power_iteration}};
const std::map<std::string, Nonlinearity> kNonlinMap{{"none", Nonlinearity::none}, {"tanh", Nonlinearity::tanh}};

std::optional<InverseMode> parse_strategy(const std::string& s) {
  if (s == "woodbury") return InverseMode::woodbury;
  if (s == "solve") return InverseMode::solve_each_batch;
  return std::nullopt;
}

// Opens --out for appending CSV rows; the header is written only into an empty file.
struct CsvSink {
  std::ofstream file;
  bool needs_header = true;

  explicit CsvSink(const std::string& path, bool append) {
    if (path.empty() || path == "-") return;
    namespace fs = std::filesystem;
    const bool exists = fs::exists(path) && fs::file_size(path) > 0;
    file.open(path, append ? std::ios::app : std::ios::trunc);
    if (!file) throw Error("cannot open " + path + " for writing");
    needs_header = !(append && exists);
  }
  std::ostream& stream() { return file.is_open() ? static_cast<std::ostream&>(file) : std::cout; }
};

void add_stabilization_flags(CLI::App* cmd, StabilizationConfig& cfg, std::string& detector) {
  cmd->add_option("--sigma-low", cfg.sigma_low, "Lower edge of the safe singular-value range")->capture_default_str();
  cmd->add_option("--sigma-high", cfg.sigma_high, "Upper edge of the safe singular-value range")->capture_default_str();
  cmd->add_option("--n-check", cfg.n_check, "Updates between stabilization checks")->capture_default_str();
  cmd->add_option("--power-iters", cfg.power_iters, "Power iterations per extreme singular value")
      ->capture_default_str();
  cmd->add_option("--detector", detector, "Singular-value detector")
      ->check(CLI::IsMember({"auto", "svd", "power"}))
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact gradient updates for linear output layers with large sparse targets"};
  app.require_subcommand(1);

  int threads = 1;
  app.add_option("--threads", threads, "Worker threads for dense kernels")->capture_default_str();

  // verify
  VerifyConfig vcfg;
  std::string v_detector = "auto";
  std::string v_strategy = "all";
  std::string v_path = "all";
  auto* verify = app.add_subcommand("verify", "Lockstep factored-vs-naive equivalence check");
  verify->add_option("--D", vcfg.D, "Output dimension")->capture_default_str();
  verify->add_option("--d", vcfg.d, "Hidden dimension")->capture_default_str();
  verify->add_option("--K", vcfg.K, "Non-zeros per target")->capture_default_str();
  verify->add_option("--m", vcfg.m, "Minibatch size")->capture_default_str();
  verify->add_option("--eta", vcfg.eta, "Learning rate")->capture_default_str();
  verify->add_option("--steps", vcfg.steps, "Online steps")->capture_default_str();
  verify->add_option("--batches", vcfg.batches, "Minibatch steps")->capture_default_str();
  verify->add_option("--seed", vcfg.seed, "Random seed")->capture_default_str();
  verify->add_option("--impl", v_path, "Which paths to run")
      ->check(CLI::IsMember({"all", "online", "minibatch"}))
      ->capture_default_str();
  verify->add_option("--strategy", v_strategy, "Inverse maintenance")
      ->check(CLI::IsMember({"all", "woodbury", "solve"}))
      ->capture_default_str();
  verify->add_option("--check-every", vcfg.check_every, "Steps between weight/invariant checks")
      ->capture_default_str();
  verify->add_flag("--stabilize", vcfg.stabilize, "Enable stabilization checks during the run");
  verify->add_option("--eta-mismatch", vcfg.eta_mismatch, "Negative control: scale the factored eta")
      ->group("");
  add_stabilization_flags(verify, vcfg.stabilization, v_detector);

  // bench
  BenchConfig bcfg;
  std::string b_impl = "both";
  std::string b_strategy = "auto";
  std::string b_out;
  auto* bench = app.add_subcommand("bench", "Per-batch timing sweep over D");
  bench->add_option("--D", bcfg.D_sweep, "Output dimensions to sweep")->delimiter(',')->capture_default_str();
  bench->add_option("--d", bcfg.d, "Hidden dimension")->capture_default_str();
  bench->add_option("--K", bcfg.K, "Non-zeros per target")->capture_default_str();
  bench->add_option("--m", bcfg.m, "Minibatch size")->capture_default_str();
  bench->add_option("--eta", bcfg.eta, "Learning rate")->capture_default_str();
  bench->add_option("--seed", bcfg.seed, "Random seed")->capture_default_str();
  bench->add_option("--reps", bcfg.reps, "Timed batches per point (>= 20)")
      ->check(CLI::Range(std::size_t{20}, std::size_t{1000000}))
      ->capture_default_str();
  bench->add_option("--warmup", bcfg.warmup, "Discarded warm-up batches")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1000000}))
      ->capture_default_str();
  bench->add_option("--impl", b_impl, "Implementations to time")
      ->check(CLI::IsMember({"naive", "factored", "both"}))
      ->capture_default_str();
  bench->add_option("--strategy", b_strategy, "Inverse maintenance")
      ->check(CLI::IsMember({"auto", "woodbury", "solve"}))
      ->capture_default_str();
  bench->add_option("--out", b_out, "CSV path (appended; '-' for stdout)");

  // train
  TrainConfig tcfg;
  std::string t_impl = "factored";
  std::string t_strategy = "auto";
  std::string t_detector = "auto";
  std::string t_nonlin = "tanh";
  std::string t_data;
  std::string t_out;
  std::size_t t_examples = 2000;
  bool t_synthetic = false;
  bool t_no_stabilize = false;
  auto* train = app.add_subcommand("train", "Train the demo network and emit a loss curve");
  train->add_option("--Din", tcfg.D_in, "Input dimension")->capture_default_str();
  train->add_option("--D", tcfg.D, "Output dimension")->capture_default_str();
  train->add_option("--d", tcfg.d, "Hidden dimension")->capture_default_str();
  train->add_option("--Kin", tcfg.K_in, "Non-zeros per input")->capture_default_str();
  train->add_option("--K", tcfg.K, "Non-zeros per target")->capture_default_str();
  train->add_option("--m", tcfg.m, "Minibatch size")->capture_default_str();
  train->add_option("--eta", tcfg.eta, "Learning rate")->capture_default_str();
  train->add_option("--steps", tcfg.steps, "Training steps (minibatches)")->capture_default_str();
  train->add_option("--seed", tcfg.seed, "Random seed")->capture_default_str();
  train->add_option("--impl", t_impl, "Output layer implementation")
      ->check(CLI::IsMember({"naive", "factored", "both"}))
      ->capture_default_str();
  train->add_option("--strategy", t_strategy, "Inverse maintenance")
      ->check(CLI::IsMember({"auto", "woodbury", "solve"}))
      ->capture_default_str();
  train->add_option("--nonlinearity", t_nonlin, "Hidden activation")
      ->check(CLI::IsMember({"none", "tanh"}))
      ->capture_default_str();
  auto* data_opt = train->add_option("--data", t_data, "Sparse example file");
  auto* synth_opt = train->add_flag("--synthetic", t_synthetic, "Generate a planted dataset in memory");
  data_opt->excludes(synth_opt);
  train->add_option("--examples", t_examples, "Synthetic examples to generate")->capture_default_str();
  train->add_flag("--no-stabilize", t_no_stabilize, "Disable singular-value stabilization");
  train->add_option("--out", t_out, "Loss CSV path ('-' for stdout)");
  add_stabilization_flags(train, tcfg.stabilization, t_detector);

  // gen-data
  GenDataConfig gcfg;
  std::string g_out;
  bool g_random = false;
  auto* gen = app.add_subcommand("gen-data", "Write a sparse example file");
  gen->add_option("--Din", gcfg.input_dim, "Input dimension")->capture_default_str();
  gen->add_option("--D", gcfg.output_dim, "Output dimension")->capture_default_str();
  gen->add_option("--Kin", gcfg.input_nnz, "Non-zeros per input")->capture_default_str();
  gen->add_option("--K", gcfg.output_nnz, "Non-zeros per target")->capture_default_str();
  gen->add_option("--n", gcfg.n_examples, "Number of examples")->capture_default_str();
  gen->add_option("--seed", gcfg.seed, "Random seed")->capture_default_str();
  gen->add_option("--noise", gcfg.noise, "Planted-target noise stddev")->capture_default_str();
  gen->add_flag("--random-targets", g_random, "Unstructured random targets instead of a planted model");
  gen->add_option("--out", g_out, "Output path ('-' for stdout)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  Eigen::setNbThreads(threads);

  try {
    if (*verify) {
      vcfg.stabilization.detector = kDetectorMap.at(v_detector);
      if (v_path != "all" || v_strategy != "all") {
        for (const auto path : {VerifyPath::online, VerifyPath::minibatch}) {
          if (v_path == "online" && path != VerifyPath::online) continue;
          if (v_path == "minibatch" && path != VerifyPath::minibatch) continue;
          for (const auto mode : {InverseMode::woodbury, InverseMode::solve_each_batch}) {
            if (v_strategy == "woodbury" && mode != InverseMode::woodbury) continue;
            if (v_strategy == "solve" && mode != InverseMode::solve_each_batch) continue;
            vcfg.runs.push_back({path, mode});
          }
        }
      }
      const VerifyReport report = cmd_verify(vcfg);
      print_verify_report(std::cout, report);
      return report.passed() ? 0 : 1;
    }

    if (*bench) {
      bcfg.impl = kImplMap.at(b_impl);
      bcfg.strategy = parse_strategy(b_strategy);
      const auto records = cmd_bench(bcfg);
      CsvSink sink(b_out, true);
      write_bench_csv(sink.stream(), records, sink.needs_header);
      return 0;
    }

    if (*train) {
      tcfg.impl = kImplMap.at(t_impl);
      tcfg.strategy = parse_strategy(t_strategy);
      tcfg.nonlinearity = kNonlinMap.at(t_nonlin);
      tcfg.stabilization.detector = kDetectorMap.at(t_detector);
      tcfg.stabilize = !t_no_stabilize;
      TrainResult result;
      if (!t_data.empty()) {
        std::ifstream in(t_data);
        if (!in) throw Error("cannot open " + t_data);
        const SparseDataset ds = read_dataset(in);
        tcfg.D_in = ds.header.input_dim;
        tcfg.D = ds.header.output_dim;
        tcfg.K_in = ds.header.input_nnz;
        tcfg.K = ds.header.output_nnz;
        result = cmd_train(tcfg, ds);
      } else {
        if (!t_synthetic) log_message(LogLevel::warn, "train: no --data given, using --synthetic");
        result = cmd_train_synthetic(tcfg, t_examples);
      }
      CsvSink sink(t_out, false);
      write_loss_csv(sink.stream(), result);
      log_json(LogLevel::info, {{"event", "train_done"},
                                {"stabilization_fixes", result.stabilization_fixes},
                                {"max_curve_rel_diff", result.max_curve_rel_diff}});
      return 0;
    }

    if (*gen) {
      gcfg.planted = !g_random;
      if (g_out == "-") {
        generate_dataset(std::cout, gcfg);
      } else {
        std::ofstream os(g_out, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot open " + g_out + " for writing");
        generate_dataset(os, gcfg);
      }
      return 0;
    }
  } catch (const lst::Error& e) {
    log_message(LogLevel::error, e.what());
    std::cerr << "lst: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
