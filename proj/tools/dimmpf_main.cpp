// Command-line driver: dataset generation, training, evaluation, estimator
// diagnostics and timing benchmarks for the regime-switching differentiable
// particle filter.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>

#include "dimmpf/config.hpp"
#include "dimmpf/eval.hpp"
#include "dimmpf/parallel.hpp"
#include "dimmpf/plain_filter.hpp"
#include "dimmpf/training.hpp"

using namespace dimmpf;

namespace {

struct CommonFlags {
  std::string config_path;
  long seed = -1;
  int workers = 0;
  std::string out_dir;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key = value with [sections])");
    cmd->add_option("--seed", seed, "root seed; all randomness derives from it");
    cmd->add_option("--workers", workers, "worker threads (default: all cores)");
    cmd->add_option("--out", out_dir, "output directory");
  }

  RunConfig resolve() const {
    RunConfig rc;
    if (!config_path.empty()) rc.load(ConfigFile::parse(config_path));
    if (seed >= 0) {
      rc.seed = static_cast<uint64_t>(seed);
      rc.seed_set = true;
    }
    if (!rc.seed_set) throw CLI::ValidationError("--seed (or run.seed in the config) is required");
    if (workers > 0) rc.workers = workers;
    if (rc.workers <= 0) rc.workers = default_workers();
    if (!out_dir.empty()) rc.out_dir = out_dir;
    rc.train.seed = rc.seed;
    rc.train.workers = rc.workers;
    return rc;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dimmpf: differentiable interacting multiple-model particle filtering"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "simulate a dataset and write it to disk");
  CommonFlags gen_flags;
  gen_flags.attach(gen);
  std::string gen_env = "markov";
  int gen_n = 2000, gen_T = 50;
  bool gen_csv = false;
  gen->add_option("--env", gen_env, "markov | polya | erlang");
  gen->add_option("--n-traj", gen_n, "trajectory count (split 2:1:1)");
  gen->add_option("--T", gen_T, "steps after t=0");
  gen->add_flag("--csv", gen_csv, "also export CSV mirrors");

  // train
  auto* tr = app.add_subcommand("train", "train the learned filter on a dataset");
  CommonFlags tr_flags;
  tr_flags.attach(tr);
  std::string tr_data;
  int tr_epochs = -1, tr_particles = -1;
  double tr_lambda = -1.0, tr_lr = -1.0;
  std::string tr_mode, tr_resampler;
  tr->add_option("--data", tr_data, "dataset directory (from `generate`)")->required();
  tr->add_option("--epochs", tr_epochs, "epoch budget");
  tr->add_option("--particles", tr_particles, "training particle count");
  tr->add_option("--lambda", tr_lambda, "data-likelihood loss coefficient");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--mode", tr_mode, "rao-blackwellised | naive | detached");
  tr->add_option("--resampler", tr_resampler, "systematic | multinomial");

  // eval
  auto* ev = app.add_subcommand("eval", "filtering accuracy on the test split");
  CommonFlags ev_flags;
  ev_flags.attach(ev);
  std::string ev_data, ev_theta, ev_env;
  int ev_particles = -1, ev_seeds = 5;
  bool ev_oracle = false, ev_dump = false;
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--theta", ev_theta, "trained parameter file (learned mode)");
  ev->add_flag("--oracle", ev_oracle, "run the true-model reference filter instead");
  ev->add_option("--env", ev_env, "environment for --oracle (defaults to the dataset's)");
  ev->add_option("--particles", ev_particles, "test particle count");
  ev->add_option("--seeds", ev_seeds, "independent seeds for --oracle");
  ev->add_flag("--dump-filter", ev_dump, "write per-step filter output CSV");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "toy-model gradient bias / variance reports");
  CommonFlags gc_flags;
  gc_flags.attach(gc);
  std::string gc_mode = "rao-blackwellised";
  int gc_runs = 10000, gc_particles = 2048;
  bool gc_variance = false;
  int gc_var_runs = 250;
  gc->add_option("--mode", gc_mode, "estimator to check");
  gc->add_option("--runs", gc_runs, "independent filter runs (bias report)");
  gc->add_option("--particles", gc_particles, "particles per run");
  gc->add_flag("--variance", gc_variance, "also compare per-coordinate gradient variances");
  gc->add_option("--variance-runs", gc_var_runs, "runs per mode for --variance");

  // bench
  auto* bn = app.add_subcommand("bench", "timing table: training-step scaling and inference");
  CommonFlags bn_flags;
  bn_flags.attach(bn);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      RunConfig rc = gen_flags.resolve();
      EnvKind kind = parse_env(gen_env);
      Dataset ds = generate_dataset(kind, gen_n, gen_T, rc.seed);
      ds.save(rc.out_dir);
      if (gen_csv) ds.export_csv(rc.out_dir);
      std::printf("wrote %zu/%zu/%zu trajectories (T=%d, env=%s) to %s\n", ds.train.size(),
                  ds.val.size(), ds.test.size(), gen_T, env_name(kind), rc.out_dir.c_str());
      return 0;
    }

    if (tr->parsed()) {
      RunConfig rc = tr_flags.resolve();
      Dataset ds = Dataset::load(tr_data);
      TrainConfig tc = rc.train;
      tc.out_dir = rc.out_dir;
      if (tr_epochs > 0) tc.epochs = tr_epochs;
      if (tr_particles > 0) tc.particles = tr_particles;
      if (tr_lambda >= 0.0) tc.lambda = tr_lambda;
      if (tr_lr > 0.0) tc.lr = tr_lr;
      if (!tr_mode.empty()) tc.mode = parse_mode(tr_mode);
      if (!tr_resampler.empty()) tc.resampler = parse_resampler(tr_resampler);
      TrainResult res = train(ds, rc.model, tc);
      std::printf("best validation MSE %.4f (epoch %d); final %.4f; %d steps (%d skipped)\n",
                  res.best_val_mse, res.best_epoch, res.final_val_mse, res.optimizer_steps,
                  res.skipped_steps);
      std::printf("checkpoints and training_log.csv in %s\n", tc.out_dir.c_str());
      return 0;
    }

    if (ev->parsed()) {
      RunConfig rc = ev_flags.resolve();
      Dataset ds = Dataset::load(ev_data);
      const int particles = ev_particles > 0 ? ev_particles : rc.eval_particles;
      std::filesystem::create_directories(rc.out_dir);
      MetricsReport rep;
      if (ev_oracle) {
        EnvKind kind = ev_env.empty() ? ds.kind : parse_env(ev_env);
        rep = oracle_immpf(kind, ds.test, particles, ev_seeds, rc.seed, rc.resampler, rc.workers);
      } else {
        if (ev_theta.empty())
          throw CLI::ValidationError("eval needs --theta (learned) or --oracle");
        ThetaStore store = ThetaStore::load(ev_theta);
        rep = learned_eval(store, rc.model, ds.test, particles, rc.seed, rc.resampler, rc.workers,
                           "learned-" + std::string(env_name(ds.kind)));
        if (ev_dump)
          dump_filter_csv(store, rc.model, ds.test, particles, rc.resampler, rc.seed,
                          rc.out_dir + "/filter_output.csv");
      }
      rep.write_csv(rc.out_dir + "/metrics.csv");
      std::printf("%s\n", rep.summary().c_str());
      return 0;
    }

    if (gc->parsed()) {
      RunConfig rc = gc_flags.resolve();
      std::filesystem::create_directories(rc.out_dir);
      ToyModel toy = make_default_toy();
      EstimatorMode mode = parse_mode(gc_mode);
      bool all_ok = true;
      ToyBiasBundle bundle =
          toy_gradient_bias_all(toy, mode, gc_particles, gc_runs, rc.seed, rc.workers);
      const std::pair<ToyTarget, const BiasReport*> reports[] = {
          {ToyTarget::filtering_mean, &bundle.mean},
          {ToyTarget::log_marginal, &bundle.logz},
          {ToyTarget::likelihood_log_marginal, &bundle.likz},
      };
      for (auto& [target, rep] : reports) {
        const double frac = rep->frac_within(3.0);
        const bool ok = frac >= 0.95;
        all_ok = all_ok && ok;
        rep->write_csv(rc.out_dir + "/bias_" + std::string(toy_target_name(target)) + ".csv");
        std::printf("[%s] %s / %s: %.1f%% of %zu coordinates within |z|<=3 (runs=%d)\n",
                    ok ? "PASS" : "FAIL", gc_mode.c_str(), toy_target_name(target), 100.0 * frac,
                    rep->z.size(), rep->runs);
      }
      if (gc_variance) {
        TrajectoryRecord traj = simulate_trajectory(
            EnvKind::markov, 50, RandomStream::derive_seed(rc.seed, "vc-traj"));
        VarianceCompareReport rep = estimator_variance_compare(
            traj, rc.model, EstimatorMode::rao_blackwellised, EstimatorMode::naive, 104,
            gc_var_runs, rc.seed, rc.workers);
        rep.write_csv(rc.out_dir + "/variance_compare.csv", "rb", "naive");
        std::printf("variance: rb <= naive on %.1f%% of coordinates (%d runs)\n",
                    100.0 * rep.frac_a_le_b, rep.runs);
      }
      return all_ok ? 0 : 1;
    }

    if (bn->parsed()) {
      RunConfig rc = bn_flags.resolve();
      std::filesystem::create_directories(rc.out_dir);
      TimingReport rep = benchmark_timing(rc.model, rc.seed);
      rep.write_csv(rc.out_dir + "/timing.csv");
      std::printf("%s", rep.summary().c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
