#include "dimmpf/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dimmpf/parallel.hpp"
#include "dimmpf/plain_filter.hpp"

namespace dimmpf {

Var mse_loss(Tape& t, std::span<const Var> means, std::span<const double> truth) {
  if (means.size() != truth.size()) throw std::invalid_argument("mse_loss: length mismatch");
  std::vector<Var> sq;
  sq.reserve(means.size());
  for (size_t i = 0; i < means.size(); ++i) {
    Var d = t.sub(means[i], t.constant(truth[i]));
    sq.push_back(t.mul(d, d));
  }
  return t.mul(t.add_n(sq), t.constant(1.0 / static_cast<double>(means.size())));
}

Var data_likelihood_loss(Tape& t, std::span<const Var> log_wsum, int particles) {
  Var z = t.add_n(log_wsum);
  const double c = static_cast<double>(log_wsum.size()) * std::log(double(particles));
  return t.sub(t.constant(c), z);
}

Var combined_loss(Tape& t, Var mse, Var datalik, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("combined_loss: lambda must be nonnegative");
  return t.add(mse, t.mul(datalik, t.constant(lambda)));
}

void AdamOptimizer::step(ThetaStore& store, std::span<const double> grad) {
  const size_t n = store.flat_size();
  if (m_.size() != n) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
  ++steps_;
  std::vector<double> vals(n);
  store.flatten_values(vals);
  const double bc1 = 1.0 - std::pow(beta1, double(steps_));
  const double bc2 = 1.0 - std::pow(beta2, double(steps_));
  for (size_t i = 0; i < n; ++i) {
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * grad[i];
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * grad[i] * grad[i];
    vals[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps);
  }
  store.unflatten_values(vals);
}

double clip_global_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
  return norm;
}

double dataset_mse(const ThetaStore& store, const LearnedModelConfig& mcfg,
                   std::span<const TrajectoryRecord> split, int particles,
                   ResamplerKind resampler, uint64_t seed, const std::string& stream_tag,
                   int workers) {
  PlainLearnedModel model(store, mcfg);
  FilterConfig fcfg;
  fcfg.particles = particles;
  fcfg.mode = EstimatorMode::detached;  // inference path
  fcfg.resampler = resampler;
  std::vector<double> mses(split.size());
  parallel_for(static_cast<int>(split.size()), workers > 0 ? workers : default_workers(),
               [&](int i) {
                 RandomStream rng =
                     RandomStream::derived(seed, stream_tag, static_cast<uint64_t>(i));
                 PlainFilterOutput out = run_plain_filter(model, split[i].y, fcfg, rng);
                 mses[i] = out.mse(split[i].x);
               });
  double acc = 0.0;
  for (double v : mses) acc += v;
  return acc / static_cast<double>(mses.size());
}

namespace {

struct TrajGrad {
  std::vector<double> grad;
  double loss = 0.0, mse = 0.0, datalik = 0.0;
};

void run_trajectory(const ThetaStore& store, const LearnedModelConfig& mcfg,
                    const TrainConfig& cfg, const TrajectoryRecord& traj, int epoch,
                    uint64_t traj_uid, TrajGrad& out) {
  Tape tape;
  TapeLearnedModel model(store, mcfg);
  FilterConfig fcfg;
  fcfg.particles = cfg.particles;
  fcfg.mode = cfg.mode;
  fcfg.resampler = cfg.resampler;

  RandomStream rng_state =
      RandomStream::derived(cfg.seed, "train-state", static_cast<uint64_t>(epoch), traj_uid);
  TapeFilterOutput state = run_tape_filter(tape, model, traj.y, fcfg, rng_state);
  Var mse = mse_loss(tape, state.mean, traj.x);

  RandomStream rng_lik =
      RandomStream::derived(cfg.seed, "train-lik", static_cast<uint64_t>(epoch), traj_uid);
  TapeFilterOutput lik = run_tape_likelihood_filter(tape, model, traj.x, traj.y, fcfg, rng_lik);
  Var datalik = data_likelihood_loss(tape, lik.log_wsum, cfg.particles);

  Var loss = combined_loss(tape, mse, datalik, cfg.lambda);
  out.loss = loss.scalar();
  out.mse = mse.scalar();
  out.datalik = datalik.scalar();

  tape.backward(loss);
  out.grad.assign(store.flat_size(), 0.0);
  tape.accumulate_param_grads(store.offsets(), out.grad);
}

}  // namespace

TrainResult train(const Dataset& data, const LearnedModelConfig& mcfg, const TrainConfig& cfg) {
  if (data.train.empty() || data.val.empty())
    throw std::invalid_argument("train: dataset must have train and validation splits");
  ThetaStore store = init_learned_store(mcfg, RandomStream::derive_seed(cfg.seed, "init"));
  AdamOptimizer opt;
  opt.lr = cfg.lr;
  const int workers = cfg.workers > 0 ? cfg.workers : default_workers();
  const int n_train = static_cast<int>(data.train.size());
  const int n_batches = (n_train + cfg.batch_size - 1) / cfg.batch_size;

  TrainResult res;
  res.best_val_mse = std::numeric_limits<double>::infinity();

  FILE* logf = nullptr;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    logf = std::fopen((cfg.out_dir + "/training_log.csv").c_str(), "w");
    if (logf) std::fprintf(logf, "epoch,batch,loss,mse,datalik,grad_norm,val_mse\n");
  }
  auto write_row = [&](const TrainLogRow& r) {
    res.log.push_back(r);
    if (!logf) return;
    std::fprintf(logf, "%d,%d,%.10g,%.10g,%.10g,%.10g,", r.epoch, r.batch, r.loss, r.mse,
                 r.datalik, r.grad_norm);
    if (std::isnan(r.val_mse))
      std::fprintf(logf, "\n");
    else
      std::fprintf(logf, "%.10g\n", r.val_mse);
    std::fflush(logf);
  };

  std::vector<int> order(n_train);
  for (int i = 0; i < n_train; ++i) order[i] = i;
  std::vector<double> flat_grad(store.flat_size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RandomStream shuffle_rng =
        RandomStream::derived(cfg.seed, "shuffle", static_cast<uint64_t>(epoch));
    for (int i = n_train - 1; i > 0; --i) {
      int j = static_cast<int>(shuffle_rng.uniform() * (i + 1));
      std::swap(order[i], order[std::min(j, i)]);
    }

    for (int b = 0; b < n_batches; ++b) {
      const int lo = b * cfg.batch_size;
      const int hi = std::min(lo + cfg.batch_size, n_train);
      const int bs = hi - lo;
      std::vector<TrajGrad> grads(bs);
      parallel_for(bs, workers, [&](int i) {
        const int tj = order[lo + i];
        run_trajectory(store, mcfg, cfg, data.train[tj], epoch, static_cast<uint64_t>(tj),
                       grads[i]);
      });

      double loss = 0.0, mse = 0.0, datalik = 0.0;
      std::fill(flat_grad.begin(), flat_grad.end(), 0.0);
      for (int i = 0; i < bs; ++i) {  // fixed reduction order
        loss += grads[i].loss;
        mse += grads[i].mse;
        datalik += grads[i].datalik;
        for (size_t p = 0; p < flat_grad.size(); ++p) flat_grad[p] += grads[i].grad[p];
      }
      loss /= bs;
      mse /= bs;
      datalik /= bs;
      for (double& g : flat_grad) g /= bs;

      if (!std::isfinite(loss))
        throw std::runtime_error("train: nonfinite loss at epoch " + std::to_string(epoch) +
                                 " batch " + std::to_string(b));

      bool grad_ok = true;
      for (double g : flat_grad)
        if (!std::isfinite(g)) {
          grad_ok = false;
          break;
        }

      TrainLogRow row{epoch, b, loss, mse, datalik, 0.0,
                      std::numeric_limits<double>::quiet_NaN()};
      if (!grad_ok) {
        ++res.skipped_steps;
        row.grad_norm = std::numeric_limits<double>::quiet_NaN();
        write_row(row);
        std::fprintf(stderr, "train: nonfinite gradient, skipping step (epoch %d batch %d)\n",
                     epoch, b);
        continue;
      }
      row.grad_norm = clip_global_norm(flat_grad, cfg.clip);
      opt.step(store, flat_grad);
      ++res.optimizer_steps;

      if (b == n_batches - 1) {
        row.val_mse = dataset_mse(store, mcfg, data.val, cfg.particles, cfg.resampler, cfg.seed,
                                  "val-e" + std::to_string(epoch), workers);
        res.final_val_mse = row.val_mse;
        if (row.val_mse < res.best_val_mse) {
          res.best_val_mse = row.val_mse;
          res.best_epoch = epoch;
          res.best_theta = store;
          if (!cfg.out_dir.empty()) {
            store.save(cfg.out_dir + "/checkpoint_e" + std::to_string(epoch) + ".theta");
            store.save(cfg.out_dir + "/best.theta");
          }
        }
      }
      write_row(row);
    }
  }
  if (res.best_epoch < 0) res.best_theta = store;
  if (!cfg.out_dir.empty()) store.save(cfg.out_dir + "/final.theta");
  if (logf) std::fclose(logf);
  return res;
}

}  // namespace dimmpf
