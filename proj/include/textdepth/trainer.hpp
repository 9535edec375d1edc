// Training loop: noise-prediction loss, gradient accumulation, Adam,
// warmup + exponential learning-rate decay, flip augmentation, caption
// dropout, periodic checkpoints.
//
// Determinism contract: every stochastic choice of iteration i and flat
// sample slot k (sample index, flip, caption dropout, timestep, noise) draws
// from the stream derived as mix(seed, {kTrainSample, i, k}), in that
// documented order. Per-sample gradients may be computed on worker threads;
// they are reduced in slot order, so results do not depend on scheduling,
// and a run can resume from any checkpoint bit-exactly.
#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

#include "textdepth/codec.hpp"
#include "textdepth/denoiser.hpp"
#include "textdepth/depthmetrics.hpp"
#include "textdepth/scenegen.hpp"
#include "textdepth/schedule.hpp"

namespace textdepth {

inline void parallel_for(int64_t n, int workers, const std::function<void(int64_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int use = static_cast<int>(std::min<int64_t>(workers, n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(use));
  std::atomic<int64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::function<void()> worker = [&]() {
    for (;;) {
      const int64_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  for (int w = 0; w < use; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline int default_worker_count() {
  if (const char* env = std::getenv("TEXTDEPTH_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

struct TrainConfig {
  int64_t iterations = 3000;
  int accumulation = 8;
  int micro_batch = 2;
  double lr0 = 3e-5;
  int warmup_steps = 100;
  int64_t decay_end = 25000;
  double decay_floor = 0.01;
  double flip_prob = 0.5;
  double caption_dropout = 0.1;
  uint64_t seed = 0;
  int64_t checkpoint_interval = 50;
  int64_t val_interval = 0;  // 0 = no validation hook
  ScheduleSpec schedule;
  int workers = 0;  // 0 = TEXTDEPTH_WORKERS env or hardware concurrency

  void validate() const {
    if (iterations < 1) throw ConfigError("train: iterations must be >= 1");
    if (accumulation < 1 || micro_batch < 1)
      throw ConfigError("train: accumulation and micro-batch must be >= 1");
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(flip_prob) || !prob(caption_dropout))
      throw ConfigError("train: probabilities must be in [0,1]");
    if (lr0 <= 0.0) throw ConfigError("train: lr0 must be positive");
    if (warmup_steps < 0 || decay_end <= warmup_steps)
      throw ConfigError("train: decay horizon must extend past warmup");
    if (!(decay_floor > 0.0 && decay_floor <= 1.0))
      throw ConfigError("train: decay floor must be in (0,1]");
    if (checkpoint_interval < 1) throw ConfigError("train: checkpoint interval must be >= 1");
  }

  int batch_size() const { return accumulation * micro_batch; }
  int worker_count() const { return workers > 0 ? workers : default_worker_count(); }
};

// Warmup then exponential decay to `decay_floor` of lr0, constant afterward.
// Computed as a division so the closed-form pin points land exactly.
inline double lr_at(int64_t iteration, const TrainConfig& cfg) {
  if (iteration < cfg.warmup_steps)
    return cfg.lr0 * static_cast<double>(iteration + 1) / cfg.warmup_steps;
  const double span = static_cast<double>(
      std::min(iteration, cfg.decay_end) - cfg.warmup_steps);
  const double frac = span / static_cast<double>(cfg.decay_end - cfg.warmup_steps);
  return cfg.lr0 / std::pow(1.0 / cfg.decay_floor, frac);
}

// --- Adam ---------------------------------------------------------------------

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

template <typename T>
struct AdamState {
  ParamSet<T> m;
  ParamSet<T> v;
  int64_t step = 0;

  static AdamState init(const ParamSet<T>& params) {
    AdamState s;
    s.m = zeros_like(params);
    s.v = zeros_like(params);
    return s;
  }
};

template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state,
               double lr) {
  state.step += 1;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const Tensor<T>& g = grads.at(name);
    Tensor<T>& m = state.m.at(name);
    Tensor<T>& v = state.v.at(name);
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi)) throw NumericError("non-finite gradient in tensor " + name);
      const double mi = kAdamBeta1 * static_cast<double>(m[i]) + (1.0 - kAdamBeta1) * gi;
      const double vi = kAdamBeta2 * static_cast<double>(v[i]) + (1.0 - kAdamBeta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + kAdamEps));
    }
  }
}

// --- sample source -------------------------------------------------------------

struct SampleSource {
  size_t count = 0;
  std::function<Sample(size_t)> get;
};

inline SampleSource memory_source(std::shared_ptr<std::vector<Sample>> samples) {
  SampleSource s;
  s.count = samples->size();
  s.get = [samples](size_t i) { return (*samples)[i]; };
  return s;
}

inline SampleSource dataset_source(std::shared_ptr<Dataset> ds) {
  SampleSource s;
  s.count = ds->size();
  s.get = [ds](size_t i) { return ds->load(i); };
  return s;
}

// Load a whole dataset into memory (training touches samples repeatedly).
inline SampleSource preloaded_source(const Dataset& ds) {
  auto samples = std::make_shared<std::vector<Sample>>();
  samples->reserve(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) samples->push_back(ds.load(i));
  return memory_source(std::move(samples));
}

// --- loss ----------------------------------------------------------------------

// Per-sample loss + parameter gradients. Stream consumption order: caption
// dropout coin, timestep, noise. The depth map is normalized and encoded;
// the target is eps or v per the parameterization.
template <typename T>
double sample_loss_and_grad(const ParamSet<T>& params, const DenoiserConfig& cfg,
                            const NoiseSchedule& schedule, const Sample& sample,
                            double caption_dropout, RngStream& stream,
                            const Vocabulary& vocab, ParamSet<T>* grads) {
  Sample work = sample;
  if (caption_dropout > 0.0 && stream.uniform() < caption_dropout) {
    work.caption.clear();
    work.tokens = tokenize(work.caption, vocab, cfg.max_tokens);
  } else if (static_cast<int>(work.tokens.ids.size()) != cfg.max_tokens) {
    work.tokens = tokenize(work.caption, vocab, cfg.max_tokens);
  }

  DepthMap<float> depth{work.depth, work.mask, DepthSpace::kMetric};
  auto normalized = normalize_depth(depth);
  const Tensor<T> depth_t = normalized.normalized.values.template cast<T>();
  const Tensor<T> image_t = work.image.template cast<T>();

  const auto z_y = encode(depth_t, LatentKind::kDepth);
  const auto x_lat = encode(image_t, LatentKind::kImage);

  const int t = 1 + static_cast<int>(stream.bounded(static_cast<uint64_t>(schedule.steps())));
  Tensor<T> eps(z_y.values.shape());
  stream.fill_gaussian<T>(eps.data());

  const Tensor<T> z_t = marginal_sample(z_y.values, t, eps, schedule);
  const Tensor<T> target = cfg.parameterization == Parameterization::kV
                               ? v_target(z_y.values, eps, t, schedule)
                               : eps;

  DenoiserCache<T> cache;
  const Tensor<T> pred =
      denoiser_forward(params, cfg, z_t, x_lat.values, t, work.tokens, cache);

  double loss = 0.0;
  Tensor<T> dpred(pred.shape());
  const double inv_n = 1.0 / static_cast<double>(pred.numel());
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    loss += d * d;
    dpred[i] = static_cast<T>(2.0 * d * inv_n);
  }
  loss *= inv_n;
  if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
  if (grads) denoiser_backward(params, cfg, cache, dpred, *grads);
  return loss;
}

// Mean loss over a batch, consuming one stream sequentially (dropout coin,
// timestep, noise per sample, in batch order).
template <typename T>
double training_loss(const ParamSet<T>& params, const DenoiserConfig& cfg,
                     const std::vector<Sample>& batch, RngStream& stream,
                     const NoiseSchedule& schedule, double caption_dropout = 0.0,
                     const Vocabulary& vocab = Vocabulary::builtin()) {
  if (batch.empty()) throw ConfigError("training_loss: empty batch");
  double total = 0.0;
  for (const Sample& s : batch)
    total += sample_loss_and_grad<T>(params, cfg, schedule, s, caption_dropout, stream,
                                     vocab, nullptr);
  return total / static_cast<double>(batch.size());
}

// --- training loop --------------------------------------------------------------

struct TrainLogRecord {
  int64_t iteration = 0;  // 1-based count of completed iterations
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  std::optional<double> val_delta1;
  std::optional<double> val_absrel;
};

inline void write_train_log(const std::vector<TrainLogRecord>& log,
                            const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write train log: " + path.string());
  f << "iteration,loss,lr,seconds,val_delta1,val_absrel\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.3f,", static_cast<long long>(r.iteration),
                  r.loss, r.lr, r.seconds);
    f << buf;
    if (r.val_delta1) {
      std::snprintf(buf, sizeof(buf), "%.17g", *r.val_delta1);
      f << buf;
    }
    f << ",";
    if (r.val_absrel) {
      std::snprintf(buf, sizeof(buf), "%.17g", *r.val_absrel);
      f << buf;
    }
    f << "\n";
  }
}

template <typename T>
struct TrainResult {
  ParamSet<T> params;
  AdamState<T> optimizer;
  std::vector<TrainLogRecord> log;
  std::filesystem::path final_checkpoint;
};

template <typename T>
using ValidationHook =
    std::function<std::pair<double, double>(int64_t iteration, const ParamSet<T>& params)>;

namespace detail {
inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int64_t done) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "checkpoint_%06lld.pdck", static_cast<long long>(done));
  return dir / buf;
}
}  // namespace detail

// Runs (or resumes) the accumulate-then-step loop. `resume_from` may name a
// checkpoint with optimizer state; seeds make the continuation identical to
// an uninterrupted run.
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, const DenoiserConfig& dcfg,
                     const SampleSource& source, const std::filesystem::path& out_dir,
                     const Vocabulary& vocab = Vocabulary::builtin(),
                     const ValidationHook<T>& validation = nullptr,
                     const std::filesystem::path& resume_from = {}) {
  cfg.validate();
  dcfg.validate();
  if (source.count == 0) throw DataError("train: empty dataset");
  std::filesystem::create_directories(out_dir);

  const NoiseSchedule schedule = cfg.schedule.make();

  TrainResult<T> result;
  int64_t start_iteration = 0;
  if (!resume_from.empty()) {
    auto ckpt = load_checkpoint<T>(resume_from);
    if (!ckpt.has_optimizer())
      throw DataError("resume checkpoint lacks optimizer state: " + resume_from.string());
    result.params = std::move(ckpt.params);
    result.optimizer.m = std::move(ckpt.adam_m);
    result.optimizer.v = std::move(ckpt.adam_v);
    result.optimizer.step = ckpt.adam_step;
    start_iteration = ckpt.iteration;
  } else {
    RngStream init_stream = RngStream::derive(cfg.seed, {rng_tag::kInit});
    result.params = init_parameters<T>(dcfg, init_stream);
    result.optimizer = AdamState<T>::init(result.params);
  }

  const int batch = cfg.batch_size();
  const int workers = cfg.worker_count();
  std::vector<ParamSet<T>> slot_grads(static_cast<size_t>(batch));
  std::vector<double> slot_loss(static_cast<size_t>(batch));
  for (auto& g : slot_grads) g = zeros_like(result.params);

  auto save = [&](int64_t done) {
    Checkpoint<T> ckpt;
    ckpt.config = dcfg;
    ckpt.schedule = cfg.schedule;
    ckpt.iteration = done;
    ckpt.params = result.params;
    ckpt.adam_m = result.optimizer.m;
    ckpt.adam_v = result.optimizer.v;
    ckpt.adam_step = result.optimizer.step;
    const auto path = detail::checkpoint_path(out_dir, done);
    save_checkpoint(ckpt, path);
    return path;
  };

  const auto wall_start = std::chrono::steady_clock::now();
  for (int64_t i = start_iteration; i < cfg.iterations; ++i) {
    parallel_for(batch, workers, [&](int64_t k) {
      RngStream stream = RngStream::derive(
          cfg.seed, {rng_tag::kTrainSample, static_cast<uint64_t>(i), static_cast<uint64_t>(k)});
      const size_t idx = static_cast<size_t>(stream.bounded(source.count));
      Sample sample = source.get(idx);
      if (cfg.flip_prob > 0.0 && stream.uniform() < cfg.flip_prob)
        sample = horizontal_flip(sample, vocab);
      for (auto& [name, g] : slot_grads[static_cast<size_t>(k)]) g.fill(T(0));
      slot_loss[static_cast<size_t>(k)] =
          sample_loss_and_grad(result.params, dcfg, schedule, sample, cfg.caption_dropout,
                               stream, vocab, &slot_grads[static_cast<size_t>(k)]);
    });

    // slot-ordered reduction keeps the result independent of scheduling
    ParamSet<T> grads = zeros_like(result.params);
    double loss = 0.0;
    const T scale = static_cast<T>(1.0 / batch);
    for (int k = 0; k < batch; ++k) {
      loss += slot_loss[static_cast<size_t>(k)];
      for (auto& [name, g] : grads) {
        const Tensor<T>& sg = slot_grads[static_cast<size_t>(k)].at(name);
        for (int64_t e = 0; e < g.numel(); ++e) g[e] += sg[e] * scale;
      }
    }
    loss /= batch;

    const double lr = lr_at(i, cfg);
    adam_step(result.params, grads, result.optimizer, lr);

    TrainLogRecord rec;
    rec.iteration = i + 1;
    rec.loss = loss;
    rec.lr = lr;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    if (validation && cfg.val_interval > 0 &&
        ((i + 1) % cfg.val_interval == 0 || i + 1 == cfg.iterations)) {
      auto [d1, ar] = validation(i + 1, result.params);
      rec.val_delta1 = d1;
      rec.val_absrel = ar;
    }
    result.log.push_back(rec);

    if ((i + 1) % cfg.checkpoint_interval == 0 || i + 1 == cfg.iterations) {
      result.final_checkpoint = save(i + 1);
      write_train_log(result.log, out_dir / "train_log.csv");
    }
  }
  if (result.final_checkpoint.empty()) {
    result.final_checkpoint = save(cfg.iterations);
    write_train_log(result.log, out_dir / "train_log.csv");
  }
  return result;
}

}  // namespace textdepth
