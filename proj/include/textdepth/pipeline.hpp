// End-to-end inference and evaluation.
//
// Inference starts from a pure-noise latent drawn from a seed-derived
// stream, runs the DDIM subsequence with the trained noise predictor, and
// decodes the final latent into a normalized relative depth map. Evaluation
// aligns that map to metric ground truth (the affine fit absorbs the
// normalization), so denormalization statistics are never needed.
//
// Ablation fairness: the z_T draw for an image depends only on (seed, image
// id), never on the caption, so caption modes are compared on identical
// noise.
#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "textdepth/trainer.hpp"

#ifndef TEXTDEPTH_BUILD_ID
#define TEXTDEPTH_BUILD_ID "unknown"
#endif

namespace textdepth {

struct Model {
  DenoiserConfig config;
  ScheduleSpec schedule;
  ParamSet<float> params;

  static Model from_checkpoint(const std::filesystem::path& path) {
    auto ckpt = load_checkpoint<float>(path);
    return Model{ckpt.config, ckpt.schedule, std::move(ckpt.params)};
  }
};

enum class CaptionMode { kProvided, kDataset, kBlank, kTemplate };

struct InferenceConfig {
  int sampling_steps = 50;
  uint64_t seed = 0;
  CaptionMode caption_mode = CaptionMode::kDataset;
  std::string template_name;   // for CaptionMode::kTemplate
  std::string caption;         // for CaptionMode::kProvided
  AlignMethod align = AlignMethod::kL1;
  int workers = 0;

  void validate() const {
    if (sampling_steps < 1) throw ConfigError("inference: sampling steps must be >= 1");
  }
};

inline std::string to_string(CaptionMode m, const std::string& template_name = "") {
  switch (m) {
    case CaptionMode::kProvided: return "provided";
    case CaptionMode::kDataset: return "dataset";
    case CaptionMode::kBlank: return "blank";
    case CaptionMode::kTemplate: return "template:" + template_name;
  }
  return "dataset";
}

// --- caption templates -------------------------------------------------------

using TemplateSet = std::vector<std::pair<std::string, std::string>>;

inline TemplateSet builtin_templates() {
  return {
      {"an_image", "An image"},
      {"template_a", "A complex 3D scene with varying objects at different distances."},
      {"template_b",
       "A structured environment with intricate patterns and designs that create depth and "
       "guide the eye through various focal points."},
      {"template_c",
       "An elaborate scene with overlapping objects that create a sense of distance and "
       "spatial hierarchy within the environment."},
  };
}

inline TemplateSet load_templates(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open template file: " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid template JSON: " + path.string() + ": " + e.what());
  }
  TemplateSet out;
  for (const auto& [name, text] : j.items()) out.emplace_back(name, text.get<std::string>());
  std::sort(out.begin(), out.end());
  return out;
}

inline const std::string& template_text(const TemplateSet& templates, const std::string& name) {
  for (const auto& [n, text] : templates)
    if (n == name) return text;
  throw ConfigError("unknown caption template: " + name);
}

// --- inference ----------------------------------------------------------------

// eps_hat as a function of (z_t, t); lets tests drive the sampler with an
// oracle instead of the network.
using NoisePredictor = std::function<Tensor<float>(const Tensor<float>& z_t, int t)>;

// DDIM sampling loop over the step grid; returns the decoded normalized
// depth map. Throws NumericError naming the step index if the trajectory
// leaves the finite range.
inline DepthMap<float> sample_depth(const NoisePredictor& predict_eps,
                                    const std::vector<int64_t>& latent_shape,
                                    const NoiseSchedule& schedule, int sampling_steps,
                                    RngStream& stream, int image_h, int image_w) {
  Tensor<float> z(latent_shape);
  stream.fill_gaussian<float>(z.data());
  const auto grid = make_ddim_subsequence(schedule.steps(), sampling_steps);
  for (size_t k = 0; k < grid.size(); ++k) {
    const int t = grid[k];
    const int t_prev = k + 1 < grid.size() ? grid[k + 1] : 0;
    const Tensor<float> eps_hat = predict_eps(z, t);
    z = ddim_step(z, eps_hat, t, t_prev, schedule);
    if (!z.all_finite())
      throw NumericError("non-finite latent at sampling step " + std::to_string(k) +
                         " (t=" + std::to_string(t) + ")");
  }
  DepthMap<float> out;
  out.values = decode(LatentTensor<float>{std::move(z), LatentKind::kDepth}, 1);
  out.mask = Tensor<uint8_t>({image_h, image_w});
  out.mask.fill(1);
  out.space = DepthSpace::kNormalized;
  return out;
}

inline NoisePredictor model_predictor(const Model& model, const Tensor<float>& x_latent,
                                      const TokenSequence& tokens,
                                      const NoiseSchedule& schedule) {
  return [&model, x_latent, tokens, &schedule](const Tensor<float>& z_t, int t) {
    Tensor<float> pred =
        denoiser_predict(model.params, model.config, z_t, x_latent, t, tokens);
    if (model.config.parameterization == Parameterization::kV)
      return eps_from_v(pred, z_t, t, schedule);
    return pred;
  };
}

// Single-image inference: encode the image, draw z_T from the stream, run
// DDIM, decode. The caption is tokenized with the given vocabulary.
inline DepthMap<float> infer(const Model& model, const NoiseSchedule& schedule,
                             const Tensor<float>& image, const std::string& caption,
                             int sampling_steps, RngStream stream,
                             const Vocabulary& vocab = Vocabulary::builtin()) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("infer: image must be HxWx3");
  const auto x_lat = encode(image, LatentKind::kImage);
  const TokenSequence tokens = tokenize(caption, vocab, model.config.max_tokens);
  const std::vector<int64_t> latent_shape = {x_lat.values.dim(0), x_lat.values.dim(1),
                                             model.config.depth_latent_channels};
  const auto predictor = model_predictor(model, x_lat.values, tokens, schedule);
  return sample_depth(predictor, latent_shape, schedule, sampling_steps, stream,
                      static_cast<int>(image.dim(0)), static_cast<int>(image.dim(1)));
}

// --- evaluation ----------------------------------------------------------------

struct EvalItem {
  std::string id;
  Sample sample;
};

struct EvalSet {
  size_t count = 0;
  std::function<EvalItem(size_t)> get;
};

inline EvalSet eval_set_from_dataset(std::shared_ptr<Dataset> ds) {
  EvalSet s;
  s.count = ds->size();
  s.get = [ds](size_t i) {
    return EvalItem{ds->manifest().entries[i].id, ds->load(i)};
  };
  return s;
}

inline EvalSet eval_set_from_memory(std::shared_ptr<std::vector<EvalItem>> items) {
  EvalSet s;
  s.count = items->size();
  s.get = [items](size_t i) { return (*items)[i]; };
  return s;
}

struct RunRow {
  std::string id;
  std::string caption_used;
  MetricsRecord metrics;
  std::string error;  // nonempty when this image failed

  bool ok() const { return error.empty(); }
};

struct RunReport {
  std::vector<RunRow> rows;  // ordered by eval-set index
  double aggregate_delta1 = 0.0;
  double aggregate_absrel = 0.0;
  int64_t scored_images = 0;
  int64_t error_count = 0;
  nlohmann::json config_echo;
  std::string build_id = TEXTDEPTH_BUILD_ID;
  double wall_seconds = 0.0;
};

inline std::string caption_for_mode(const InferenceConfig& cfg, const Sample& sample,
                                    const TemplateSet& templates) {
  switch (cfg.caption_mode) {
    case CaptionMode::kProvided: return cfg.caption;
    case CaptionMode::kDataset: return sample.caption;
    case CaptionMode::kBlank: return "";
    case CaptionMode::kTemplate: return template_text(templates, cfg.template_name);
  }
  return sample.caption;
}

// The per-image stream depends on the image id only, never the caption.
inline RngStream per_image_stream(uint64_t seed, const std::string& id) {
  return RngStream::derive(seed, {rng_tag::kInferSeed, hash_string(id)});
}

inline RunReport evaluate_run(const EvalSet& eval, const Model& model,
                              const InferenceConfig& cfg,
                              const TemplateSet& templates = builtin_templates(),
                              const Vocabulary& vocab = Vocabulary::builtin()) {
  cfg.validate();
  if (eval.count == 0) throw DataError("evaluate_run: empty dataset");
  const NoiseSchedule schedule = model.schedule.make();
  const auto start = std::chrono::steady_clock::now();

  RunReport report;
  report.rows.resize(eval.count);
  const int workers = cfg.workers > 0 ? cfg.workers : default_worker_count();
  parallel_for(static_cast<int64_t>(eval.count), workers, [&](int64_t i) {
    EvalItem item = eval.get(static_cast<size_t>(i));
    RunRow& row = report.rows[static_cast<size_t>(i)];
    row.id = item.id;
    try {
      row.caption_used = caption_for_mode(cfg, item.sample, templates);
      auto pred = infer(model, schedule, item.sample.image, row.caption_used,
                        cfg.sampling_steps, per_image_stream(cfg.seed, item.id), vocab);
      row.metrics =
          evaluate_pair(pred.values, item.sample.depth, item.sample.mask, cfg.align);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });

  for (const RunRow& row : report.rows) {
    if (!row.ok()) {
      ++report.error_count;
      continue;
    }
    report.aggregate_delta1 += row.metrics.delta1_pct;
    report.aggregate_absrel += row.metrics.absrel;
    ++report.scored_images;
  }
  if (report.scored_images > 0) {
    report.aggregate_delta1 /= static_cast<double>(report.scored_images);
    report.aggregate_absrel /= static_cast<double>(report.scored_images);
  }
  report.config_echo = {{"sampling_steps", cfg.sampling_steps},
                        {"seed", cfg.seed},
                        {"caption_mode", to_string(cfg.caption_mode, cfg.template_name)},
                        {"align", to_string(cfg.align)}};
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline void append_metrics_rows(std::ofstream& f, const RunReport& report,
                                const std::string& mode_prefix) {
  char buf[512];
  for (const RunRow& row : report.rows) {
    if (!row.ok()) continue;
    std::snprintf(buf, sizeof(buf), "%s%s,%.17g,%.17g,%s,%.17g,%.17g,%lld\n",
                  mode_prefix.c_str(), row.id.c_str(), row.metrics.alignment.alpha,
                  row.metrics.alignment.beta, to_string(row.metrics.alignment.method).c_str(),
                  row.metrics.delta1_pct, row.metrics.absrel,
                  static_cast<long long>(row.metrics.valid_px));
    f << buf;
  }
  int64_t total_px = 0;
  for (const RunRow& row : report.rows)
    if (row.ok()) total_px += row.metrics.valid_px;
  std::snprintf(buf, sizeof(buf), "%sAGGREGATE,,,,%.17g,%.17g,%lld\n", mode_prefix.c_str(),
                report.aggregate_delta1, report.aggregate_absrel,
                static_cast<long long>(total_px));
  f << buf;
}

inline void write_metrics_csv(const RunReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write metrics CSV: " + path.string());
  f << "image_id,alpha,beta,method,delta1_pct,absrel,valid_px\n";
  append_metrics_rows(f, report, "");
}

inline void write_report_json(const RunReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["aggregate"] = {{"delta1_pct", report.aggregate_delta1},
                    {"absrel", report.aggregate_absrel},
                    {"scored_images", report.scored_images},
                    {"error_count", report.error_count}};
  j["config"] = report.config_echo;
  j["build_id"] = report.build_id;
  j["wall_seconds"] = report.wall_seconds;
  nlohmann::json rows = nlohmann::json::array();
  for (const RunRow& row : report.rows) {
    nlohmann::json r = {{"id", row.id}, {"caption", row.caption_used}};
    if (row.ok()) {
      r["delta1_pct"] = row.metrics.delta1_pct;
      r["absrel"] = row.metrics.absrel;
      r["alpha"] = row.metrics.alignment.alpha;
      r["beta"] = row.metrics.alignment.beta;
      r["valid_px"] = row.metrics.valid_px;
    } else {
      r["error"] = row.error;
    }
    rows.push_back(std::move(r));
  }
  j["rows"] = std::move(rows);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write report: " + path.string());
  f << j.dump(2) << "\n";
}

// --- depth-ordering accuracy (ambiguity pairs) ----------------------------------

struct OrderingResult {
  double accuracy_pct = 0.0;
  int64_t evaluated = 0;
  int64_t correct = 0;
};

// Object regions come from the ground truth (pixels nearer than the far
// plane), split at the vertical midline. The caption names the near side;
// the prediction is correct when its mean normalized depth on that side is
// the smaller one. Training fixes the polarity of normalized depth, so raw
// predicted values are compared directly.
inline OrderingResult ordering_accuracy(const EvalSet& eval, const Model& model,
                                        const InferenceConfig& cfg,
                                        const Vocabulary& vocab = Vocabulary::builtin()) {
  const NoiseSchedule schedule = model.schedule.make();
  OrderingResult result;
  const int workers = cfg.workers > 0 ? cfg.workers : default_worker_count();
  std::vector<int> verdict(eval.count, -1);  // -1 skip, 0 wrong, 1 right
  parallel_for(static_cast<int64_t>(eval.count), workers, [&](int64_t i) {
    EvalItem item = eval.get(static_cast<size_t>(i));
    if (item.sample.tag == AmbiguityTag::kNone) return;
    const std::string caption =
        cfg.caption_mode == CaptionMode::kBlank ? "" : item.sample.caption;
    auto pred = infer(model, schedule, item.sample.image, caption, cfg.sampling_steps,
                      per_image_stream(cfg.seed, item.id), vocab);
    const int64_t h = item.sample.depth.dim(0), w = item.sample.depth.dim(1);
    float far = 0.0f;
    for (int64_t k = 0; k < item.sample.depth.numel(); ++k)
      far = std::max(far, item.sample.depth[k]);
    double sum_l = 0.0, sum_r = 0.0;
    int64_t n_l = 0, n_r = 0;
    for (int64_t r = 0; r < h; ++r)
      for (int64_t c = 0; c < w; ++c) {
        if (item.sample.depth.at(r, c) >= far) continue;
        if (c < w / 2) {
          sum_l += pred.values.at(r, c);
          ++n_l;
        } else {
          sum_r += pred.values.at(r, c);
          ++n_r;
        }
      }
    if (n_l == 0 || n_r == 0) return;
    const double mean_l = sum_l / n_l, mean_r = sum_r / n_r;
    const bool left_near_predicted = mean_l < mean_r;
    const bool left_near_true = item.sample.tag == AmbiguityTag::kLeftNear;
    verdict[static_cast<size_t>(i)] = left_near_predicted == left_near_true ? 1 : 0;
  });
  for (int v : verdict) {
    if (v < 0) continue;
    ++result.evaluated;
    result.correct += v;
  }
  if (result.evaluated > 0)
    result.accuracy_pct = 100.0 * static_cast<double>(result.correct) /
                          static_cast<double>(result.evaluated);
  return result;
}

// --- ablation -------------------------------------------------------------------

struct AblationRow {
  std::string mode;
  std::string template_string;  // exact text for template modes
  RunReport report;
};

// One evaluate_run per caption mode: dataset, blank, then each template.
// All runs share seeds, so per-image noise draws are paired across modes.
inline std::vector<AblationRow> ablate(const EvalSet& eval, const Model& model,
                                       const InferenceConfig& base,
                                       const TemplateSet& templates = builtin_templates(),
                                       const Vocabulary& vocab = Vocabulary::builtin()) {
  std::vector<AblationRow> rows;
  auto run_mode = [&](CaptionMode mode, const std::string& tname, const std::string& ttext) {
    InferenceConfig cfg = base;
    cfg.caption_mode = mode;
    cfg.template_name = tname;
    AblationRow row;
    row.mode = to_string(mode, tname);
    row.template_string = ttext;
    row.report = evaluate_run(eval, model, cfg, templates, vocab);
    rows.push_back(std::move(row));
  };
  run_mode(CaptionMode::kDataset, "", "");
  run_mode(CaptionMode::kBlank, "", "");
  for (const auto& [name, text] : templates) run_mode(CaptionMode::kTemplate, name, text);
  return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows,
                               const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write ablation CSV: " + path.string());
  f << "mode,image_id,alpha,beta,method,delta1_pct,absrel,valid_px\n";
  for (const auto& row : rows) append_metrics_rows(f, row.report, row.mode + ",");
}

inline void write_ablation_report(const std::vector<AblationRow>& rows,
                                  const std::filesystem::path& path,
                                  double train_caption_dropout) {
  nlohmann::json j;
  // results are comparable across modes only relative to the dropout used
  // in training, so the report always states it
  j["train_caption_dropout"] = train_caption_dropout;
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    out.push_back({{"mode", row.mode},
                   {"template_string", row.template_string},
                   {"delta1_pct", row.report.aggregate_delta1},
                   {"absrel", row.report.aggregate_absrel},
                   {"scored_images", row.report.scored_images},
                   {"error_count", row.report.error_count}});
  }
  j["rows"] = std::move(out);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write ablation report: " + path.string());
  f << j.dump(2) << "\n";
}

// --- convergence logging ----------------------------------------------------------

struct ConvergencePoint {
  int64_t iteration = 0;
  double delta1 = 0.0;
  double absrel = 0.0;
};

inline void write_convergence_csv(const std::vector<ConvergencePoint>& curve,
                                  const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write convergence CSV: " + path.string());
  f << "iteration,delta1,absrel\n";
  char buf[128];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g\n", static_cast<long long>(p.iteration),
                  p.delta1, p.absrel);
    f << buf;
  }
}

// Trains with a periodic evaluation hook on the held-out split and returns
// the metric curve alongside the training result.
template <typename T>
std::pair<TrainResult<T>, std::vector<ConvergencePoint>> train_with_convergence(
    const TrainConfig& train_cfg, const DenoiserConfig& dcfg, const SampleSource& source,
    const EvalSet& eval, const InferenceConfig& eval_cfg,
    const std::filesystem::path& out_dir, const Vocabulary& vocab = Vocabulary::builtin()) {
  std::vector<ConvergencePoint> curve;
  ValidationHook<T> hook = [&](int64_t iteration, const ParamSet<T>& params) {
    Model model;
    model.config = dcfg;
    model.schedule = train_cfg.schedule;
    if constexpr (std::is_same_v<T, float>) {
      model.params = params;
    } else {
      for (const auto& [name, t] : params)
        model.params.emplace(name, t.template cast<float>());
    }
    auto report = evaluate_run(eval, model, eval_cfg, builtin_templates(), vocab);
    curve.push_back({iteration, report.aggregate_delta1, report.aggregate_absrel});
    return std::make_pair(report.aggregate_delta1, report.aggregate_absrel);
  };
  auto result = train<T>(train_cfg, dcfg, source, out_dir, vocab, hook);
  return {std::move(result), std::move(curve)};
}

// --- visualization -----------------------------------------------------------------

// Magma-like 256-entry colormap: piecewise-linear ramp through fixed
// anchors, shipped alongside as a data file.
inline const std::array<std::array<uint8_t, 3>, 256>& magma_lut() {
  static const auto lut = [] {
    std::array<std::array<uint8_t, 3>, 256> table{};
    constexpr double anchors[5][3] = {{0, 0, 4},
                                      {81, 18, 124},
                                      {182, 54, 121},
                                      {251, 136, 97},
                                      {252, 253, 191}};
    for (int i = 0; i < 256; ++i) {
      const double pos = i / 255.0 * 4.0;
      const int seg = std::min(3, static_cast<int>(pos));
      const double frac = pos - seg;
      for (int c = 0; c < 3; ++c) {
        const double v = anchors[seg][c] * (1.0 - frac) + anchors[seg + 1][c] * frac;
        table[static_cast<size_t>(i)][static_cast<size_t>(c)] =
            static_cast<uint8_t>(std::lround(v));
      }
    }
    return table;
  }();
  return lut;
}

inline void write_magma_lut_csv(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write LUT: " + path.string());
  f << "r,g,b\n";
  for (const auto& rgb : magma_lut())
    f << static_cast<int>(rgb[0]) << "," << static_cast<int>(rgb[1]) << ","
      << static_cast<int>(rgb[2]) << "\n";
}

inline std::array<std::array<uint8_t, 3>, 256> load_magma_lut(
    const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open LUT: " + path.string());
  std::string line;
  std::getline(f, line);
  if (line != "r,g,b") throw DataError("bad LUT header in " + path.string());
  std::array<std::array<uint8_t, 3>, 256> table{};
  for (int i = 0; i < 256; ++i) {
    int r, g, b;
    char comma;
    if (!(f >> r >> comma >> g >> comma >> b))
      throw DataError("truncated LUT: " + path.string());
    table[static_cast<size_t>(i)] = {static_cast<uint8_t>(r), static_cast<uint8_t>(g),
                                     static_cast<uint8_t>(b)};
  }
  return table;
}

// Min-max normalization of the masked values onto [0,255]; a constant map
// renders uniform 128. Grayscale PGM always; color PPM when a path is given.
template <typename T>
void visualize(const DepthMap<T>& depth, const std::filesystem::path& pgm_path,
               const std::filesystem::path& ppm_path = {},
               const std::array<std::array<uint8_t, 3>, 256>* lut = nullptr) {
  const int64_t h = depth.values.dim(0), w = depth.values.dim(1);
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (int64_t i = 0; i < depth.values.numel(); ++i) {
    if (!depth.mask[i]) continue;
    const double v = static_cast<double>(depth.values[i]);
    if (!any) {
      lo = hi = v;
      any = true;
    } else {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!any) throw DataError("visualize: empty mask");

  Tensor<uint8_t> gray({h, w});
  for (int64_t i = 0; i < depth.values.numel(); ++i) {
    if (!depth.mask[i]) {
      gray[i] = 0;
      continue;
    }
    if (hi == lo) {
      gray[i] = 128;
      continue;
    }
    const double v = (static_cast<double>(depth.values[i]) - lo) / (hi - lo);
    gray[i] = static_cast<uint8_t>(std::lround(255.0 * v));
  }
  write_pgm(pgm_path, gray);

  if (!ppm_path.empty()) {
    const auto& table = lut ? *lut : magma_lut();
    Tensor<uint8_t> rgb({h, w, 3});
    for (int64_t i = 0; i < h * w; ++i) {
      const auto& c = table[gray[i]];
      rgb[i * 3 + 0] = c[0];
      rgb[i * 3 + 1] = c[1];
      rgb[i * 3 + 2] = c[2];
    }
    write_ppm_u8(ppm_path, rgb);
  }
}

}  // namespace textdepth
