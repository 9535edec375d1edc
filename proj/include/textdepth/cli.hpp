// Command-line surface: gen, train, infer, eval, ablate, converge,
// schedule dump, selftest.
//
// Every command reads an optional --config <json> file; any other --flag
// maps to a dotted config key (e.g. --train.lr0 3e-4) and must name a key
// that exists in the command's default config. Hyphens in flag names are
// treated as underscores.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure,
// 1 anything else.
#pragma once

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "textdepth/pipeline.hpp"
#include "textdepth/selftest.hpp"

namespace textdepth {

namespace cli {

inline const char* kUsage = R"(usage: textdepth <command> [--config file.json] [--key value ...]

commands:
  gen            generate a synthetic dataset (ambiguity pairs + scenes)
  train          train the denoiser on a dataset directory
  infer          predict depth for one image
  eval           run inference over a dataset and score delta1 / AbsRel
  ablate         evaluate one model under every caption mode
  converge       train while logging held-out metrics per interval
  schedule dump  print the noise schedule as CSV
  selftest       run the built-in oracle suites

Flags map to dotted config keys, e.g. --train.lr0 3e-4 or --steps 50.
)";

inline nlohmann::json gen_defaults() {
  return {{"out", ""},       {"pairs", 0},           {"scenes", 100},
          {"seed", 0},       {"height", 64},         {"width", 64},
          {"camera", "orthographic"},                {"focal", 64.0},
          {"far_plane", 10.0},                       {"z_min", 1.5},
          {"z_max", 9.0},    {"min_objects", 1},     {"max_objects", 3},
          {"pair_near", 2.0},{"pair_far", 8.0}};
}

inline nlohmann::json schedule_defaults() {
  return {{"steps", kDefaultTrainSteps},
          {"kind", "scaled-linear"},
          {"beta_start", kDefaultBetaStart},
          {"beta_end", kDefaultBetaEnd}};
}

inline nlohmann::json denoiser_defaults() {
  return {{"base_width", 32},
          {"level_widths", std::vector<int>{32, 64, 128}},
          {"groups", 8},
          {"token_dim", 64},
          {"max_tokens", 16},
          {"heads", 2},
          {"time_dim", 64},
          {"parameterization", "v"}};
}

inline nlohmann::json train_defaults() {
  return {{"data", ""},
          {"out", ""},
          {"resume", ""},
          {"train",
           {{"iterations", 3000},
            {"accumulation", 8},
            {"micro_batch", 2},
            {"lr0", 3e-5},
            {"warmup_steps", 100},
            {"decay_end", 25000},
            {"decay_floor", 0.01},
            {"flip_prob", 0.5},
            {"caption_dropout", 0.1},
            {"seed", 0},
            {"checkpoint_interval", 50},
            {"val_interval", 0},
            {"workers", 0}}},
          {"schedule", schedule_defaults()},
          {"denoiser", denoiser_defaults()}};
}

inline nlohmann::json infer_defaults() {
  return {{"checkpoint", ""}, {"image", ""}, {"caption", ""}, {"out", ""},
          {"pgm", ""},        {"ppm", ""},   {"steps", 50},   {"seed", 0}};
}

inline nlohmann::json eval_defaults() {
  return {{"checkpoint", ""},    {"data", ""},         {"out", ""},
          {"report", ""},        {"caption_mode", "dataset"},
          {"template", ""},      {"templates_file", ""},
          {"steps", 50},         {"seed", 0},          {"method", "L1"},
          {"workers", 0},        {"ordering", false}};
}

inline nlohmann::json ablate_defaults() {
  return {{"checkpoint", ""}, {"data", ""},   {"out", ""},
          {"report", ""},     {"templates_file", ""},
          {"steps", 50},      {"seed", 0},    {"method", "L1"},
          {"workers", 0},     {"train_caption_dropout", 0.1}};
}

inline nlohmann::json converge_defaults() {
  nlohmann::json j = train_defaults();
  j["eval_data"] = "";
  j["curve"] = "";
  j["eval_interval"] = 250;
  j["eval_steps"] = 50;
  j["eval_seed"] = 0;
  j["caption_mode"] = "dataset";
  j["train"]["val_interval"] = 0;  // derived from eval_interval below
  return j;
}

inline nlohmann::json schedule_dump_defaults() {
  nlohmann::json j = schedule_defaults();
  j["T"] = j["steps"];
  j.erase("steps");
  j["out"] = "";
  return j;
}

// --- flag handling ------------------------------------------------------------

inline void merge_json(nlohmann::json& base, const nlohmann::json& overlay,
                       const std::string& prefix) {
  for (const auto& [key, value] : overlay.items()) {
    if (!base.contains(key))
      throw ConfigError("unknown config key: " + prefix + key);
    if (value.is_object() && base[key].is_object()) {
      merge_json(base[key], value, prefix + key + ".");
    } else {
      base[key] = value;
    }
  }
}

inline void set_dotted(nlohmann::json& config, const std::string& dotted,
                       const std::string& value) {
  nlohmann::json* node = &config;
  std::string rest = dotted;
  for (;;) {
    const size_t dot = rest.find('.');
    const std::string head = rest.substr(0, dot);
    if (!node->contains(head)) throw ConfigError("unknown flag: --" + dotted);
    if (dot == std::string::npos) {
      nlohmann::json& leaf = (*node)[head];
      try {
        if (leaf.is_string()) leaf = value;
        else if (leaf.is_boolean()) leaf = (value == "true" || value == "1");
        else if (leaf.is_number_float()) leaf = std::stod(value);
        else if (leaf.is_number_integer() || leaf.is_number_unsigned()) {
          leaf = static_cast<int64_t>(std::stoll(value));
        } else if (leaf.is_array()) {
          // comma-separated integer list (level widths)
          std::vector<int> items;
          std::string cur;
          for (char ch : value + ",") {
            if (ch == ',') {
              if (!cur.empty()) items.push_back(std::stoi(cur));
              cur.clear();
            } else {
              cur.push_back(ch);
            }
          }
          leaf = items;
        } else {
          throw ConfigError("flag --" + dotted + " cannot be set from the command line");
        }
      } catch (const std::invalid_argument&) {
        throw ConfigError("invalid value for --" + dotted + ": " + value);
      } catch (const std::out_of_range&) {
        throw ConfigError("value out of range for --" + dotted + ": " + value);
      }
      return;
    }
    node = &(*node)[head];
    rest = rest.substr(dot + 1);
  }
}

inline std::string normalize_flag(const std::string& raw) {
  std::string key = raw.substr(2);  // strip --
  for (char& ch : key)
    if (ch == '-') ch = '_';
  return key;
}

inline nlohmann::json parse_command_config(nlohmann::json defaults,
                                           const std::vector<std::string>& args) {
  nlohmann::json config = std::move(defaults);
  size_t i = 0;
  while (i < args.size()) {
    const std::string& arg = args[i];
    if (arg.rfind("--", 0) != 0)
      throw ConfigError("unexpected argument: " + arg);
    if (i + 1 >= args.size()) throw ConfigError("flag needs a value: " + arg);
    const std::string value = args[i + 1];
    if (arg == "--config") {
      std::ifstream f(value);
      if (!f) throw DataError("cannot open config file: " + value);
      nlohmann::json overlay;
      try {
        f >> overlay;
      } catch (const nlohmann::json::exception& e) {
        throw DataError("invalid config JSON: " + value + ": " + e.what());
      }
      merge_json(config, overlay, "");
    } else {
      set_dotted(config, normalize_flag(arg), value);
    }
    i += 2;
  }
  return config;
}

inline std::string require_string(const nlohmann::json& config, const std::string& key) {
  const std::string v = config.at(key).get<std::string>();
  if (v.empty()) throw ConfigError("missing required option: --" + key);
  return v;
}

// --- command implementations -----------------------------------------------------

inline GeneratorConfig generator_from_json(const nlohmann::json& j) {
  GeneratorConfig cfg;
  cfg.camera.height = j.at("height").get<int>();
  cfg.camera.width = j.at("width").get<int>();
  const std::string camera = j.at("camera").get<std::string>();
  if (camera == "orthographic") cfg.camera.mode = CameraMode::kOrthographic;
  else if (camera == "perspective") cfg.camera.mode = CameraMode::kPerspective;
  else throw ConfigError("unknown camera mode: " + camera);
  cfg.camera.focal = j.at("focal").get<double>();
  cfg.camera.far_plane = j.at("far_plane").get<double>();
  cfg.z_min = j.at("z_min").get<double>();
  cfg.z_max = j.at("z_max").get<double>();
  cfg.min_objects = j.at("min_objects").get<int>();
  cfg.max_objects = j.at("max_objects").get<int>();
  cfg.pair_near = j.at("pair_near").get<double>();
  cfg.pair_far = j.at("pair_far").get<double>();
  return cfg;
}

inline int cmd_gen(const std::vector<std::string>& args) {
  const auto config = parse_command_config(gen_defaults(), args);
  const std::string out = require_string(config, "out");
  const auto cfg = generator_from_json(config);
  const auto manifest = generate_dataset(cfg, config.at("pairs").get<int>(),
                                         config.at("scenes").get<int>(),
                                         config.at("seed").get<uint64_t>(), out);
  std::cout << "wrote " << manifest.entries.size() << " samples to " << out << "\n";
  return kExitOk;
}

inline ScheduleSpec schedule_from_json(const nlohmann::json& j) {
  ScheduleSpec s;
  s.steps = j.at("steps").get<int>();
  s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
  s.beta_start = j.at("beta_start").get<double>();
  s.beta_end = j.at("beta_end").get<double>();
  return s;
}

inline DenoiserConfig denoiser_from_json(const nlohmann::json& j, int vocab_size) {
  DenoiserConfig cfg;
  cfg.base_width = j.at("base_width").get<int>();
  cfg.level_widths = j.at("level_widths").get<std::vector<int>>();
  cfg.groups = j.at("groups").get<int>();
  cfg.token_dim = j.at("token_dim").get<int>();
  cfg.max_tokens = j.at("max_tokens").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.time_dim = j.at("time_dim").get<int>();
  cfg.parameterization =
      parameterization_from_string(j.at("parameterization").get<std::string>());
  cfg.vocab_size = vocab_size;
  return cfg;
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  const auto& t = j.at("train");
  cfg.iterations = t.at("iterations").get<int64_t>();
  cfg.accumulation = t.at("accumulation").get<int>();
  cfg.micro_batch = t.at("micro_batch").get<int>();
  cfg.lr0 = t.at("lr0").get<double>();
  cfg.warmup_steps = t.at("warmup_steps").get<int>();
  cfg.decay_end = t.at("decay_end").get<int64_t>();
  cfg.decay_floor = t.at("decay_floor").get<double>();
  cfg.flip_prob = t.at("flip_prob").get<double>();
  cfg.caption_dropout = t.at("caption_dropout").get<double>();
  cfg.seed = t.at("seed").get<uint64_t>();
  cfg.checkpoint_interval = t.at("checkpoint_interval").get<int64_t>();
  cfg.val_interval = t.at("val_interval").get<int64_t>();
  cfg.workers = t.at("workers").get<int>();
  cfg.schedule = schedule_from_json(j.at("schedule"));
  return cfg;
}

inline int cmd_train(const std::vector<std::string>& args) {
  const auto config = parse_command_config(train_defaults(), args);
  const std::string data = require_string(config, "data");
  const std::string out = require_string(config, "out");
  auto dataset = Dataset::open(data);
  const Vocabulary vocab = dataset.vocabulary();
  auto source = preloaded_source(dataset);
  const TrainConfig cfg = train_from_json(config);
  const DenoiserConfig dcfg =
      denoiser_from_json(config.at("denoiser"), static_cast<int>(vocab.size()));
  const std::string resume = config.at("resume").get<std::string>();
  auto result = train<float>(cfg, dcfg, source, out, vocab, nullptr,
                             resume.empty() ? std::filesystem::path{} : std::filesystem::path(resume));
  std::cout << "final checkpoint: " << result.final_checkpoint.string() << "\n";
  std::cout << "final loss: " << result.log.back().loss << "\n";
  return kExitOk;
}

inline int cmd_infer(const std::vector<std::string>& args) {
  const auto config = parse_command_config(infer_defaults(), args);
  auto model = Model::from_checkpoint(require_string(config, "checkpoint"));
  const auto image = read_ppm(require_string(config, "image"));
  const auto schedule = model.schedule.make();
  auto depth = infer(model, schedule, image, config.at("caption").get<std::string>(),
                     config.at("steps").get<int>(),
                     RngStream::derive(config.at("seed").get<uint64_t>(),
                                       {rng_tag::kInferSeed}));
  const std::string out = config.at("out").get<std::string>();
  if (!out.empty()) write_pdr_float(out, depth.values);
  const std::string pgm = config.at("pgm").get<std::string>();
  const std::string ppm = config.at("ppm").get<std::string>();
  if (!pgm.empty() || !ppm.empty())
    visualize(depth,
              pgm.empty() ? std::filesystem::path(out + ".pgm") : std::filesystem::path(pgm),
              ppm.empty() ? std::filesystem::path() : std::filesystem::path(ppm));
  if (out.empty() && pgm.empty() && ppm.empty())
    throw ConfigError("infer: need at least one of --out, --pgm, --ppm");
  return kExitOk;
}

inline InferenceConfig inference_from_json(const nlohmann::json& j) {
  InferenceConfig cfg;
  cfg.sampling_steps = j.at("steps").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  const std::string mode = j.at("caption_mode").get<std::string>();
  if (mode == "dataset") cfg.caption_mode = CaptionMode::kDataset;
  else if (mode == "blank") cfg.caption_mode = CaptionMode::kBlank;
  else if (mode.rfind("template:", 0) == 0) {
    cfg.caption_mode = CaptionMode::kTemplate;
    cfg.template_name = mode.substr(9);
  } else {
    throw ConfigError("unknown caption mode: " + mode);
  }
  const std::string tmpl = j.value("template", std::string{});
  if (!tmpl.empty()) {
    cfg.caption_mode = CaptionMode::kTemplate;
    cfg.template_name = tmpl;
  }
  const std::string method = j.at("method").get<std::string>();
  if (method == "L1") cfg.align = AlignMethod::kL1;
  else if (method == "L2") cfg.align = AlignMethod::kL2;
  else throw ConfigError("unknown alignment method: " + method);
  cfg.workers = j.at("workers").get<int>();
  return cfg;
}

inline int cmd_eval(const std::vector<std::string>& args) {
  const auto config = parse_command_config(eval_defaults(), args);
  auto model = Model::from_checkpoint(require_string(config, "checkpoint"));
  auto dataset = std::make_shared<Dataset>(Dataset::open(require_string(config, "data")));
  const Vocabulary vocab = dataset->vocabulary();
  auto eval = eval_set_from_dataset(dataset);
  const InferenceConfig cfg = inference_from_json(config);
  const std::string templates_file = config.at("templates_file").get<std::string>();
  const TemplateSet templates =
      templates_file.empty() ? builtin_templates() : load_templates(templates_file);

  auto report = evaluate_run(eval, model, cfg, templates, vocab);
  const std::string out = config.at("out").get<std::string>();
  if (!out.empty()) write_metrics_csv(report, out);
  const std::string report_path = config.at("report").get<std::string>();
  if (!report_path.empty()) write_report_json(report, report_path);
  std::printf("delta1 %.4f  absrel %.6f  images %lld  errors %lld\n",
              report.aggregate_delta1, report.aggregate_absrel,
              static_cast<long long>(report.scored_images),
              static_cast<long long>(report.error_count));
  if (config.at("ordering").get<bool>()) {
    auto ord = ordering_accuracy(eval, model, cfg, vocab);
    std::printf("ordering accuracy %.2f%% over %lld ambiguity samples\n", ord.accuracy_pct,
                static_cast<long long>(ord.evaluated));
  }
  return kExitOk;
}

inline int cmd_ablate(const std::vector<std::string>& args) {
  const auto config = parse_command_config(ablate_defaults(), args);
  auto model = Model::from_checkpoint(require_string(config, "checkpoint"));
  auto dataset = std::make_shared<Dataset>(Dataset::open(require_string(config, "data")));
  const Vocabulary vocab = dataset->vocabulary();
  auto eval = eval_set_from_dataset(dataset);
  nlohmann::json eval_json = config;
  eval_json["caption_mode"] = "dataset";
  eval_json["template"] = "";
  const InferenceConfig cfg = inference_from_json(eval_json);
  const std::string templates_file = config.at("templates_file").get<std::string>();
  const TemplateSet templates =
      templates_file.empty() ? builtin_templates() : load_templates(templates_file);

  auto rows = ablate(eval, model, cfg, templates, vocab);
  const std::string out = config.at("out").get<std::string>();
  if (!out.empty()) write_ablation_csv(rows, out);
  const std::string report_path = config.at("report").get<std::string>();
  if (!report_path.empty())
    write_ablation_report(rows, report_path,
                          config.at("train_caption_dropout").get<double>());
  for (const auto& row : rows)
    std::printf("%-22s delta1 %.4f  absrel %.6f\n", row.mode.c_str(),
                row.report.aggregate_delta1, row.report.aggregate_absrel);
  return kExitOk;
}

inline int cmd_converge(const std::vector<std::string>& args) {
  auto defaults = converge_defaults();
  const auto config = parse_command_config(defaults, args);
  const std::string data = require_string(config, "data");
  const std::string eval_data = require_string(config, "eval_data");
  const std::string out = require_string(config, "out");
  const std::string curve_path = require_string(config, "curve");

  auto dataset = Dataset::open(data);
  const Vocabulary vocab = dataset.vocabulary();
  auto source = preloaded_source(dataset);
  auto eval_dataset = std::make_shared<Dataset>(Dataset::open(eval_data));
  auto eval = eval_set_from_dataset(eval_dataset);

  TrainConfig cfg = train_from_json(config);
  cfg.val_interval = config.at("eval_interval").get<int64_t>();
  DenoiserConfig dcfg =
      denoiser_from_json(config.at("denoiser"), static_cast<int>(vocab.size()));

  InferenceConfig eval_cfg;
  eval_cfg.sampling_steps = config.at("eval_steps").get<int>();
  eval_cfg.seed = config.at("eval_seed").get<uint64_t>();
  const std::string mode = config.at("caption_mode").get<std::string>();
  eval_cfg.caption_mode = mode == "blank" ? CaptionMode::kBlank : CaptionMode::kDataset;

  auto [result, curve] =
      train_with_convergence<float>(cfg, dcfg, source, eval, eval_cfg, out, vocab);
  write_convergence_csv(curve, curve_path);
  std::cout << "wrote " << curve.size() << " curve points to " << curve_path << "\n";
  return kExitOk;
}

inline int cmd_schedule_dump(const std::vector<std::string>& args) {
  const auto config = parse_command_config(schedule_dump_defaults(), args);
  nlohmann::json sj = config;
  sj["steps"] = config.at("T");
  const ScheduleSpec spec{sj.at("steps").get<int>(),
                          schedule_kind_from_string(sj.at("kind").get<std::string>()),
                          sj.at("beta_start").get<double>(), sj.at("beta_end").get<double>()};
  const NoiseSchedule schedule = spec.make();
  std::string csv = "t,beta,alpha,alpha_bar\n";
  char buf[160];
  for (int t = 1; t <= schedule.steps(); ++t) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", t, schedule.beta(t),
                  schedule.alpha(t), schedule.alpha_bar(t));
    csv += buf;
  }
  const std::string out = config.at("out").get<std::string>();
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw DataError("cannot write schedule CSV: " + out);
    f << csv;
  }
  return kExitOk;
}

inline int cmd_selftest(const std::vector<std::string>& args) {
  if (!args.empty()) throw ConfigError("selftest takes no flags");
  return oracle::run_selftest(std::cout) ? kExitOk : kExitFailure;
}

}  // namespace cli

inline int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    if (args.empty()) {
      std::cerr << cli::kUsage;
      return kExitConfig;
    }
    std::string command = args[0];
    size_t skip = 1;
    if (command == "schedule") {
      if (args.size() < 2 || args[1] != "dump") throw ConfigError("unknown command: schedule");
      command = "schedule dump";
      skip = 2;
    }
    const std::vector<std::string> rest(args.begin() + static_cast<long>(skip), args.end());
    if (command == "gen") return cli::cmd_gen(rest);
    if (command == "train") return cli::cmd_train(rest);
    if (command == "infer") return cli::cmd_infer(rest);
    if (command == "eval") return cli::cmd_eval(rest);
    if (command == "ablate") return cli::cmd_ablate(rest);
    if (command == "converge") return cli::cmd_converge(rest);
    if (command == "schedule dump") return cli::cmd_schedule_dump(rest);
    if (command == "selftest") return cli::cmd_selftest(rest);
    throw ConfigError("unknown command: " + command);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n" << cli::kUsage;
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace textdepth
