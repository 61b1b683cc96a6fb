// cseg: data generation, training, interactive curves, ablation and the
// annotation server, all driven by one JSON config.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "httplib.h"

#include "cseg/harness.hpp"
#include "cseg/http_server.hpp"

namespace fs = std::filesystem;
using namespace cseg;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string output_dir;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON experiment config (defaults apply when omitted)");
    app->add_option("--seed", seed, "override the config seed");
    app->add_option("--threads", threads, "evaluation worker threads (0 = all cores)");
    app->add_option("-o,--output-dir", output_dir, "override the config output_dir");
  }

  ExperimentConfig load() const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    if (!output_dir.empty()) c.output_dir = output_dir;
    c.validate();
    return c;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, text);
  std::cerr << "wrote " << path.string() << "\n";
}

std::string loss_log_csv(const TrainLog& log) {
  std::string s = "step,loss\n";
  for (std::size_t i = 0; i < log.losses.size(); ++i) s += std::to_string(i + 1) + "," + format_fixed(log.losses[i]) + "\n";
  return s;
}

CheckpointSink periodic_sink(const ExperimentConfig& c, int stage) {
  return [c, stage](int step, const ModelParams<float>& p) {
    auto path = checkpoint_path(c, stage);
    path.replace_extension(".step" + std::to_string(step) + ".ckpt");
    save_params(p, path.string());
  };
}

int cmd_gen_data(const ExperimentConfig& c) {
  const auto splits = generate_splits(c);
  const fs::path root = fs::path(c.output_dir) / "data";
  for (const auto& [name, scenes] : {std::pair{"train", &splits.train}, {"interactive", &splits.interactive},
                                     {"eval", &splits.eval}}) {
    for (const auto& s : *scenes) save_scene(s, root / name / scene_dir_name(s.index));
    std::cerr << name << ": " << scenes->size() << " scenes under " << (root / name).string() << "\n";
  }
  return 0;
}

int cmd_train(ExperimentConfig c, int stage, const std::string& init_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto splits = generate_splits(c);
  fs::create_directories(c.output_dir);
  TrainLog log;
  ModelParams<float> params;
  if (stage == 1) {
    params = train_stage1(splits.train, c, &log, periodic_sink(c, 1));
  } else {
    const auto stage1_path = init_path.empty() ? checkpoint_path(c, 1).string() : init_path;
    const auto stage1 = load_params(stage1_path);
    if (stage1.config != c.model) throw ConfigError(stage1_path + ": model config differs from the experiment config");
    const auto data = generate_interactive_training_set(splits.interactive, stage1, c);
    int with_errors = 0, rounds = 0;
    for (const auto& d : data) {
      with_errors += d.stage1_had_errors;
      rounds += d.simulated_rounds;
    }
    std::cerr << "interactive set: " << data.size() << " scenes, " << with_errors << " with stage-1 errors, " << rounds
              << " simulated rounds\n";
    params = train_stage2(data, stage1, c, &log, periodic_sink(c, 2));
  }
  const auto path = checkpoint_path(c, stage);
  save_params(params, path.string());
  std::cerr << "wrote " << path.string() << "\n";
  auto log_path = path;
  write_text(log_path.replace_extension(".loss.csv"), loss_log_csv(log));
  const double eval = evaluate_extreme_points(splits.eval, params, c, c.sharing);
  std::cout << "stage " << stage << " " << to_string(c.loss) << "/" << to_string(c.sharing)
            << " eval extreme-point mIoU " << format_fixed(eval) << " (" << format_fixed(seconds_since(t0), 1)
            << " s)\n";
  return 0;
}

void render_traces(const ExperimentConfig& c, std::span<const SyntheticScene> scenes,
                   std::span<const SceneTrace> traces, const fs::path& dir, int limit) {
  const std::size_t n = std::min(scenes.size(), std::size_t(limit));
  for (std::size_t i = 0; i < n; ++i) {
    const auto scene_dir = dir / scene_dir_name(scenes[i].index);
    fs::create_directories(scene_dir);
    write_file(scene_dir / "ground_truth.png", encode_png_rgb8(render_overlay(scenes[i].image, scenes[i].labels)));
    for (std::size_t r = 0; r < traces[i].segmentations.size(); ++r)
      write_file(scene_dir / ("round_" + std::to_string(r) + ".png"),
                 encode_png_rgb8(render_overlay(scenes[i].image, traces[i].segmentations[r])));
  }
  std::cerr << "rendered " << n << " scenes under " << dir.string() << " (" << to_string(c.strategy) << ")\n";
}

int cmd_curve(ExperimentConfig c, const std::string& checkpoint, const std::string& render_dir, int render_limit) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto path = checkpoint.empty() ? checkpoint_path(c, 2).string() : checkpoint;
  const auto params = load_params(path);
  if (params.config != c.model) throw ConfigError(path + ": model config differs from the experiment config");
  const auto eval = generate_synthetic_dataset(c.data.eval_scenes, c.data.size, c.seed, kEvalFirstIndex);
  std::vector<SceneTrace> traces;
  const auto curve = run_experiment(eval, params, c, c.strategy, render_dir.empty() ? nullptr : &traces);
  const auto csv = curve_csv(curve);
  std::cout << csv;
  write_text(fs::path(c.output_dir) / ("curve_" + to_string(c.strategy) + ".csv"), csv);
  if (!render_dir.empty()) render_traces(c, eval, traces, render_dir, render_limit);
  std::cerr << "curve took " << format_fixed(seconds_since(t0), 1) << " s\n";
  return 0;
}

int cmd_ablation(const ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto splits = generate_splits(c);
  fs::create_directories(c.output_dir);
  const auto cells = run_ablation(splits, c, [&](const AblationCell& cell, const ModelParams<float>& params) {
    auto cc = c;
    cc.loss = cell.loss;
    cc.sharing = cell.sharing;
    save_params(params, checkpoint_path(cc, 1).string());
    std::cerr << to_string(cell.loss) << "/" << to_string(cell.sharing) << " " << format_fixed(cell.mean_iou) << " ("
              << format_fixed(seconds_since(t0), 1) << " s)\n";
  });
  const auto csv = ablation_csv(cells);
  std::cout << csv;
  write_text(fs::path(c.output_dir) / "ablation.csv", csv);
  return 0;
}

int cmd_serve(const ExperimentConfig& c, const std::string& host, int port, const std::string& checkpoint,
              const std::string& scene_root) {
  const auto path = checkpoint.empty() ? checkpoint_path(c, 2).string() : checkpoint;
  ServiceConfig sc;
  sc.sharing = c.sharing;
  sc.scene_root = scene_root;
  AnnotationService service(load_params(path), sc);
  httplib::Server server;
  bind_routes(server, service);
  std::cerr << "serving " << path << " on http://" << host << ":" << port << "\n";
  if (!server.listen(host, port)) {
    std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive full-image segmentation: data, training, experiments and annotation server"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, curve_opts, ablation_opts, serve_opts;

  auto* gen = app.add_subcommand("gen-data", "write the train/interactive/eval scenes as PNG + JSON");
  gen_opts.attach(gen);

  auto* train = app.add_subcommand("train", "train a stage-1 (extreme points) or stage-2 (scribbles) model");
  train_opts.attach(train);
  int stage = 1;
  std::string loss, sharing, init_path;
  train->add_option("--stage", stage, "1 or 2")->check(CLI::IsMember({1, 2}));
  train->add_option("--loss", loss, "override the config loss")->check(CLI::IsMember({"pixelwise", "maskwise"}));
  train->add_option("--sharing", sharing, "override the config sharing")->check(CLI::IsMember({"shared", "unshared"}));
  train->add_option("--init", init_path, "stage-1 checkpoint for stage 2 (default: output_dir naming)");

  auto* curve = app.add_subcommand("curve", "run simulated annotation rounds on the eval split and write the IoU curve");
  curve_opts.attach(curve);
  std::string strategy, curve_ckpt, render_dir, curve_loss, curve_sharing;
  std::optional<int> rounds;
  int render_limit = 8;
  curve->add_option("--strategy", strategy, "override the config strategy")->check(CLI::IsMember({"fixed", "free"}));
  curve->add_option("--rounds", rounds, "override the config round count")->check(CLI::NonNegativeNumber);
  curve->add_option("--loss", curve_loss, "selects the checkpoint")->check(CLI::IsMember({"pixelwise", "maskwise"}));
  curve->add_option("--sharing", curve_sharing, "override the config sharing")
      ->check(CLI::IsMember({"shared", "unshared"}));
  curve->add_option("--checkpoint", curve_ckpt, "stage-2 checkpoint (default: output_dir naming)");
  curve->add_option("--render", render_dir, "write overlay PNGs per scene and round to this directory");
  curve->add_option("--render-limit", render_limit, "number of scenes to render")->check(CLI::NonNegativeNumber);

  auto* ablation = app.add_subcommand("ablation", "train and score the loss x sharing grid");
  ablation_opts.attach(ablation);

  auto* serve = app.add_subcommand("serve", "run the HTTP annotation service");
  serve_opts.attach(serve);
  std::string host = "127.0.0.1", serve_ckpt, scene_root;
  int port = 8080;
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "TCP port")->check(CLI::Range(1, 65535));
  serve->add_option("--checkpoint", serve_ckpt, "model checkpoint (default: stage-2 output_dir naming)");
  serve->add_option("--scenes", scene_root, "directory whose scene_* folders can be opened by id");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(gen_opts.load());
    if (*train) {
      auto c = train_opts.load();
      if (!loss.empty()) c.loss = parse_loss(loss);
      if (!sharing.empty()) c.sharing = parse_sharing(sharing);
      return cmd_train(c, stage, init_path);
    }
    if (*curve) {
      auto c = curve_opts.load();
      if (!strategy.empty()) c.strategy = parse_strategy(strategy);
      if (rounds) c.rounds = *rounds;
      if (!curve_loss.empty()) c.loss = parse_loss(curve_loss);
      if (!curve_sharing.empty()) c.sharing = parse_sharing(curve_sharing);
      return cmd_curve(c, curve_ckpt, render_dir, render_limit);
    }
    if (*ablation) return cmd_ablation(ablation_opts.load());
    if (*serve) return cmd_serve(serve_opts.load(), host, port, serve_ckpt, scene_root);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
