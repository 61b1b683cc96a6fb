#pragma once

// Experiment pipeline: configuration, two-stage training, interactive curves,
// the loss x sharing ablation grid, and artifact export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <exception>
#include <array>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cseg/annotator.hpp"
#include "cseg/checkpoint.hpp"
#include "cseg/model.hpp"
#include "cseg/png.hpp"
#include "cseg/synthetic.hpp"

namespace cseg {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step(step) {}
  int step;
};

inline std::string to_string(LossMode m) { return m == LossMode::pixelwise ? "pixelwise" : "maskwise"; }
inline std::string to_string(Sharing s) { return s == Sharing::shared ? "shared" : "unshared"; }
inline std::string to_string(AllocationStrategy::Mode m) {
  return m == AllocationStrategy::Mode::free_budget ? "free" : "fixed";
}

inline LossMode parse_loss(const std::string& s) {
  if (s == "pixelwise") return LossMode::pixelwise;
  if (s == "maskwise") return LossMode::maskwise;
  throw ConfigError("unknown loss '" + s + "' (pixelwise|maskwise)");
}
inline Sharing parse_sharing(const std::string& s) {
  if (s == "shared") return Sharing::shared;
  if (s == "unshared") return Sharing::unshared;
  throw ConfigError("unknown sharing '" + s + "' (shared|unshared)");
}
inline AllocationStrategy::Mode parse_strategy(const std::string& s) {
  if (s == "fixed") return AllocationStrategy::Mode::fixed_one_per_region;
  if (s == "free") return AllocationStrategy::Mode::free_budget;
  throw ConfigError("unknown strategy '" + s + "' (fixed|free)");
}

// Scene index ranges of the three disjoint splits.
inline constexpr std::uint64_t kTrainFirstIndex = 0;
inline constexpr std::uint64_t kInteractiveFirstIndex = 1'000'000;
inline constexpr std::uint64_t kEvalFirstIndex = 2'000'000;

struct DataConfig {
  int size = 64;
  int train_scenes = 200;
  int interactive_scenes = 200;
  int eval_scenes = 50;
  int jitter = 0;  // extreme-point jitter in pixels
  double box_margin = 0.0;
};

struct TrainConfig {
  int steps = 2000;
  int batch_size = 4;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double clip_norm = 0.0;
  std::vector<double> lr_milestones{};  // fractions of `steps`
  double lr_gamma = 0.1;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints

  double learning_rate_at(int step) const {
    double lr = learning_rate;
    for (double m : lr_milestones)
      if (step >= int(std::lround(m * steps))) lr *= lr_gamma;
    return lr;
  }
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DataConfig data;
  ModelConfig model;
  TrainConfig stage1{3000, 4, 0.03, 0.9, 10.0, {0.7, 0.9}, 0.1, 0};
  TrainConfig stage2{2000, 4, 0.01, 0.9, 10.0, {0.7, 0.9}, 0.1, 0};
  LossMode loss = LossMode::pixelwise;
  Sharing sharing = Sharing::shared;
  AllocationStrategy::Mode strategy = AllocationStrategy::Mode::free_budget;
  int rounds = 4;
  int training_rounds = 3;  // max simulated rounds per stage-2 training scene
  int threads = 0;          // evaluation workers; 0 = hardware concurrency
  std::string output_dir = "runs";

  void validate() const;
};

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class V>
void read(const Json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline TrainConfig train_from_json(const Json& j, TrainConfig t, const std::string& where) {
  reject_unknown(j, {"steps", "batch_size", "learning_rate", "momentum", "clip_norm", "lr_milestones", "lr_gamma",
                     "checkpoint_every"},
                 where);
  read(j, "steps", t.steps, where);
  read(j, "batch_size", t.batch_size, where);
  read(j, "learning_rate", t.learning_rate, where);
  read(j, "momentum", t.momentum, where);
  read(j, "clip_norm", t.clip_norm, where);
  read(j, "lr_milestones", t.lr_milestones, where);
  read(j, "lr_gamma", t.lr_gamma, where);
  read(j, "checkpoint_every", t.checkpoint_every, where);
  return t;
}

inline Json train_to_json(const TrainConfig& t) {
  return Json{{"steps", t.steps},
              {"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"momentum", t.momentum},
              {"clip_norm", t.clip_norm},
              {"lr_milestones", t.lr_milestones},
              {"lr_gamma", t.lr_gamma},
              {"checkpoint_every", t.checkpoint_every}};
}

inline void validate_train(const TrainConfig& t, const std::string& where) {
  if (t.steps < 0) throw ConfigError(where + ".steps must be >= 0");
  if (t.batch_size < 1) throw ConfigError(where + ".batch_size must be >= 1");
  if (!(t.learning_rate >= 0)) throw ConfigError(where + ".learning_rate must be >= 0");
  if (!(t.momentum >= 0 && t.momentum < 1)) throw ConfigError(where + ".momentum must be in [0, 1)");
  if (!(t.clip_norm >= 0)) throw ConfigError(where + ".clip_norm must be >= 0");
  for (double m : t.lr_milestones)
    if (!(m >= 0 && m <= 1)) throw ConfigError(where + ".lr_milestones must be fractions in [0, 1]");
  if (!std::is_sorted(t.lr_milestones.begin(), t.lr_milestones.end()))
    throw ConfigError(where + ".lr_milestones must be non-decreasing");
  if (!(t.lr_gamma > 0)) throw ConfigError(where + ".lr_gamma must be > 0");
  if (t.checkpoint_every < 0) throw ConfigError(where + ".checkpoint_every must be >= 0");
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  if (data.size != 32 && data.size != 64 && data.size != 128) throw ConfigError("data.size must be 32, 64 or 128");
  if (data.train_scenes < 1 || data.interactive_scenes < 1 || data.eval_scenes < 1)
    throw ConfigError("data: scene counts must be >= 1");
  if (data.jitter < 0) throw ConfigError("data.jitter must be >= 0");
  if (!(data.box_margin >= 0)) throw ConfigError("data.box_margin must be >= 0");
  if (data.size % model.reduction != 0) throw ConfigError("data.size must be divisible by model.reduction");
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  detail::validate_train(stage1, "stage1");
  detail::validate_train(stage2, "stage2");
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (training_rounds < 1) throw ConfigError("training_rounds must be >= 1");
  if (threads < 0) throw ConfigError("threads must be >= 0");
}

inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  detail::reject_unknown(j,
                         {"seed", "data", "model", "stage1", "stage2", "loss", "sharing", "strategy", "rounds",
                          "training_rounds", "threads", "output_dir"},
                         "config");
  detail::read(j, "seed", c.seed, "config");
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown(d, {"size", "train_scenes", "interactive_scenes", "eval_scenes", "jitter", "box_margin"},
                           "data");
    detail::read(d, "size", c.data.size, "data");
    detail::read(d, "train_scenes", c.data.train_scenes, "data");
    detail::read(d, "interactive_scenes", c.data.interactive_scenes, "data");
    detail::read(d, "eval_scenes", c.data.eval_scenes, "data");
    detail::read(d, "jitter", c.data.jitter, "data");
    detail::read(d, "box_margin", c.data.box_margin, "data");
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown(m,
                           {"channels", "reduction", "backbone_layers", "head_layers", "kernel_size", "roi_h", "roi_w",
                            "mask_h", "mask_w"},
                           "model");
    detail::read(m, "channels", c.model.channels, "model");
    detail::read(m, "reduction", c.model.reduction, "model");
    detail::read(m, "backbone_layers", c.model.backbone_layers, "model");
    detail::read(m, "head_layers", c.model.head_layers, "model");
    detail::read(m, "kernel_size", c.model.kernel_size, "model");
    detail::read(m, "roi_h", c.model.roi_h, "model");
    detail::read(m, "roi_w", c.model.roi_w, "model");
    detail::read(m, "mask_h", c.model.mask_h, "model");
    detail::read(m, "mask_w", c.model.mask_w, "model");
  }
  if (j.contains("stage1")) c.stage1 = detail::train_from_json(j.at("stage1"), c.stage1, "stage1");
  if (j.contains("stage2")) c.stage2 = detail::train_from_json(j.at("stage2"), c.stage2, "stage2");
  std::string loss = to_string(c.loss), sharing = to_string(c.sharing), strategy = to_string(c.strategy);
  detail::read(j, "loss", loss, "config");
  detail::read(j, "sharing", sharing, "config");
  detail::read(j, "strategy", strategy, "config");
  c.loss = parse_loss(loss);
  c.sharing = parse_sharing(sharing);
  c.strategy = parse_strategy(strategy);
  detail::read(j, "rounds", c.rounds, "config");
  detail::read(j, "training_rounds", c.training_rounds, "config");
  detail::read(j, "threads", c.threads, "config");
  detail::read(j, "output_dir", c.output_dir, "config");
  c.validate();
  return c;
}

inline Json config_to_json(const ExperimentConfig& c) {
  return Json{{"seed", c.seed},
              {"data",
               {{"size", c.data.size},
                {"train_scenes", c.data.train_scenes},
                {"interactive_scenes", c.data.interactive_scenes},
                {"eval_scenes", c.data.eval_scenes},
                {"jitter", c.data.jitter},
                {"box_margin", c.data.box_margin}}},
              {"model",
               {{"channels", c.model.channels},
                {"reduction", c.model.reduction},
                {"backbone_layers", c.model.backbone_layers},
                {"head_layers", c.model.head_layers},
                {"kernel_size", c.model.kernel_size},
                {"roi_h", c.model.roi_h},
                {"roi_w", c.model.roi_w},
                {"mask_h", c.model.mask_h},
                {"mask_w", c.model.mask_w}}},
              {"stage1", detail::train_to_json(c.stage1)},
              {"stage2", detail::train_to_json(c.stage2)},
              {"loss", to_string(c.loss)},
              {"sharing", to_string(c.sharing)},
              {"strategy", to_string(c.strategy)},
              {"rounds", c.rounds},
              {"training_rounds", c.training_rounds},
              {"threads", c.threads},
              {"output_dir", c.output_dir}};
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  Bytes bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  Json j;
  try {
    j = Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// Seeds of independent random streams derived from the experiment seed.
enum class Stream : std::uint64_t { init = 1, batches, annotate, interactive_data, evaluation };

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s, std::uint64_t salt = 0) {
  return splitmix64(splitmix64(seed ^ (std::uint64_t(s) << 56)) ^ salt);
}

struct Splits {
  std::vector<SyntheticScene> train, interactive, eval;
};

inline Splits generate_splits(const ExperimentConfig& c) {
  Splits s;
  s.train = generate_synthetic_dataset(c.data.train_scenes, c.data.size, c.seed, kTrainFirstIndex);
  s.interactive = generate_synthetic_dataset(c.data.interactive_scenes, c.data.size, c.seed, kInteractiveFirstIndex);
  s.eval = generate_synthetic_dataset(c.data.eval_scenes, c.data.size, c.seed, kEvalFirstIndex);
  return s;
}

// Extreme points of every region, simulated per scene from its own stream.
inline AnnotationState scene_annotations(const SyntheticScene& s, const ExperimentConfig& c) {
  Rng rng(stream_seed(c.seed, Stream::annotate, s.index));
  auto st = initial_annotations(s.labels, c.data.jitter, rng);
  st.box_margin = c.data.box_margin;
  return st;
}

inline std::vector<TrainingExample> extreme_point_examples(std::span<const SyntheticScene> scenes,
                                                           const ExperimentConfig& c) {
  std::vector<TrainingExample> out;
  for (const auto& s : scenes) out.push_back({s.image, s.labels, scene_annotations(s, c)});
  return out;
}

struct TrainLog {
  std::vector<double> losses;  // per step
  std::size_t clamped_pixels = 0;
};

using CheckpointSink = std::function<void(int step, const ModelParams<float>&)>;

// SGD over `data` in shuffled epochs. Deterministic for a fixed seed.
inline ModelParams<float> train_model(std::span<const TrainingExample> data, ModelParams<float> params,
                                      const TrainConfig& tc, LossMode loss, Sharing sharing, std::uint64_t seed,
                                      TrainLog* log = nullptr, const CheckpointSink& sink = {}) {
  if (data.empty()) throw std::invalid_argument("train_model: empty dataset");
  SgdMomentum<float> opt;
  opt.momentum = tc.momentum;
  opt.clip_norm = tc.clip_norm;
  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  std::vector<TrainingExample> batch;
  for (int step = 0; step < tc.steps; ++step) {
    batch.clear();
    while (int(batch.size()) < tc.batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t(0));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }
    opt.learning_rate = tc.learning_rate_at(step);
    StepResult r;
    try {
      r = train_step<float>(batch, params, opt, loss, sharing);
    } catch (const NonFiniteLoss& e) {
      throw TrainingDiverged(step, e.what());
    } catch (const std::domain_error& e) {
      throw TrainingDiverged(step, e.what());
    }
    if (log) {
      log->losses.push_back(r.loss);
      log->clamped_pixels += r.clamped_pixels;
    }
    if (sink && tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0) sink(step + 1, params);
  }
  return params;
}

inline Prediction<float> predict_scene(const Tensor<float>& image, const AnnotationState& st,
                                       const ModelParams<float>& params, Sharing sharing) {
  return predict_segmentation(image, st, params, sharing);
}

inline ModelParams<float> train_stage1(std::span<const SyntheticScene> scenes, const ExperimentConfig& c,
                                       TrainLog* log = nullptr, const CheckpointSink& sink = {}) {
  if (scenes.empty()) throw std::invalid_argument("train_stage1: empty dataset");
  const auto examples = extreme_point_examples(scenes, c);
  auto init = ModelParams<float>::init(c.model, stream_seed(c.seed, Stream::init));
  return train_model(examples, std::move(init), c.stage1, c.loss, c.sharing, stream_seed(c.seed, Stream::batches, 1),
                     log, sink);
}

struct InteractiveExample {
  TrainingExample example;
  bool stage1_had_errors = false;
  int simulated_rounds = 0;
};

// Stage-1 predictions on held-out scenes plus simulated corrections. Each
// scene gets between 1 and c.training_rounds rounds; the stage-1 model is
// kept fixed and re-run on the growing annotation state, and each round uses
// fixed or free allocation with equal probability.
inline std::vector<InteractiveExample> generate_interactive_training_set(std::span<const SyntheticScene> scenes,
                                                                         const ModelParams<float>& stage1,
                                                                         const ExperimentConfig& c) {
  std::vector<InteractiveExample> out;
  for (const auto& s : scenes) {
    Rng rng(stream_seed(c.seed, Stream::interactive_data, s.index));
    InteractiveExample ie;
    ie.example = {s.image, s.labels, scene_annotations(s, c)};
    auto& st = ie.example.annotations;
    auto seg = predict_scene(s.image, st, stage1, c.sharing).labels;
    ie.stage1_had_errors = !(seg == s.labels);
    const int rounds = 1 + int(uniform_index(rng, std::size_t(c.training_rounds)));
    for (int r = 0; r < rounds; ++r) {
      AllocationStrategy strat;
      strat.mode = uniform_index(rng, 2) ? AllocationStrategy::Mode::free_budget
                                         : AllocationStrategy::Mode::fixed_one_per_region;
      const auto added = allocate_scribbles(seg, s.labels, strat, rng);
      if (added.empty()) break;
      st.scribbles.insert(st.scribbles.end(), added.begin(), added.end());
      ++ie.simulated_rounds;
      if (r + 1 < rounds) seg = predict_scene(s.image, st, stage1, c.sharing).labels;
    }
    out.push_back(std::move(ie));
  }
  return out;
}

// Fine-tunes the stage-1 parameters on the scribble-augmented examples.
inline ModelParams<float> train_stage2(std::span<const InteractiveExample> data, const ModelParams<float>& stage1,
                                       const ExperimentConfig& c, TrainLog* log = nullptr,
                                       const CheckpointSink& sink = {}) {
  if (data.empty()) throw std::invalid_argument("train_stage2: empty dataset");
  std::vector<TrainingExample> examples;
  for (const auto& d : data) examples.push_back(d.example);
  return train_model(examples, stage1, c.stage2, c.loss, c.sharing, stream_seed(c.seed, Stream::batches, 2), log,
                     sink);
}

// Calls fn(i) for i in [0, n) on up to `threads` workers. Each index is
// handled by exactly one call; callers write results by index.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const int workers = std::max(1, std::min<int>(int(n), threads > 0 ? threads : int(std::thread::hardware_concurrency())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors{std::size_t(workers)};
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = std::size_t(w); i < n; i += std::size_t(workers)) fn(i);
      } catch (...) {
        errors[std::size_t(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Mean IoU of extreme-point-only predictions over the scenes.
inline double evaluate_extreme_points(std::span<const SyntheticScene> scenes, const ModelParams<float>& params,
                                      const ExperimentConfig& c, Sharing sharing) {
  std::vector<double> iou(scenes.size());
  parallel_for(scenes.size(), c.threads, [&](std::size_t i) {
    const auto st = scene_annotations(scenes[i], c);
    iou[i] = mean_region_iou(predict_scene(scenes[i].image, st, params, sharing).labels,
                             scenes[i].labels)
                 .mean;
  });
  double s = 0;
  for (double v : iou) s += v;
  return s / double(scenes.size());
}

struct CurvePoint {
  int round = 0;
  double scribbles_per_region = 0;
  double mean_iou = 0;
};

struct SceneTrace {
  std::vector<double> iou;                 // per round
  std::vector<double> scribbles_per_region;  // cumulative, per round
  std::vector<Segmentation> segmentations;   // per round
};

inline SceneTrace run_scene(const SyntheticScene& s, const ModelParams<float>& params, const ExperimentConfig& c,
                            AllocationStrategy::Mode mode, int rounds) {
  Rng rng(stream_seed(c.seed, Stream::evaluation, s.index));
  AnnotationState st = scene_annotations(s, c);
  const int n = st.regions();
  SceneTrace t;
  auto seg = predict_scene(s.image, st, params, c.sharing).labels;
  t.iou.push_back(mean_region_iou(seg, s.labels).mean);
  t.scribbles_per_region.push_back(0.0);
  t.segmentations.push_back(seg);
  AllocationStrategy strat;
  strat.mode = mode;
  for (int r = 1; r <= rounds; ++r) {
    const auto added = allocate_scribbles(seg, s.labels, strat, rng);
    if (!added.empty()) {
      st.scribbles.insert(st.scribbles.end(), added.begin(), added.end());
      seg = predict_scene(s.image, st, params, c.sharing).labels;
    }
    t.iou.push_back(mean_region_iou(seg, s.labels).mean);
    t.scribbles_per_region.push_back(double(st.scribbles.size()) / n);
    t.segmentations.push_back(seg);
  }
  return t;
}

// Per-round mean IoU and mean cumulative scribbles per region over scenes.
inline std::vector<CurvePoint> run_experiment(std::span<const SyntheticScene> scenes, const ModelParams<float>& params,
                                              const ExperimentConfig& c, AllocationStrategy::Mode mode,
                                              std::vector<SceneTrace>* traces = nullptr) {
  if (scenes.empty()) throw std::invalid_argument("run_experiment: no scenes");
  std::vector<SceneTrace> local(scenes.size());
  parallel_for(scenes.size(), c.threads, [&](std::size_t i) { local[i] = run_scene(scenes[i], params, c, mode, c.rounds); });
  std::vector<CurvePoint> curve(std::size_t(c.rounds) + 1);
  for (int r = 0; r <= c.rounds; ++r) {
    curve[r].round = r;
    for (const auto& t : local) {
      curve[r].mean_iou += t.iou[r];
      curve[r].scribbles_per_region += t.scribbles_per_region[r];
    }
    curve[r].mean_iou /= double(scenes.size());
    curve[r].scribbles_per_region /= double(scenes.size());
  }
  if (traces) *traces = std::move(local);
  return curve;
}

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string curve_csv(std::span<const CurvePoint> curve) {
  std::string s = "round,scribbles_per_region,mean_iou\n";
  for (const auto& p : curve)
    s += std::to_string(p.round) + "," + format_fixed(p.scribbles_per_region) + "," + format_fixed(p.mean_iou) + "\n";
  return s;
}

struct AblationCell {
  LossMode loss;
  Sharing sharing;
  double mean_iou = 0;
};

using AblationSink = std::function<void(const AblationCell&, const ModelParams<float>&)>;

// Trains one stage-1 model per (loss, sharing) cell on the train split and
// scores extreme-point-only predictions on the eval split.
inline std::vector<AblationCell> run_ablation(const Splits& splits, const ExperimentConfig& base,
                                              const AblationSink& on_cell = {}) {
  std::vector<AblationCell> cells;
  for (LossMode loss : {LossMode::maskwise, LossMode::pixelwise})
    for (Sharing sharing : {Sharing::unshared, Sharing::shared}) {
      ExperimentConfig c = base;
      c.loss = loss;
      c.sharing = sharing;
      const auto params = train_stage1(splits.train, c);
      AblationCell cell{loss, sharing, evaluate_extreme_points(splits.eval, params, c, sharing)};
      if (on_cell) on_cell(cell, params);
      cells.push_back(cell);
    }
  return cells;
}

inline std::string ablation_csv(std::span<const AblationCell> cells) {
  std::string s = "loss,sharing,mean_iou\n";
  for (const auto& c : cells) s += to_string(c.loss) + "," + to_string(c.sharing) + "," + format_fixed(c.mean_iou) + "\n";
  return s;
}

// Fixed color per region id (0 is black).
inline std::array<float, 3> region_color(int id) {
  if (id <= 0) return {0, 0, 0};
  const double h = std::fmod(0.61803398875 * id, 1.0) * 6.0;
  const int k = int(h);
  const double f = h - k;
  const double v = 0.95, s = 0.75, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  const double rgb[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
  return {float(rgb[k][0]), float(rgb[k][1]), float(rgb[k][2])};
}

// Image blended with region colors; region boundaries drawn opaque.
inline Tensor<float> render_overlay(const Tensor<float>& image, const Segmentation& seg, float opacity = 0.5f) {
  const int h = image.dim(0), w = image.dim(1);
  if (seg.width() != w || seg.height() != h) throw std::invalid_argument("render_overlay: dimension mismatch");
  Tensor<float> out = image;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int id = seg.at(c, r);
      const bool edge = (c + 1 < w && seg.at(c + 1, r) != id) || (r + 1 < h && seg.at(c, r + 1) != id);
      const auto col = region_color(id);
      const float a = edge ? 1.0f : opacity;
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = (1 - a) * image.at(r, c, ch) + a * col[ch];
    }
  return out;
}

inline std::filesystem::path checkpoint_path(const ExperimentConfig& c, int stage) {
  return std::filesystem::path(c.output_dir) /
         ("stage" + std::to_string(stage) + "_" + to_string(c.loss) + "_" + to_string(c.sharing) + ".ckpt");
}

}  // namespace cseg
