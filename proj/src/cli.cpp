#include "fusiontrack/cli.hpp"

#include "fusiontrack/config.hpp"
#include "fusiontrack/dataset.hpp"
#include "fusiontrack/gradcheck.hpp"
#include "fusiontrack/metrics.hpp"
#include "fusiontrack/synthetic.hpp"
#include "fusiontrack/tracker.hpp"
#include "fusiontrack/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

namespace fusiontrack {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  std::string command;
  KeyValues kv;
  std::optional<std::uint64_t> seed;
  fs::path out;
  std::vector<std::string> outputs;  // relative to `out`

  std::uint64_t require_seed() const {
    if (!seed) throw UsageError("a seed is required (config key 'seed' or --seed)");
    return *seed;
  }

  fs::path output(const std::string& relative) {
    fs::create_directories((out / relative).parent_path());
    outputs.push_back(relative);
    return out / relative;
  }

  std::string require_path(const std::string& key) const {
    const auto v = kv.find(key);
    if (!v) throw UsageError("config key '" + key + "' is required");
    if (!fs::exists(*v)) throw DataError("path for '" + key + "' does not exist: " + *v);
    return *v;
  }
};

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_manifest(Context& ctx) {
  const std::string canonical = ctx.kv.canonical() + "seed=" + (ctx.seed ? std::to_string(*ctx.seed) : "") + "\n";
  std::ofstream m(ctx.output("manifest.txt"));
  m << "command " << ctx.command << '\n';
  m << "version " << kVersion << '\n';
  m << "seed " << (ctx.seed ? std::to_string(*ctx.seed) : "none") << '\n';
  m << "config_hash " << hex64(fnv1a(canonical)) << '\n';
  for (const auto& o : ctx.outputs)
    if (o != "manifest.txt") m << "output " << o << '\n';
}

template <std::size_t N, typename T>
std::array<T, N> fixed(const std::vector<int>& v, const char* key) {
  if (v.size() != N) throw UsageError(std::string("config key '") + key + "' needs " + std::to_string(N) + " values");
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = static_cast<T>(v[i]);
  return out;
}

ModelConfig model_config(const KeyValues& kv) {
  ModelConfig c;
  c.channels = fixed<kLevels, Index>(kv.get_ints("channels", {16, 32, 64, 64}), "channels");
  c.grid = kv.get_int("grid", c.grid);
  c.patch_size = kv.get_double("patch_size", c.patch_size);
  c.max_points = kv.get_int("max_points", c.max_points);
  c.k_points = kv.get_int("k_points", c.k_points);
  c.r_points = kv.get_double("r_points", c.r_points);
  c.k_pixels = kv.get_int("k_pixels", c.k_pixels);
  c.r_pixels = kv.get_double("r_pixels", c.r_pixels);
  c.interact = fixed<kLevels, bool>(kv.get_ints("interact", {1, 1, 1, 1}), "interact");
  try {
    c.modality = parse_modality(kv.get("modality", "fused"));
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

TrackerConfig tracker_config(const KeyValues& kv) {
  TrackerConfig t;
  t.conf_threshold = kv.get_double("conf_threshold", t.conf_threshold);
  t.end_threshold = kv.get_double("end_threshold", t.end_threshold);
  t.max_age = kv.get_int("max_age", t.max_age);
  return t;
}

TrainConfig train_config(const Context& ctx) {
  TrainConfig t;
  t.epochs = ctx.kv.get_int("epochs", t.epochs);
  t.learning_rate = ctx.kv.get_double("learning_rate", t.learning_rate);
  t.seed = ctx.require_seed();
  if (t.epochs < 0) throw UsageError("epochs must be non-negative");
  return t;
}

nn::Checkpoint read_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
  return nn::load_checkpoint_file(path);
}

/// From `checkpoint` when configured, otherwise a freshly initialized model.
Model load_or_init_model(const Context& ctx) {
  const std::uint64_t seed = ctx.require_seed();
  if (const auto path = ctx.kv.find("checkpoint")) {
    const nn::Checkpoint ckpt = read_checkpoint(*path);
    Model m = make_model(config_from_checkpoint(ckpt), seed);
    load_model(m, ckpt);
    return m;
  }
  return make_model(model_config(ctx.kv), seed);
}

std::vector<PreparedSequence> load_prepared(const Context& ctx, const ModelConfig& cfg) {
  const std::string root = ctx.require_path("data");
  std::vector<PreparedSequence> out;
  for (const auto& seq : load_dataset(root, ctx.kv.get_list("sequences"))) out.push_back(prepare_sequence(seq, cfg));
  return out;
}

int cmd_track(Context& ctx, std::ostream& out) {
  const Model model = load_or_init_model(ctx);
  const TrackerConfig tc = tracker_config(ctx.kv);
  for (const auto& seq : load_prepared(ctx, model.config)) {
    const FrameBoxes tracks = track_sequence(model, seq, tc);
    std::ofstream f(ctx.output("results/" + seq.name + ".txt"));
    write_results(tracks, f);
    out << "tracked " << seq.name << ": " << seq.frames.size() << " frames\n";
  }
  write_manifest(ctx);
  return kExitOk;
}

int cmd_eval(Context& ctx, const std::string& gt_opt, const std::string& results_opt,
             const std::string& class_filter, std::ostream& out) {
  const std::string gt_path = gt_opt.empty() ? ctx.kv.get("gt", "") : gt_opt;
  const std::string res_path = results_opt.empty() ? ctx.kv.get("results", "") : results_opt;
  if (gt_path.empty() || res_path.empty()) throw UsageError("eval needs --gt and --results");
  auto gt = load_label_tree(gt_path);
  auto pred = load_label_tree(res_path);
  // two plain files are compared with each other whatever their names
  if (fs::is_regular_file(gt_path) && fs::is_regular_file(res_path)) {
    FrameBoxes p = std::move(pred.begin()->second);
    pred.clear();
    pred[gt.begin()->first] = std::move(p);
  }
  metrics::EvalOptions opt;
  opt.class_filter = class_filter;
  opt.iou_thr = ctx.kv.get_double("iou_threshold", opt.iou_thr);
  const metrics::EvalReport report = metrics::evaluate(gt, pred, opt);
  out << metrics::format_table(report) << '\n' << metrics::format_key_values(report);
  return kExitOk;
}

int cmd_gradcheck(Context& ctx, bool corrupt, std::ostream& out, std::ostream& err) {
  const auto results = run_gradient_checks(ctx.require_seed(), corrupt ? 2.0 : 1.0);
  std::vector<std::string> failed;
  for (const auto& r : results) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-24s %.6e  (%ld coordinates, %ld at kinks)\n", r.operation.c_str(),
                  r.max_relative_error, r.coordinates, r.kinks);
    out << buf;
    if (!passed(r)) failed.push_back(r.operation + " (worst: " + r.worst_param + ")");
  }
  if (!failed.empty()) {
    err << "gradient check failed for:\n";
    for (const auto& f : failed) err << "  " << f << '\n';
    return kExitCheck;
  }
  return kExitOk;
}

void write_loss_log(Context& ctx, const std::string& name, const TrainLog& log, std::ostream& out) {
  std::ofstream f(ctx.output(name));
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu %.9g\n", e + 1, log.epoch_loss[e]);
    f << buf;
    out << "epoch " << buf;
  }
}

int cmd_pretrain(Context& ctx, const std::string& modality_text, std::ostream& out) {
  Modality modality;
  try {
    modality = parse_modality(modality_text);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (modality == Modality::fused) throw UsageError("pretrain takes --modality image or lidar");
  const ModelConfig cfg = model_config(ctx.kv);
  const TrainConfig tc = train_config(ctx);
  const auto data = load_prepared(ctx, cfg);
  TrainLog log;
  const nn::Checkpoint ckpt = pretrain_single_modality(cfg, data, modality, tc, &log);
  nn::save_checkpoint_file(ctx.output(modality_text + ".ckpt").string(), ckpt);
  write_loss_log(ctx, modality_text + "_loss.txt", log, out);
  write_manifest(ctx);
  return kExitOk;
}

int cmd_finetune(Context& ctx, std::ostream& out) {
  const ModelConfig cfg = model_config(ctx.kv);
  const TrainConfig tc = train_config(ctx);
  const auto img_path = ctx.kv.find("image_checkpoint");
  const auto pc_path = ctx.kv.find("lidar_checkpoint");
  if (!img_path || !pc_path) throw UsageError("finetune needs image_checkpoint and lidar_checkpoint");
  const nn::Checkpoint img = read_checkpoint(*img_path);
  const nn::Checkpoint pc = read_checkpoint(*pc_path);
  const auto data = load_prepared(ctx, cfg);
  TrainLog log;
  const nn::Checkpoint ckpt = fine_tune_fusion(cfg, img, pc, data, tc, &log);
  nn::save_checkpoint_file(ctx.output("fused.ckpt").string(), ckpt);
  write_loss_log(ctx, "fused_loss.txt", log, out);
  write_manifest(ctx);
  return kExitOk;
}

int cmd_dump_attention(Context& ctx, const std::string& sequence, int frame, int detection, std::ostream& out) {
  const Model model = load_or_init_model(ctx);
  const std::string root = ctx.require_path("data");
  const std::string name = sequence.empty() ? list_sequences(root).at(0) : sequence;
  const PreparedSequence seq = prepare_sequence(load_sequence(root, name), model.config);
  if (frame < 0 || frame >= static_cast<int>(seq.frames.size())) {
    throw DataError("sequence " + name + " has no frame " + std::to_string(frame));
  }
  const FrameInput& fi = seq.frames[static_cast<std::size_t>(frame)];
  if (detection < 0 || detection >= static_cast<int>(fi.inputs.size())) {
    throw DataError("frame " + std::to_string(frame) + " has no detection " + std::to_string(detection));
  }
  ExtractionTape tape;
  extract(model, fi.inputs[static_cast<std::size_t>(detection)], &tape);
  std::ofstream f(ctx.output("attention.csv"));
  f << "level,direction,center,neighbor,weight\n";
  std::size_t rows = 0;
  for (const auto& r : attention_rows(tape)) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d,%s,%lld,%lld,%.9g\n", r.level, r.direction.c_str(),
                  static_cast<long long>(r.center), static_cast<long long>(r.neighbor), r.weight);
    f << buf;
    ++rows;
  }
  out << "wrote " << rows << " attention rows for " << name << " frame " << frame << " detection " << detection
      << '\n';
  write_manifest(ctx);
  return kExitOk;
}

int cmd_synth(Context& ctx, int sequences, int frames, int objects, std::ostream& out) {
  SynthConfig sc;
  sc.sequences = sequences;
  sc.frames = frames;
  sc.objects = objects;
  sc.seed = ctx.require_seed();
  fs::create_directories(ctx.out);
  for (const auto& seq : generate_synthetic(sc)) {
    write_sequence(ctx.out.string(), seq);
    ctx.outputs.push_back("det_02/" + seq.name + ".txt");
  }
  out << "wrote " << sequences << " sequences to " << ctx.out.string() << '\n';
  write_manifest(ctx);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal tracking-by-detection toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  app.add_option("--config", config_path, "key=value run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "random seed (overrides the config)");
  app.add_option("--out", out_dir, "output directory");

  auto* track = app.add_subcommand("track", "track every configured sequence");
  auto* eval = app.add_subcommand("eval", "evaluate results against ground truth");
  std::string gt_path, results_path, class_filter;
  eval->add_option("--gt", gt_path, "ground-truth label file or directory");
  eval->add_option("--results", results_path, "result file or directory");
  eval->add_option("--class", class_filter, "only evaluate this class");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every layer");
  bool corrupt = false;
  gradcheck->add_flag("--corrupt-gradient", corrupt, "scale analytic gradients (checker self-test)");
  auto* pretrain = app.add_subcommand("pretrain", "train a single-modality model");
  std::string modality;
  pretrain->add_option("--modality", modality, "image or lidar")->required();
  auto* finetune = app.add_subcommand("finetune", "fine-tune the fused model from both pre-trained branches");
  auto* dump = app.add_subcommand("dump-attention", "export second-stage attention weights as CSV");
  std::string dump_sequence;
  int dump_frame = 0, dump_detection = 0;
  dump->add_option("--sequence", dump_sequence, "sequence name (default: first)");
  dump->add_option("--frame", dump_frame, "frame index")->required();
  dump->add_option("--detection", dump_detection, "detection index within the frame")->required();
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  int synth_sequences = 20, synth_frames = 20, synth_objects = 5;
  synth->add_option("--sequences", synth_sequences)->check(CLI::PositiveNumber);
  synth->add_option("--frames", synth_frames)->check(CLI::PositiveNumber);
  synth->add_option("--objects", synth_objects)->check(CLI::Range(1, 9));
  for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Context ctx;
  try {
    if (!config_path.empty()) ctx.kv = KeyValues::parse_file(config_path);
    ctx.seed = seed;
    if (!ctx.seed && ctx.kv.contains("seed")) ctx.seed = ctx.kv.get_u64("seed", 0);
    ctx.kv.find("seed");
    ctx.out = out_dir.empty() ? fs::path(ctx.kv.get("out", "fusiontrack_out")) : fs::path(out_dir);

    int code = kExitOk;
    if (track->parsed()) {
      ctx.command = "track";
      code = cmd_track(ctx, out);
    } else if (eval->parsed()) {
      ctx.command = "eval";
      code = cmd_eval(ctx, gt_path, results_path, class_filter, out);
    } else if (gradcheck->parsed()) {
      ctx.command = "gradcheck";
      code = cmd_gradcheck(ctx, corrupt, out, err);
    } else if (pretrain->parsed()) {
      ctx.command = "pretrain";
      code = cmd_pretrain(ctx, modality, out);
    } else if (finetune->parsed()) {
      ctx.command = "finetune";
      code = cmd_finetune(ctx, out);
    } else if (dump->parsed()) {
      ctx.command = "dump-attention";
      code = cmd_dump_attention(ctx, dump_sequence, dump_frame, dump_detection, out);
    } else if (synth->parsed()) {
      ctx.command = "synth";
      code = cmd_synth(ctx, synth_sequences, synth_frames, synth_objects, out);
    }
    for (const auto& key : ctx.kv.unused()) err << "warning: config key '" << key << "' was not used\n";
    return code;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace fusiontrack
