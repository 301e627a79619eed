// SPDX-License-Identifier: Apache-2.0

#include "ctad/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ctad/gradcheck.hpp"
#include "ctad/io.hpp"
#include "ctad/pipeline.hpp"

namespace ctad {

namespace {

namespace fs = std::filesystem;

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_stages(std::ostream& out, const std::vector<MetricReport>& stages) {
  out << "# abs_rel\tsq_rel\trmse\trmse_log\ta1\ta2\ta3\n";
  for (std::size_t k = 0; k < stages.size(); ++k) {
    out << "# stage " << k << (k == 0 ? " (initial)" : "") << "\n" << stages[k].tsv() << "\n";
  }
}

struct Options {
  // render
  std::string spec_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  // train / eval / infer
  std::string config_path;
  std::string data_dir;
  std::string ckpt;
  std::string log_path;
  double cap = 80;
  bool median_scaling = false;
  bool dynamic_only = false;
  bool gt_as_prediction = false;
  bool all_samples = false;
  int frame = -1;
  int trials = 20;
};

int cmd_render(const Options& o, std::ostream& out, std::ostream& err) {
  synth::SceneSpec spec = o.spec_path.empty() ? synth::default_scene() : synth::parse_scene(read_text(o.spec_path));
  if (o.seed) spec.seed = *o.seed;
  const synth::Sequence seq = synth::render(spec);
  for (const auto& w : seq.warnings) err << "warning: " << w << "\n";
  io::save_sequence(o.out_dir, seq);
  std::ofstream(fs::path(o.out_dir) / "scene.json") << synth::scene_to_json(spec) << "\n";
  out << "rendered " << seq.frames.size() << " frames (" << seq.height << "x" << seq.width << ") to " << o.out_dir
      << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream&) {
  const TrainConfig cfg = load_config(o.config_path);
  const synth::Sequence seq = io::load_sequence(o.data_dir);
  std::ofstream log_file;
  if (!o.log_path.empty()) {
    log_file.open(o.log_path);
    if (!log_file) throw std::runtime_error("cannot write " + o.log_path);
    log_file << log_header(cfg, split_sequence(cfg, seq).train.size());
  }
  const auto start = std::chrono::steady_clock::now();
  const TrainResult result = train(cfg, seq, [&](const TrainLogRow& row) {
    const std::string line = format_log_row(row);
    if (log_file.is_open()) log_file << line << "\n" << std::flush;
    if (row.step == 1 || row.step % 25 == 0 || row.step == cfg.steps) out << line << "\n" << std::flush;
  });
  save_checkpoint(o.ckpt, to_table(result.net));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.1f", secs);
  out << "trained " << cfg.steps << " steps in " << buf << " s; checkpoint written to " << o.ckpt << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream&) {
  const Network net = from_table(load_checkpoint(o.ckpt));
  const synth::Sequence seq = io::load_sequence(o.data_dir);
  if (seq.height != net.config.height || seq.width != net.config.width) {
    throw std::invalid_argument("data resolution " + std::to_string(seq.height) + "x" + std::to_string(seq.width) +
                                " does not match the checkpoint (" + std::to_string(net.config.height) + "x" +
                                std::to_string(net.config.width) + ")");
  }
  const DataSplit split = split_sequence(net.config, seq);
  std::vector<synth::Sample> samples = split.eval;
  if (o.all_samples) {
    samples = split.train;
    samples.insert(samples.end(), split.eval.begin(), split.eval.end());
  }
  EvalOptions eo;
  eo.cap = o.cap;
  eo.median_scaling = o.median_scaling;
  eo.gt_as_prediction = o.gt_as_prediction;
  const EvalResult r = evaluate(net, samples, seq.camera, eo);
  if (o.dynamic_only) {
    if (r.dynamic_stages.empty()) throw std::runtime_error("no moving-object pixels in the evaluated samples");
    out << "# samples " << r.dynamic_samples << " (moving-object pixels only), median scaling "
        << (o.median_scaling ? "on" : "off") << "\n";
    print_stages(out, r.dynamic_stages);
  } else {
    out << "# samples " << r.samples << ", median scaling " << (o.median_scaling ? "on" : "off") << "\n";
    print_stages(out, r.stages);
  }
  return kExitOk;
}

int cmd_infer(const Options& o, std::ostream& out, std::ostream&) {
  const Network net = from_table(load_checkpoint(o.ckpt));
  const synth::Sequence seq = io::load_sequence(o.data_dir);
  if (seq.height != net.config.height || seq.width != net.config.width) {
    throw std::invalid_argument("data resolution does not match the checkpoint");
  }
  const auto samples = synth::make_samples(seq, net.config.neighbor_offsets, net.config.d_min, net.config.d_max);
  const auto it = std::find_if(samples.begin(), samples.end(), [&](const auto& s) { return s.reference == o.frame; });
  if (it == samples.end()) {
    throw std::invalid_argument("frame " + std::to_string(o.frame) + " has no complete set of neighbours");
  }
  NoGradGuard no_grad;
  const ForwardOutput fwd = forward(net, *it, seq.camera);
  const DepthMap& d = fwd.trace.depth_at(net.config.m);
  std::vector<float> depth(d.values.data().begin(), d.values.data().end());
  fs::create_directories(o.out_dir);
  char name[64];
  std::snprintf(name, sizeof name, "depth_%04d", o.frame);
  io::write_pfm(fs::path(o.out_dir) / (std::string(name) + ".pfm"), {seq.width, seq.height, depth});
  io::write_ppm(fs::path(o.out_dir) / (std::string(name) + ".ppm"),
                io::depth_visualization(depth, seq.height, seq.width, net.config.d_min, net.config.d_max));
  out << "wrote " << (fs::path(o.out_dir) / name).string() << ".{pfm,ppm}\n";
  return kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out, std::ostream&) {
  const GradcheckReport rep = run_gradcheck_suite(o.seed.value_or(1), o.trials);
  char buf[160];
  for (const auto& e : rep.entries) {
    std::snprintf(buf, sizeof buf, "%-28s trials %3d  max rel err %.3e\n", e.name.c_str(), e.trials, e.max_rel_error);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "max relative error %.3e\n", rep.max_rel_error());
  out << buf;
  if (rep.max_rel_error() >= 1e-4) {
    out << "FAILED: threshold 1e-4\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-frame depth and pose refinement on synthetic scenes", "ctad"};
  app.require_subcommand(1);
  Options o;

  auto* render = app.add_subcommand("render", "Render a synthetic sequence");
  render->add_option("--spec", o.spec_path, "Scene description (JSON); built-in scene if omitted");
  render->add_option("--out", o.out_dir, "Output directory")->required();
  render->add_option("--seed", o.seed, "Override the scene seed");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", o.config_path, "Training configuration")->required();
  train_cmd->add_option("--data", o.data_dir, "Rendered sequence directory")->required();
  train_cmd->add_option("--out", o.ckpt, "Checkpoint to write")->required();
  train_cmd->add_option("--log", o.log_path, "Loss log file");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out frames");
  eval->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  eval->add_option("--data", o.data_dir, "Rendered sequence directory")->required();
  eval->add_option("--cap", o.cap, "Maximum ground-truth depth")->check(CLI::PositiveNumber);
  eval->add_flag("--median-scaling", o.median_scaling, "Rescale predictions by the ratio of medians");
  eval->add_flag("--dynamic-only", o.dynamic_only, "Restrict metrics to moving-object pixels");
  eval->add_flag("--gt-as-prediction", o.gt_as_prediction, "Score the ground truth against itself");
  eval->add_flag("--all", o.all_samples, "Evaluate training frames too");

  auto* infer = app.add_subcommand("infer", "Predict depth for one frame");
  infer->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  infer->add_option("--data", o.data_dir, "Rendered sequence directory")->required();
  infer->add_option("--frame", o.frame, "Reference frame index")->required();
  infer->add_option("--out", o.out_dir, "Output directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad->add_option("--seed", o.seed, "Random seed");
  grad->add_option("--trials", o.trials, "Trials per operation")->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (render->parsed()) return cmd_render(o, out, err);
    if (train_cmd->parsed()) return cmd_train(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out, err);
    if (infer->parsed()) return cmd_infer(o, out, err);
    if (grad->parsed()) return cmd_gradcheck(o, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace ctad
