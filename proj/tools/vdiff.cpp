// Command-line front end: dataset synthesis, staged training, inference,
// evaluation and ablation sweeps. Every command echoes its effective
// configuration into the output directory and is reproducible from that echo
// plus the seed.

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vdiff/checkpoint.hpp"
#include "vdiff/config.hpp"
#include "vdiff/datakit.hpp"
#include "vdiff/eval.hpp"
#include "vdiff/model.hpp"
#include "vdiff/training.hpp"

namespace fs = std::filesystem;
using namespace vdiff;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value configuration file");
  cmd->add_option("--set", args.overrides, "override a configuration key (repeatable)")
      ->type_name("KEY=VALUE");
  cmd->add_option("--out", args.out_dir, "output directory")->required();
  cmd->add_option("--seed", args.seed, "random seed")->each([&args](const std::string&) {
    args.seed_set = true;
  });
}

Config assemble_config(const CommonArgs& args) {
  Config cfg = Config::with_defaults();
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed_set) cfg.set("seed", std::to_string(args.seed));
  return cfg;
}

void echo_config(const std::string& out_dir, const std::string& command, const Config& cfg,
                 const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "config.txt", std::ios::trunc);
  out << "command=" << command << "\n";
  for (const auto& [k, v] : extra) out << k << "=" << v << "\n";
  out << cfg.echo();
}

void write_failed_marker(const std::string& out_dir, const std::string& message) {
  if (out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream out(fs::path(out_dir) / "_FAILED", std::ios::trunc);
  out << message << "\n";
}

std::string fmt_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_loss(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

int eval_threads() {
  const char* env = std::getenv("VDIFF_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const CommonArgs& args) {
  Config cfg = assemble_config(args);
  echo_config(args.out_dir, "synth", cfg);
  data::BlurDatasetSpec spec;
  spec.clips = static_cast<int>(cfg.i64("synth.clips"));
  spec.frames = static_cast<int>(cfg.i64("synth.frames"));
  spec.height = static_cast<int>(cfg.i64("synth.height"));
  spec.width = static_cast<int>(cfg.i64("synth.width"));
  spec.blur_window = static_cast<int>(cfg.i64("synth.blur_window"));
  spec.velocity_min = cfg.dbl("synth.velocity_min");
  spec.velocity_max = cfg.dbl("synth.velocity_max");
  spec.eval_fraction = cfg.dbl("synth.eval_fraction");
  spec.seed = cfg.u64("seed");
  spec.validate();

  const int eval_count = static_cast<int>(spec.clips * spec.eval_fraction + 0.5);
  std::vector<data::ManifestEntry> entries;
  double psnr_sum = 0.0;
  bool psnr_inf = false;
  for (int i = 0; i < spec.clips; ++i) {
    auto [blur, gt] = data::synthesize_clip(spec, i);
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%03d", i);
    data::Clip clip{name, data::quantize_video(blur), data::quantize_video(gt)};
    data::save_clip(clip, args.out_dir);
    const double p = train::psnr(clip.blur, clip.gt, 1.0);
    if (std::isinf(p))
      psnr_inf = true;
    else
      psnr_sum += p;
    entries.push_back({name, spec.frames, i >= spec.clips - eval_count ? "eval" : "train"});
  }
  data::write_manifest(args.out_dir, entries);
  const std::string mean =
      psnr_inf ? "inf" : fmt_metric(psnr_sum / static_cast<double>(spec.clips));
  std::cout << "clips=" << spec.clips << " mean_blur_psnr=" << mean << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const CommonArgs& args, int stage, const std::string& data_dir,
              const std::string& ckpt_in_flag, const std::string& resume_flag, int steps_flag,
              int seq_len_flag, int diffusion_steps_flag) {
  Config cfg = assemble_config(args);
  if (steps_flag > 0) cfg.set("train.steps", std::to_string(steps_flag));
  if (seq_len_flag > 0) cfg.set("train.seq_len", std::to_string(seq_len_flag));
  if (diffusion_steps_flag > 0) cfg.set("diffusion.steps", std::to_string(diffusion_steps_flag));
  if (!ckpt_in_flag.empty()) cfg.set("train.checkpoint_in", ckpt_in_flag);
  if (!resume_flag.empty()) cfg.set("train.resume", resume_flag);
  echo_config(args.out_dir, "train", cfg,
              {{"stage", std::to_string(stage)}, {"data", data_dir}});

  data::Dataset ds = data::load_dataset(data_dir);
  if (ds.train.empty()) throw std::runtime_error("train: dataset has no training clips");

  train::TrainStageConfig tc;
  tc.stage = stage;
  tc.lambda_msfr = cfg.dbl("train.lambda_msfr");
  tc.msfr_scales = static_cast<int>(cfg.i64("train.msfr_scales"));
  tc.lr = cfg.dbl("train.lr");
  tc.weight_decay = cfg.dbl("train.weight_decay");
  tc.batch_size = static_cast<int>(cfg.i64("train.batch_size"));
  tc.steps = static_cast<int>(cfg.i64("train.steps"));
  tc.seq_len = static_cast<int>(cfg.i64("train.seq_len"));
  tc.seed = cfg.u64("seed");
  tc.validate();

  const std::string resume_path = cfg.str("train.resume");
  const std::string ckpt_in = cfg.str("train.checkpoint_in");

  Model model = Model::build(cfg);
  train::TrainState state(tc);
  bool resuming = false;
  if (!resume_path.empty()) {
    train::Checkpoint prev = train::Checkpoint::load(resume_path);
    if (prev.stage != static_cast<std::uint32_t>(stage))
      throw std::runtime_error("train: resume checkpoint is stage " + std::to_string(prev.stage) +
                               ", requested stage " + std::to_string(stage));
    model = Model::from_checkpoint_config(prev.config_text);
    train::restore_model(model, prev);
    train::restore_train_state(state, prev);
    resuming = true;
  } else if (stage > 1) {
    if (ckpt_in.empty())
      throw std::runtime_error("train: stage " + std::to_string(stage) +
                               " requires the previous stage's checkpoint (train.checkpoint_in)");
    train::Checkpoint prev = train::Checkpoint::load(ckpt_in);
    if (prev.stage != static_cast<std::uint32_t>(stage - 1))
      throw std::runtime_error("train: stage " + std::to_string(stage) + " requires a stage " +
                               std::to_string(stage - 1) + " checkpoint, got stage " +
                               std::to_string(prev.stage));
    model = Model::from_checkpoint_config(prev.config_text);
    train::restore_model(model, prev);
  }

  const fs::path csv_path = fs::path(args.out_dir) / ("loss_stage" + std::to_string(stage) + ".csv");
  std::ofstream csv(csv_path, resuming ? std::ios::app : std::ios::trunc);
  if (!resuming) {
    if (stage == 1)
      csv << "step,loss,l1,msfr\n";
    else if (stage == 2)
      csv << "step,loss,diff\n";
    else
      csv << "step,loss,deblur,diff\n";
  }

  double final_loss = 0.0;
  train::train_stage(model, ds.train, tc, state, [&](const train::StepLog& log) {
    csv << log.step << "," << fmt_loss(log.loss);
    for (const auto& [name, v] : log.components) csv << "," << fmt_loss(v);
    csv << "\n";
    final_loss = log.loss;
  });
  csv.flush();

  const fs::path ckpt_path = fs::path(args.out_dir) / ("stage" + std::to_string(stage) + ".ckpt");
  train::make_checkpoint(model, state, stage).save(ckpt_path.string());
  std::cout << "stage=" << stage << " steps=" << state.completed_steps
            << " final_loss=" << fmt_loss(final_loss) << " checkpoint=" << ckpt_path.string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

Tensor load_blur_only(const std::string& clip_dir) {
  const fs::path p(clip_dir);
  if (fs::is_directory(p / "blur")) return data::detail::load_frame_dir(p / "blur", p.filename().string());
  return data::detail::load_frame_dir(p, p.filename().string());
}

int cmd_infer(const CommonArgs& args, const std::string& ckpt_path, const std::string& clip_dir,
              int seq_len_flag, int diffusion_steps_flag) {
  Config cfg = assemble_config(args);
  echo_config(args.out_dir, "infer", cfg,
              {{"ckpt", ckpt_path}, {"clip", clip_dir},
               {"diffusion_steps_override", std::to_string(diffusion_steps_flag)},
               {"seq_len_override", std::to_string(seq_len_flag)}});
  train::Checkpoint ckpt = train::Checkpoint::load(ckpt_path);
  if (ckpt.stage < 2)
    throw std::runtime_error(
        "infer: needs a stage 2 or 3 checkpoint (the condition encoder and noise predictor are "
        "trained there); got stage " + std::to_string(ckpt.stage));
  Model model = Model::from_checkpoint_config(ckpt.config_text);
  train::restore_model(model, ckpt);

  Tensor blur = load_blur_only(clip_dir);
  train::EvalOptions opt;
  opt.seq_len = seq_len_flag > 0 ? seq_len_flag : static_cast<int>(cfg.i64("eval.seq_len"));
  opt.diffusion_steps =
      diffusion_steps_flag > 0 ? diffusion_steps_flag : static_cast<int>(cfg.i64("eval.diffusion_steps"));
  opt.prior = train::PriorSource::sampled;
  opt.seed = cfg.u64("seed");

  const auto t0 = std::chrono::steady_clock::now();
  Tensor restored = train::restore_clip(model, blur, Tensor(), opt, opt.seed);
  const auto t1 = std::chrono::steady_clock::now();

  const fs::path frames_dir = fs::path(args.out_dir) / "frames";
  fs::create_directories(frames_dir);
  char name[16];
  for (int t = 0; t < restored.extent(0); ++t) {
    std::snprintf(name, sizeof(name), "%05d.png", t);
    data::write_png_rgb8((frames_dir / name).string(), restored.extent(3), restored.extent(2),
                         data::frame_to_rgb8(restored, t));
  }
  const double secs = std::chrono::duration<double>(t1 - t0).count();
  std::cout << "frames=" << restored.extent(0) << " wall_seconds=" << fmt_metric(secs) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval / ablate
// ---------------------------------------------------------------------------

const std::vector<data::Clip>& pick_split(const data::Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "eval") return ds.eval;
  throw std::invalid_argument("eval: split must be 'train' or 'eval', got '" + split + "'");
}

std::pair<Model, std::uint32_t> load_model(const std::string& ckpt_path) {
  train::Checkpoint ckpt = train::Checkpoint::load(ckpt_path);
  Model model = Model::from_checkpoint_config(ckpt.config_text);
  train::restore_model(model, ckpt);
  return {std::move(model), ckpt.stage};
}

int cmd_eval(const CommonArgs& args, const std::string& ckpt_path, const std::string& data_dir,
             const std::string& sweep, int seq_len_flag, int diffusion_steps_flag) {
  Config cfg = assemble_config(args);
  echo_config(args.out_dir, "eval", cfg,
              {{"ckpt", ckpt_path}, {"data", data_dir}, {"sweep", sweep.empty() ? "none" : sweep}});
  auto [model, stage] = load_model(ckpt_path);
  data::Dataset ds = data::load_dataset(data_dir);
  const auto& clips = pick_split(ds, cfg.str("eval.split"));
  if (clips.empty()) throw std::runtime_error("eval: selected split has no clips");

  train::EvalOptions opt;
  opt.seq_len = seq_len_flag > 0 ? seq_len_flag : static_cast<int>(cfg.i64("eval.seq_len"));
  opt.diffusion_steps =
      diffusion_steps_flag > 0 ? diffusion_steps_flag : static_cast<int>(cfg.i64("eval.diffusion_steps"));
  opt.prior = stage == 1 ? train::PriorSource::gt_encoder : train::PriorSource::sampled;
  opt.seed = cfg.u64("seed");
  opt.threads = eval_threads();

  if (sweep.empty()) {
    train::EvalResult r = train::evaluate(model, clips, opt);
    std::ofstream csv(fs::path(args.out_dir) / "eval.csv", std::ios::trunc);
    csv << "clip,psnr,ssim\n";
    for (const auto& row : r.per_clip)
      csv << row.clip << "," << fmt_metric(row.psnr) << "," << fmt_metric(row.ssim) << "\n";
    csv << "mean," << fmt_metric(r.mean_psnr) << "," << fmt_metric(r.mean_ssim) << "\n";
    train::EvalResult base = train::baseline(clips);
    std::cout << "clips=" << r.per_clip.size() << " mean_psnr=" << fmt_metric(r.mean_psnr)
              << " mean_ssim=" << fmt_metric(r.mean_ssim)
              << " baseline_psnr=" << fmt_metric(base.mean_psnr) << "\n";
  } else if (sweep == "steps") {
    std::ofstream csv(fs::path(args.out_dir) / "sweep_steps.csv", std::ios::trunc);
    csv << "diffusion_steps,psnr,ssim\n";
    for (int steps : {1, 2, 4, 8}) {
      train::EvalOptions s = opt;
      s.diffusion_steps = steps;
      train::EvalResult r = train::evaluate(model, clips, s);
      csv << steps << "," << fmt_metric(r.mean_psnr) << "," << fmt_metric(r.mean_ssim) << "\n";
      std::cout << "steps=" << steps << " psnr=" << fmt_metric(r.mean_psnr) << "\n";
    }
  } else if (sweep == "seqlen") {
    std::ofstream csv(fs::path(args.out_dir) / "sweep_seqlen.csv", std::ios::trunc);
    csv << "seq_len,psnr,ssim\n";
    int max_frames = 0;
    for (const auto& c : clips) max_frames = std::max(max_frames, c.frames());
    for (int len : {1, 2, 4, 8, 16}) {
      if (len > max_frames) break;
      train::EvalOptions s = opt;
      s.seq_len = len;
      train::EvalResult r = train::evaluate(model, clips, s);
      csv << len << "," << fmt_metric(r.mean_psnr) << "," << fmt_metric(r.mean_ssim) << "\n";
      std::cout << "seq_len=" << len << " psnr=" << fmt_metric(r.mean_psnr) << "\n";
    }
  } else {
    throw std::invalid_argument("eval: unknown sweep '" + sweep + "' (use steps|seqlen)");
  }
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& ckpt_path, const std::string& data_dir,
               int seq_len_flag) {
  Config cfg = assemble_config(args);
  echo_config(args.out_dir, "ablate", cfg, {{"ckpt", ckpt_path}, {"data", data_dir}});
  auto [model, stage] = load_model(ckpt_path);
  if (stage < 2) throw std::runtime_error("ablate: needs a stage 2 or 3 checkpoint");
  data::Dataset ds = data::load_dataset(data_dir);
  const auto& clips = pick_split(ds, cfg.str("eval.split"));
  if (clips.empty()) throw std::runtime_error("ablate: selected split has no clips");

  train::EvalOptions opt;
  opt.seq_len = seq_len_flag > 0 ? seq_len_flag : static_cast<int>(cfg.i64("eval.seq_len"));
  opt.seed = cfg.u64("seed");
  opt.threads = eval_threads();

  auto rows = train::ablate(model, clips, opt, {1, 2, 4, 8});
  std::ofstream csv(fs::path(args.out_dir) / "ablate.csv", std::ios::trunc);
  csv << "variant,psnr,ssim\n";
  for (const auto& row : rows) {
    csv << row.variant << "," << fmt_metric(row.psnr) << "," << fmt_metric(row.ssim) << "\n";
    std::cout << row.variant << " psnr=" << fmt_metric(row.psnr)
              << " ssim=" << fmt_metric(row.ssim) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"video deblurring with a wavelet transformer and a compact-latent diffusion prior"};
  app.require_subcommand(1);

  CommonArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic blur dataset");
  add_common(synth, synth_args);

  CommonArgs train_args;
  int train_stage_n = 0, train_steps = 0, train_seq = 0, train_dsteps = 0;
  std::string train_data, train_ckpt, train_resume;
  CLI::App* train_cmd = app.add_subcommand("train", "run one training stage");
  add_common(train_cmd, train_args);
  train_cmd->add_option("--stage", train_stage_n, "training stage (1, 2 or 3)")
      ->required()
      ->check(CLI::Range(1, 3));
  train_cmd->add_option("--data", train_data, "dataset root")->required();
  train_cmd->add_option("--steps", train_steps, "step budget override");
  train_cmd->add_option("--seq-len", train_seq, "training sequence length override");
  train_cmd->add_option("--diffusion-steps", train_dsteps, "diffusion step count override");
  train_cmd->add_option("--ckpt", train_ckpt, "previous-stage checkpoint");
  train_cmd->add_option("--resume", train_resume, "same-stage checkpoint to resume");

  CommonArgs infer_args;
  std::string infer_ckpt, infer_clip;
  int infer_seq = 0, infer_dsteps = 0;
  CLI::App* infer = app.add_subcommand("infer", "deblur one clip");
  add_common(infer, infer_args);
  infer->add_option("--ckpt", infer_ckpt, "model checkpoint")->required();
  infer->add_option("--clip", infer_clip, "clip directory (with blur/ or bare PNG frames)")
      ->required();
  infer->add_option("--seq-len", infer_seq, "window length override");
  infer->add_option("--diffusion-steps", infer_dsteps, "diffusion step count override");

  CommonArgs eval_args;
  std::string eval_ckpt, eval_data, eval_sweep;
  int eval_seq = 0, eval_dsteps = 0;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--ckpt", eval_ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "dataset root")->required();
  eval_cmd->add_option("--sweep", eval_sweep, "emit sweep CSV instead (steps|seqlen)");
  eval_cmd->add_option("--seq-len", eval_seq, "window length override");
  eval_cmd->add_option("--diffusion-steps", eval_dsteps, "diffusion step count override");

  CommonArgs ablate_args;
  std::string ablate_ckpt, ablate_data;
  int ablate_seq = 0;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "prior and step-count ablations");
  add_common(ablate_cmd, ablate_args);
  ablate_cmd->add_option("--ckpt", ablate_ckpt, "model checkpoint")->required();
  ablate_cmd->add_option("--data", ablate_data, "dataset root")->required();
  ablate_cmd->add_option("--seq-len", ablate_seq, "window length override");

  CLI11_PARSE(app, argc, argv);

  std::string out_dir;
  try {
    if (synth->parsed()) {
      out_dir = synth_args.out_dir;
      return cmd_synth(synth_args);
    }
    if (train_cmd->parsed()) {
      out_dir = train_args.out_dir;
      return cmd_train(train_args, train_stage_n, train_data, train_ckpt, train_resume,
                       train_steps, train_seq, train_dsteps);
    }
    if (infer->parsed()) {
      out_dir = infer_args.out_dir;
      return cmd_infer(infer_args, infer_ckpt, infer_clip, infer_seq, infer_dsteps);
    }
    if (eval_cmd->parsed()) {
      out_dir = eval_args.out_dir;
      return cmd_eval(eval_args, eval_ckpt, eval_data, eval_sweep, eval_seq, eval_dsteps);
    }
    if (ablate_cmd->parsed()) {
      out_dir = ablate_args.out_dir;
      return cmd_ablate(ablate_args, ablate_ckpt, ablate_data, ablate_seq);
    }
  } catch (const std::exception& e) {
    write_failed_marker(out_dir, e.what());
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
