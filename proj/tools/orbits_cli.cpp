// Command-line front end: generate | train | eval | ablate | plot.
// Exit codes: 0 success, 1 validation error, 2 runtime failure.
// Log verbosity follows SPDLOG_LEVEL (e.g. SPDLOG_LEVEL=debug).
#include <spdlog/cfg/env.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "nnkit/checkpoint.hpp"
#include "orbits/errors.hpp"
#include "orbits/harness.hpp"

namespace fs = std::filesystem;
using namespace orbits;

namespace {

Mode parse_mode(const std::string& s) {
  if (s == "2d") return Mode::TwoD;
  if (s == "3d") return Mode::ThreeD;
  throw ValidationError("--mode must be 2d or 3d");
}

double reference_depth(const Dataset& ds) {
  return ds.generation.scene.guidance_point.z - ds.generation.camera.position.z;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

struct TrainArgs {
  std::string dataset, init_mode = "screen-only", gain = "learned", checkpoint_out;
  int steps = 5000, batch = 16;
  std::uint64_t seed = 0;
  std::optional<double> noise_sigma;
  bool no_obs_loss = false, supervised = false;
  int obs_first_frame = 2;
};

int cmd_train(const TrainArgs& a) {
  Dataset ds = load_dataset(a.dataset);
  if (a.noise_sigma) reobserve(ds, *a.noise_sigma);
  if (ds.episodes.empty()) throw ValidationError("training dataset is empty");
  TrainConfig tc;
  tc.steps = a.steps;
  tc.batch_size = a.batch;
  tc.seed = a.seed;
  tc.observation_loss = !a.no_obs_loss;
  tc.obs_first_frame = a.obs_first_frame;
  tc.supervised = a.supervised;
  if (tc.steps < 0 || tc.batch_size < 1) throw ValidationError("--steps must be >= 0 and --batch >= 1");
  if (static_cast<std::size_t>(tc.burn_in + tc.unroll) > ds.episodes.front().truth.frames.size())
    throw ValidationError("episodes are shorter than burn-in + unroll");
  const auto& cam = ds.generation.camera;
  std::vector<SequenceBatch> seqs;
  for (const auto& ep : ds.episodes) seqs.push_back(to_sequence(ep, cam));
  Model model(static_cast<int>(ds.generation.scene.num_objects), parse_init_mode(a.init_mode), reference_depth(ds));
  const TrainResult r = train(model, seqs, parse_gain(a.gain), ds.generation.scene, cam, tc,
                              [](int step, const LossBreakdown& l) {
                                spdlog::info("step {:5d}  loss {:.5g}  rec {:.4g}  obs {:.4g}  ae {:.3g}", step,
                                             l.total, l.rec, l.obs, l.ae);
                              });
  auto params = model.parameters();
  if (fs::path(a.checkpoint_out).has_parent_path()) fs::create_directories(fs::path(a.checkpoint_out).parent_path());
  nnkit::save_checkpoint(a.checkpoint_out, params);
  if (!r.curve.empty()) spdlog::info("final loss {:.6g}", r.curve.back().total);
  std::cout << "checkpoint written to " << a.checkpoint_out << '\n';
  return 0;
}

struct EvalArgs {
  std::string dataset, checkpoint, report_out, init_mode = "screen-only", gain = "learned";
  int burn_in = 6, rollout = 24;
  std::optional<double> noise_sigma;
};

int cmd_eval(const EvalArgs& a) {
  ExperimentConfig cfg;
  cfg.eval_dataset = a.dataset;
  cfg.init_mode = parse_init_mode(a.init_mode);
  cfg.strategy = parse_gain(a.gain);
  cfg.burn_in = a.burn_in;
  cfg.rollout = a.rollout;
  cfg.noise_sigma = a.noise_sigma;
  cfg.train_model = false;
  cfg.checkpoint_in = a.checkpoint;
  const MetricsReport r = run_experiment(cfg);
  const std::string text = r.to_json().dump(2) + "\n";
  if (a.report_out.empty()) std::cout << text;
  else write_text(a.report_out, text);
  spdlog::info("position MAE {:.6f} ({:.2f} s)", r.position_mae, r.runtime_seconds);
  return 0;
}

struct PlotArgs {
  std::string episode, checkpoint, out, init_mode = "screen-only", gain = "learned";
  int burn_in = 6;
};

int cmd_plot(const PlotArgs& a) {
  const fs::path ep_path(a.episode);
  const fs::path dir = ep_path.has_parent_path() ? ep_path.parent_path() : fs::path(".");
  std::ifstream min(dir / "manifest.json");
  if (!min) throw IoError("episode directory has no manifest.json: " + dir.string());
  const GenerationConfig gen = generation_from_json(json::parse(min).at("generation"));
  std::ifstream ein(ep_path, std::ios::binary);
  if (!ein) throw IoError("cannot open episode " + ep_path.string());
  const Episode ep = read_episode(ein, gen.scene);

  std::vector<SymbolicState> predicted;
  if (!a.checkpoint.empty()) {
    const int frames = static_cast<int>(ep.truth.frames.size());
    if (a.burn_in < 1 || a.burn_in > frames) throw ValidationError("--burn-in out of range");
    Model model(static_cast<int>(gen.scene.num_objects), parse_init_mode(a.init_mode),
                gen.scene.guidance_point.z - gen.camera.position.z);
    auto params = model.parameters();
    nnkit::load_checkpoint(a.checkpoint, params);
    const Prediction p =
        evaluate(model, parse_gain(a.gain), gen.scene, gen.camera, to_sequence(ep, gen.camera), a.burn_in, frames - a.burn_in);
    for (const auto& m : p.burn_in) predicted.push_back(from_matrix(m));
    for (const auto& m : p.rollout) predicted.push_back(from_matrix(m));
  }
  plot_trajectories(ep, predicted, static_cast<std::size_t>(a.burn_in), a.out);
  std::cout << "plot written to " << a.out << '\n';
  return 0;
}

struct AblateArgs {
  std::string suite, out_dir, train_dataset, eval_dataset;
  int steps = 5000;
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

int cmd_ablate(const AblateArgs& a) {
  AblationConfig cfg;
  cfg.suite = a.suite;
  cfg.train_dataset = a.train_dataset;
  cfg.eval_dataset = a.eval_dataset;
  cfg.seeds = a.seeds;
  cfg.train.steps = a.steps;
  cfg.out_dir = fs::path(a.out_dir);
  const auto cells = run_ablation_suite(cfg);
  const std::string table = format_table(cells);
  write_text(fs::path(a.out_dir) / "table.md", table);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::cfg::load_env_levels();
  CLI::App app{"Orbits state estimation: dataset generation, training, evaluation and ablations"};
  app.require_subcommand(1);

  std::string mode = "2d", out;
  std::size_t episodes = 500;
  std::uint64_t seed = 0;
  std::optional<double> gen_sigma;
  auto* gen = app.add_subcommand("generate", "Simulate and observe a dataset of episodes");
  gen->add_option("--mode", mode, "2d or 3d")->check(CLI::IsMember({"2d", "3d"}));
  gen->add_option("--episodes", episodes, "number of episodes");
  gen->add_option("--seed", seed, "master seed");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--noise-sigma", gen_sigma, "pixel noise standard deviation");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train an estimator on a dataset");
  tr->add_option("--dataset", ta.dataset)->required();
  tr->add_option("--init-mode", ta.init_mode, "screen-only | screen-plus-depth | groundtruth-z");
  tr->add_option("--gain", ta.gain, "learned | constant:<k>");
  tr->add_option("--steps", ta.steps);
  tr->add_option("--batch", ta.batch);
  tr->add_option("--seed", ta.seed);
  tr->add_option("--noise-sigma", ta.noise_sigma, "re-observe the dataset at this noise level");
  tr->add_flag("--no-obs-loss", ta.no_obs_loss, "drop the observation alignment term");
  tr->add_option("--obs-first-frame", ta.obs_first_frame, "first burn-in frame scored by the alignment term");
  tr->add_flag("--supervised", ta.supervised, "add MSE to ground-truth states during burn-in");
  tr->add_option("--checkpoint-out", ta.checkpoint_out)->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (burn-in then rollout)");
  ev->add_option("--dataset", ea.dataset)->required();
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--burn-in", ea.burn_in);
  ev->add_option("--rollout", ea.rollout);
  ev->add_option("--report-out", ea.report_out, "defaults to stdout");
  ev->add_option("--init-mode", ea.init_mode);
  ev->add_option("--gain", ea.gain);
  ev->add_option("--noise-sigma", ea.noise_sigma);

  AblateArgs aa;
  auto* ab = app.add_subcommand("ablate", "Run an ablation grid over three seeds");
  ab->add_option("--suite", aa.suite, "2d-gain | 3d-depth")->required();
  ab->add_option("--out-dir", aa.out_dir)->required();
  ab->add_option("--train-dataset", aa.train_dataset)->required();
  ab->add_option("--eval-dataset", aa.eval_dataset)->required();
  ab->add_option("--steps", aa.steps);
  ab->add_option("--seeds", aa.seeds);

  PlotArgs pa;
  auto* pl = app.add_subcommand("plot", "Render ground-truth and predicted paths to SVG");
  pl->add_option("--episode", pa.episode, "episode .bin file inside a dataset directory")->required();
  pl->add_option("--checkpoint", pa.checkpoint, "omit for a ground-truth-only plot");
  pl->add_option("--init-mode", pa.init_mode);
  pl->add_option("--gain", pa.gain);
  pl->add_option("--burn-in", pa.burn_in);
  pl->add_option("--out", pa.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) {
      GenerationConfig cfg = default_generation(parse_mode(mode));
      if (gen_sigma) cfg.noise_sigma = *gen_sigma;
      const Manifest m = generate_dataset(cfg, episodes, seed, out);
      std::cout << m.num_episodes() << " episodes written to " << out << '\n';
      return 0;
    }
    if (*tr) return cmd_train(ta);
    if (*ev) return cmd_eval(ea);
    if (*ab) return cmd_ablate(aa);
    if (*pl) return cmd_plot(pa);
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
