#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "orbits/camera.hpp"
#include "orbits/dynamics.hpp"
#include "orbits/estimator.hpp"

namespace orbits {

using json = nlohmann::ordered_json;

// SplitMix64 stream: the k-th derived seed is the k-th output after seeding
// the state with the master seed. Episodes consume derived seeds in order;
// a rejected draw moves on to the next one.
class SeedSplitter {
 public:
  explicit SeedSplitter(std::uint64_t master) : state_(master) {}
  std::uint64_t next();

 private:
  std::uint64_t state_;
};

struct GenerationConfig {
  SceneConfig scene;
  CameraConfig camera;
  double noise_sigma = 0.1;        // pixels
  std::size_t num_frames = 30;
  double position_range = 4.0;     // half-width of the initial box around p_g
  double velocity_range = 1.5;     // per-axis initial speed bound
  double min_separation = 1.0;     // between objects (and from p_g in 2D), all frames
  double frame_margin = 8.0;       // pixels every object must stay inside the image
  bool depth_map = false;          // render a frame-0 depth map

  void validate() const;
};

GenerationConfig default_generation(Mode mode);

struct Episode {
  std::string id;
  std::uint64_t seed = 0;
  SceneConfig config;
  Trajectory truth;
  std::vector<Observation> observations;
  std::optional<DepthMap> depth0;
};

struct Manifest {
  json data;
  std::size_t num_episodes() const;
};

struct Dataset {
  GenerationConfig generation;
  std::uint64_t master_seed = 0;
  std::size_t rejected = 0;
  std::vector<Episode> episodes;
};

// Draws one candidate episode from a derived seed; std::nullopt when it is
// rejected (close encounter, leaves the image, missing depth sample or
// degenerate geometry).
std::optional<Episode> sample_episode(const GenerationConfig& cfg, std::uint64_t seed);

Dataset generate_episodes(const GenerationConfig& cfg, std::size_t num_episodes, std::uint64_t master_seed);

// Writes manifest.json plus one binary file per episode into output_dir.
Manifest write_dataset(const Dataset& ds, const std::filesystem::path& output_dir);
Manifest generate_dataset(const GenerationConfig& cfg, std::size_t num_episodes, std::uint64_t master_seed,
                          const std::filesystem::path& output_dir);
Dataset load_dataset(const std::filesystem::path& dir);

void write_episode(std::ostream& out, const Episode& ep);
Episode read_episode(std::istream& in, const SceneConfig& config);

json to_json(const SceneConfig& c);
json to_json(const CameraConfig& c);
json to_json(const GenerationConfig& c);
SceneConfig scene_from_json(const json& j);
CameraConfig camera_from_json(const json& j);
GenerationConfig generation_from_json(const json& j);

// Re-draws observations of every episode with a new pixel noise level,
// deterministically from the episode seed and sigma. Frame-0 depth samples are
// re-read from the stored depth map.
void reobserve(Dataset& ds, double noise_sigma);

SequenceBatch to_sequence(const Episode& ep, const CameraConfig& cam);

double position_mae(std::span<const SymbolicState> predicted, std::span<const SymbolicState> truth);

struct ExperimentConfig {
  std::filesystem::path train_dataset;
  std::filesystem::path eval_dataset;
  InitMode init_mode = InitMode::ScreenOnly;
  GainStrategy strategy = GainStrategy::learned();
  // Gain applied at evaluation when it differs from the trained one.
  std::optional<GainStrategy> eval_strategy;
  std::optional<double> noise_sigma;  // re-observe both splits when set
  int burn_in = 6;
  int rollout = 24;
  TrainConfig train;
  bool train_model = true;
  std::optional<std::filesystem::path> checkpoint_in;
  std::optional<std::filesystem::path> checkpoint_out;

  void validate(std::size_t episode_length) const;
  json to_json() const;
};

struct MetricsReport {
  double position_mae = 0.0;
  std::vector<double> per_frame_mae;  // rollout frames
  std::array<double, 3> per_axis_mae{};
  double burn_in_mae = 0.0;
  double mean_gain_position = 0.0;
  double mean_gain_velocity = 0.0;
  double final_loss = 0.0;
  double runtime_seconds = 0.0;  // not persisted, see to_json
  std::string fingerprint;
  json config;

  // Stable key order; runtime is left out so identical runs serialise to
  // identical bytes.
  json to_json() const;
  static MetricsReport from_json(const json& j);
};

// Loaded datasets can be passed in to avoid re-reading them from disk.
struct LoadedData {
  const Dataset* train = nullptr;
  const Dataset* eval = nullptr;
};

MetricsReport run_experiment(const ExperimentConfig& config, LoadedData data = {});

// Evaluation of an already trained model on a dataset.
MetricsReport evaluate_model(Model& model, const GainStrategy& strategy, const Dataset& eval, int burn_in, int rollout);

struct AblationCell {
  std::string name;
  std::vector<MetricsReport> runs;  // one per seed
  double mean = 0.0;
  double spread = 0.0;  // max - min over seeds
  std::array<double, 3> mean_axis{};
};

struct AblationConfig {
  std::string suite;  // "2d-gain" or "3d-depth"
  std::filesystem::path train_dataset;
  std::filesystem::path eval_dataset;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  TrainConfig train;
  std::optional<std::filesystem::path> out_dir;  // per-cell reports and table
};

std::vector<AblationCell> run_ablation_suite(const AblationConfig& config);
std::string format_table(const std::vector<AblationCell>& cells);
AblationCell summarize(const std::string& name, std::vector<MetricsReport> runs);

// SVG of ground-truth (solid) and predicted (dashed) x-y paths, plus an x-z
// panel in 3D. `burn_in` marks where prediction switches to rollout.
void plot_trajectories(const Episode& episode, std::span<const SymbolicState> predicted, std::size_t burn_in,
                       const std::filesystem::path& output);
std::string render_svg(const Episode& episode, std::span<const SymbolicState> predicted, std::size_t burn_in);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace orbits
