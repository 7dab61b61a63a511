#include "orbits/harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "nnkit/checkpoint.hpp"
#include "orbits/binary_io.hpp"
#include "orbits/errors.hpp"

namespace orbits {

namespace bin = binary;
namespace fs = std::filesystem;

std::uint64_t SeedSplitter::next() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- configuration ------------------------------------------------------------

void GenerationConfig::validate() const {
  scene.validate();
  camera.validate();
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ValidationError("noise_sigma must be >= 0");
  if (num_frames < 1) throw ValidationError("num_frames must be >= 1");
  if (!(position_range >= 0.0) || !(velocity_range >= 0.0) || !(min_separation >= 0.0) || !(frame_margin >= 0.0))
    throw ValidationError("sampling ranges must be non-negative");
}

GenerationConfig default_generation(Mode mode) {
  GenerationConfig g;
  g.scene.mode = mode;
  if (mode == Mode::ThreeD) {
    g.camera.image_width = g.camera.image_height = 128;
    g.camera.focal_length = 96.0;
    g.camera.principal_x = g.camera.principal_y = 64.0;
    g.frame_margin = 4.0;
    g.depth_map = true;
  }
  return g;
}

json to_json(const SceneConfig& c) {
  return json{{"gravitational_constant", c.gravitational_constant},
              {"object_mass", c.object_mass},
              {"guidance_mass", c.guidance_mass},
              {"guidance_point", {c.guidance_point.x, c.guidance_point.y, c.guidance_point.z}},
              {"guidance_coefficient_3d", c.guidance_coefficient_3d},
              {"dt", c.dt},
              {"num_objects", c.num_objects},
              {"mode", c.mode == Mode::TwoD ? "2d" : "3d"},
              {"softening_epsilon", c.softening_epsilon}};
}

json to_json(const CameraConfig& c) {
  return json{{"position", {c.position.x, c.position.y, c.position.z}},
              {"focal_length", c.focal_length},
              {"image_width", c.image_width},
              {"image_height", c.image_height},
              {"principal_point", {c.principal_x, c.principal_y}},
              {"near_plane", c.near_plane},
              {"object_radius", c.object_radius}};
}

json to_json(const GenerationConfig& c) {
  return json{{"scene", to_json(c.scene)},
              {"camera", to_json(c.camera)},
              {"noise_sigma", c.noise_sigma},
              {"num_frames", c.num_frames},
              {"position_range", c.position_range},
              {"velocity_range", c.velocity_range},
              {"min_separation", c.min_separation},
              {"frame_margin", c.frame_margin},
              {"depth_map", c.depth_map}};
}

namespace {

Vec3 vec3_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

SceneConfig scene_from_json(const json& j) {
  SceneConfig c;
  c.gravitational_constant = j.at("gravitational_constant").get<double>();
  c.object_mass = j.at("object_mass").get<double>();
  c.guidance_mass = j.at("guidance_mass").get<double>();
  c.guidance_point = vec3_from(j.at("guidance_point"));
  c.guidance_coefficient_3d = j.at("guidance_coefficient_3d").get<double>();
  c.dt = j.at("dt").get<double>();
  c.num_objects = j.at("num_objects").get<std::size_t>();
  const std::string mode = j.at("mode").get<std::string>();
  if (mode != "2d" && mode != "3d") throw ValidationError("unknown mode '" + mode + "'");
  c.mode = mode == "2d" ? Mode::TwoD : Mode::ThreeD;
  c.softening_epsilon = j.at("softening_epsilon").get<double>();
  c.validate();
  return c;
}

CameraConfig camera_from_json(const json& j) {
  CameraConfig c;
  c.position = vec3_from(j.at("position"));
  c.focal_length = j.at("focal_length").get<double>();
  c.image_width = j.at("image_width").get<int>();
  c.image_height = j.at("image_height").get<int>();
  c.principal_x = j.at("principal_point").at(0).get<double>();
  c.principal_y = j.at("principal_point").at(1).get<double>();
  c.near_plane = j.at("near_plane").get<double>();
  c.object_radius = j.at("object_radius").get<double>();
  c.validate();
  return c;
}

GenerationConfig generation_from_json(const json& j) {
  GenerationConfig c;
  c.scene = scene_from_json(j.at("scene"));
  c.camera = camera_from_json(j.at("camera"));
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.num_frames = j.at("num_frames").get<std::size_t>();
  c.position_range = j.at("position_range").get<double>();
  c.velocity_range = j.at("velocity_range").get<double>();
  c.min_separation = j.at("min_separation").get<double>();
  c.frame_margin = j.at("frame_margin").get<double>();
  c.depth_map = j.at("depth_map").get<bool>();
  c.validate();
  return c;
}

// ---- generation ---------------------------------------------------------------

namespace {

std::string hex_id(std::uint64_t seed) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(seed));
  return buf;
}

bool well_separated(const Trajectory& tr, const GenerationConfig& cfg) {
  const double min_sq = cfg.min_separation * cfg.min_separation;
  for (const auto& frame : tr.frames) {
    for (std::size_t a = 0; a < frame.size(); ++a) {
      if (cfg.scene.mode == Mode::TwoD) {
        const Vec3 d = frame[a].position - cfg.scene.guidance_point;
        if (dot(d, d) < min_sq) return false;
      }
      for (std::size_t b = a + 1; b < frame.size(); ++b) {
        const Vec3 d = frame[a].position - frame[b].position;
        if (dot(d, d) < min_sq) return false;
      }
    }
  }
  return true;
}

bool stays_in_view(const Trajectory& tr, const GenerationConfig& cfg) {
  const CameraConfig& cam = cfg.camera;
  for (const auto& frame : tr.frames) {
    for (const auto& s : frame) {
      const auto p = project(s.position, cam);
      if (!p || p->depth <= cam.near_plane + cam.object_radius) return false;
      if (p->u < cfg.frame_margin || p->u > cam.image_width - 1 - cfg.frame_margin) return false;
      if (p->v < cfg.frame_margin || p->v > cam.image_height - 1 - cfg.frame_margin) return false;
    }
  }
  return true;
}

std::vector<Observation> observe_all(const Trajectory& tr, const GenerationConfig& cfg, const DepthMap* depth0,
                                     std::mt19937_64& rng) {
  std::vector<Observation> obs;
  obs.reserve(tr.frames.size());
  for (std::size_t t = 0; t < tr.frames.size(); ++t)
    obs.push_back(observe(tr.frames[t], cfg.camera, cfg.noise_sigma, rng, t == 0 ? depth0 : nullptr, t));
  return obs;
}

bool depth_complete(const Observation& o) {
  if (!o.depth_samples) return false;
  return std::all_of(o.depth_samples->begin(), o.depth_samples->end(), [](const auto& d) { return d.has_value(); });
}

}  // namespace

std::optional<Episode> sample_episode(const GenerationConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-cfg.position_range, cfg.position_range);
  std::uniform_real_distribution<double> vel(-cfg.velocity_range, cfg.velocity_range);
  const bool two_d = cfg.scene.mode == Mode::TwoD;
  std::vector<BodyState> init(cfg.scene.num_objects);
  for (auto& b : init) {
    const double px = pos(rng), py = pos(rng), pz = two_d ? 0.0 : pos(rng);
    const double vx = vel(rng), vy = vel(rng), vz = two_d ? 0.0 : vel(rng);
    b.position = cfg.scene.guidance_point + Vec3{px, py, pz};
    b.velocity = {vx, vy, vz};
  }
  Episode ep;
  try {
    ep.truth = simulate(init, cfg.scene, cfg.num_frames);
  } catch (const DegenerateGeometry&) {
    return std::nullopt;
  }
  if (!well_separated(ep.truth, cfg) || !stays_in_view(ep.truth, cfg)) return std::nullopt;
  if (cfg.depth_map) ep.depth0 = render_depth_map(ep.truth.frames.front(), cfg.camera);
  ep.observations = observe_all(ep.truth, cfg, ep.depth0 ? &*ep.depth0 : nullptr, rng);
  if (cfg.depth_map && !depth_complete(ep.observations.front())) return std::nullopt;
  ep.id = hex_id(seed);
  ep.seed = seed;
  ep.config = cfg.scene;
  return ep;
}

Dataset generate_episodes(const GenerationConfig& cfg, std::size_t num_episodes, std::uint64_t master_seed) {
  cfg.validate();
  Dataset ds;
  ds.generation = cfg;
  ds.master_seed = master_seed;
  SeedSplitter split(master_seed);
  const std::size_t max_draws = 10000 * num_episodes + 10000;
  std::size_t draws = 0;
  while (ds.episodes.size() < num_episodes) {
    if (++draws > max_draws) throw ValidationError("episode sampler rejects nearly every draw; check the configuration");
    auto ep = sample_episode(cfg, split.next());
    if (ep) ds.episodes.push_back(std::move(*ep));
    else ++ds.rejected;
  }
  spdlog::info("generated {} episodes ({} draws rejected)", ds.episodes.size(), ds.rejected);
  return ds;
}

// ---- serialization ------------------------------------------------------------

namespace {
constexpr std::uint32_t kEpisodeVersion = 1;

void write_u8(std::ostream& out, std::uint8_t v) { bin::write_le(out, v); }
std::uint8_t read_u8(std::istream& in) { return bin::read_le<std::uint8_t>(in); }
}  // namespace

void write_episode(std::ostream& out, const Episode& ep) {
  const std::size_t n = ep.truth.frames.empty() ? 0 : ep.truth.frames.front().size();
  bin::write_magic(out, "ORBE");
  bin::write_u32(out, kEpisodeVersion);
  bin::write_u32(out, static_cast<std::uint32_t>(n));
  bin::write_u32(out, static_cast<std::uint32_t>(ep.truth.frames.size()));
  bin::write_u64(out, ep.seed);
  for (const auto& frame : ep.truth.frames)
    for (const auto& s : frame)
      for (double v : {s.position.x, s.position.y, s.position.z, s.velocity.x, s.velocity.y, s.velocity.z})
        bin::write_f64(out, v);
  bin::write_u32(out, static_cast<std::uint32_t>(ep.observations.size()));
  for (const auto& o : ep.observations) {
    bin::write_u32(out, static_cast<std::uint32_t>(o.frame_index));
    write_u8(out, o.depth_samples ? 1 : 0);
    for (std::size_t j = 0; j < o.screen_coords.size(); ++j) {
      write_u8(out, o.visibility[j] ? 1 : 0);
      bin::write_f64(out, o.screen_coords[j].u);
      bin::write_f64(out, o.screen_coords[j].v);
      if (o.depth_samples) {
        const auto& d = (*o.depth_samples)[j];
        write_u8(out, d ? 1 : 0);
        bin::write_f64(out, d.value_or(0.0));
      }
    }
  }
  write_u8(out, ep.depth0 ? 1 : 0);
  if (ep.depth0) write_depth_map(out, *ep.depth0);
  if (!out) throw IoError("failed to write episode " + ep.id);
}

Episode read_episode(std::istream& in, const SceneConfig& config) {
  bin::expect_magic(in, "ORBE", "episode");
  if (bin::read_u32(in) != kEpisodeVersion) throw IoError("unsupported episode version");
  const std::uint32_t n = bin::read_u32(in), frames = bin::read_u32(in);
  if (n != config.num_objects) throw IoError("episode object count disagrees with the manifest");
  Episode ep;
  ep.seed = bin::read_u64(in);
  ep.id = hex_id(ep.seed);
  ep.config = config;
  ep.truth.config = config;
  ep.truth.frames.assign(frames, std::vector<BodyState>(n));
  for (auto& frame : ep.truth.frames)
    for (auto& s : frame) {
      double v[6];
      for (double& x : v) x = bin::read_f64(in);
      s.position = {v[0], v[1], v[2]};
      s.velocity = {v[3], v[4], v[5]};
    }
  const std::uint32_t num_obs = bin::read_u32(in);
  for (std::uint32_t t = 0; t < num_obs; ++t) {
    Observation o;
    o.frame_index = bin::read_u32(in);
    const bool has_depth = read_u8(in) != 0;
    if (has_depth) o.depth_samples.emplace();
    for (std::uint32_t j = 0; j < n; ++j) {
      o.visibility.push_back(read_u8(in) != 0);
      const double u = bin::read_f64(in), v = bin::read_f64(in);
      o.screen_coords.push_back({u, v});
      if (has_depth) {
        const bool present = read_u8(in) != 0;
        const double d = bin::read_f64(in);
        o.depth_samples->push_back(present ? std::optional<double>(d) : std::nullopt);
      }
    }
    ep.observations.push_back(std::move(o));
  }
  if (read_u8(in) != 0) ep.depth0 = read_depth_map(in);
  return ep;
}

std::size_t Manifest::num_episodes() const { return data.at("episodes").size(); }

Manifest write_dataset(const Dataset& ds, const fs::path& output_dir) {
  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec) throw IoError("cannot create " + output_dir.string() + ": " + ec.message());
  json episodes = json::array();
  for (std::size_t i = 0; i < ds.episodes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "episode_%05zu.bin", i);
    std::ofstream out(output_dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (output_dir / name).string());
    write_episode(out, ds.episodes[i]);
    episodes.push_back(json{{"id", ds.episodes[i].id}, {"seed", ds.episodes[i].seed}, {"file", name}});
  }
  Manifest m;
  m.data = json{{"format_version", 1},
                {"master_seed", ds.master_seed},
                {"seed_splitter", "splitmix64"},
                {"num_episodes", ds.episodes.size()},
                {"rejected_draws", ds.rejected},
                {"generation", to_json(ds.generation)},
                {"episodes", std::move(episodes)}};
  std::ofstream out(output_dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + output_dir.string());
  out << m.data.dump(2) << '\n';
  if (!out) throw IoError("failed writing manifest");
  return m;
}

Manifest generate_dataset(const GenerationConfig& cfg, std::size_t num_episodes, std::uint64_t master_seed,
                          const fs::path& output_dir) {
  return write_dataset(generate_episodes(cfg, num_episodes, master_seed), output_dir);
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + dir.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.generation = generation_from_json(m.at("generation"));
    ds.master_seed = m.at("master_seed").get<std::uint64_t>();
    ds.rejected = m.at("rejected_draws").get<std::size_t>();
    for (const auto& e : m.at("episodes")) {
      const fs::path file = dir / e.at("file").get<std::string>();
      std::ifstream ein(file, std::ios::binary);
      if (!ein) throw IoError("missing episode file " + file.string());
      Episode ep = read_episode(ein, ds.generation.scene);
      if (ep.id != e.at("id").get<std::string>()) throw IoError("episode id mismatch in " + file.string());
      ds.episodes.push_back(std::move(ep));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return ds;
}

void reobserve(Dataset& ds, double noise_sigma) {
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ValidationError("noise_sigma must be >= 0");
  ds.generation.noise_sigma = noise_sigma;
  for (auto& ep : ds.episodes) {
    SeedSplitter split(ep.seed ^ std::bit_cast<std::uint64_t>(noise_sigma));
    std::mt19937_64 rng(split.next());
    ep.observations = observe_all(ep.truth, ds.generation, ep.depth0 ? &*ep.depth0 : nullptr, rng);
  }
}

SequenceBatch to_sequence(const Episode& ep, const CameraConfig& cam) {
  SequenceBatch b;
  b.batch = 1;
  b.num_objects = static_cast<int>(ep.config.num_objects);
  for (std::size_t t = 0; t < ep.observations.size(); ++t) {
    b.uv.push_back(observed_uv(ep.observations[t]));
    b.visible.push_back(observed_visibility(ep.observations[t]));
  }
  if (!ep.observations.empty() && depth_complete(ep.observations.front())) {
    b.depth0.resize(1, b.num_objects);
    for (int j = 0; j < b.num_objects; ++j) b.depth0(0, j) = *(*ep.observations.front().depth_samples)[j];
  }
  for (const auto& frame : ep.truth.frames) {
    Matrix m = to_matrix(frame);
    b.gt_depth.push_back((m.row(2).array() - cam.position.z).matrix());
    b.truth.push_back(std::move(m));
  }
  return b;
}

// ---- metrics ------------------------------------------------------------------

double position_mae(std::span<const SymbolicState> predicted, std::span<const SymbolicState> truth) {
  if (predicted.size() != truth.size()) throw LengthMismatch("position_mae: sequence lengths differ");
  if (predicted.empty()) throw LengthMismatch("position_mae: empty sequences");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < predicted.size(); ++t) {
    if (predicted[t].size() != truth[t].size()) throw LengthMismatch("position_mae: object counts differ");
    for (std::size_t j = 0; j < predicted[t].size(); ++j)
      for (int c = 0; c < 3; ++c) total += std::abs(predicted[t][j].position[c] - truth[t][j].position[c]);
    count += 3 * predicted[t].size();
  }
  if (count == 0) throw LengthMismatch("position_mae: no objects");
  return total / static_cast<double>(count);
}

json MetricsReport::to_json() const {
  return json{{"position_mae", position_mae},
              {"per_frame_mae", per_frame_mae},
              {"per_axis_mae", {{"x", per_axis_mae[0]}, {"y", per_axis_mae[1]}, {"z", per_axis_mae[2]}}},
              {"burn_in_mae", burn_in_mae},
              {"gain", {{"mean_position", mean_gain_position}, {"mean_velocity", mean_gain_velocity}}},
              {"final_loss", final_loss},
              {"fingerprint", fingerprint},
              {"config", config}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  r.position_mae = j.at("position_mae").get<double>();
  r.per_frame_mae = j.at("per_frame_mae").get<std::vector<double>>();
  r.per_axis_mae = {j.at("per_axis_mae").at("x").get<double>(), j.at("per_axis_mae").at("y").get<double>(),
                    j.at("per_axis_mae").at("z").get<double>()};
  r.burn_in_mae = j.at("burn_in_mae").get<double>();
  r.mean_gain_position = j.at("gain").at("mean_position").get<double>();
  r.mean_gain_velocity = j.at("gain").at("mean_velocity").get<double>();
  r.final_loss = j.at("final_loss").get<double>();
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.config = j.at("config");
  return r;
}

void ExperimentConfig::validate(std::size_t episode_length) const {
  if (burn_in < 1 || rollout < 0) throw ValidationError("burn_in must be >= 1 and rollout >= 0");
  if (static_cast<std::size_t>(burn_in + rollout) > episode_length)
    throw ValidationError("burn_in + rollout exceeds the episode length");
  if (train_model && static_cast<std::size_t>(train.burn_in + train.unroll) > episode_length)
    throw ValidationError("training burn-in + unroll exceeds the episode length");
  if (!train_model && !checkpoint_in) throw ValidationError("evaluation without training needs a checkpoint");
}

json ExperimentConfig::to_json() const {
  return json{{"train_dataset", train_dataset.generic_string()},
              {"eval_dataset", eval_dataset.generic_string()},
              {"init_mode", to_string(init_mode)},
              {"gain", strategy.describe()},
              {"eval_gain", eval_strategy ? eval_strategy->describe() : strategy.describe()},
              {"noise_sigma", noise_sigma ? json(*noise_sigma) : json(nullptr)},
              {"burn_in", burn_in},
              {"rollout", rollout},
              {"train",
               {{"enabled", train_model},
                {"steps", train.steps},
                {"batch_size", train.batch_size},
                {"burn_in", train.burn_in},
                {"unroll", train.unroll},
                {"learning_rate", train.adam.learning_rate},
                {"max_grad_norm", train.adam.max_grad_norm},
                {"observation_loss", train.observation_loss},
                {"obs_first_frame", train.obs_first_frame},
                {"supervised", train.supervised},
                {"seed", train.seed}}}};
}

MetricsReport evaluate_model(Model& model, const GainStrategy& strategy, const Dataset& eval, int burn_in, int rollout) {
  if (eval.episodes.empty()) throw ValidationError("evaluation set is empty");
  const CameraConfig& cam = eval.generation.camera;
  const SceneConfig& scene = eval.generation.scene;
  std::vector<SequenceBatch> seqs;
  seqs.reserve(eval.episodes.size());
  for (const auto& ep : eval.episodes) seqs.push_back(to_sequence(ep, cam));
  std::vector<const SequenceBatch*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  const SequenceBatch all = stack_batches(ptrs);
  const Prediction pred = evaluate(model, strategy, scene, cam, all, burn_in, rollout);

  MetricsReport r;
  const double m = static_cast<double>(all.columns());
  for (int i = 0; i < rollout; ++i) {
    const Matrix err = (pred.rollout[i].topRows(3) - all.truth[burn_in + i].topRows(3)).cwiseAbs();
    r.per_frame_mae.push_back(err.sum() / (3.0 * m));
    for (int c = 0; c < 3; ++c) r.per_axis_mae[c] += err.row(c).sum() / m;
  }
  if (rollout > 0) {
    r.position_mae = std::accumulate(r.per_frame_mae.begin(), r.per_frame_mae.end(), 0.0) / rollout;
    for (double& a : r.per_axis_mae) a /= rollout;
  }
  double burn = 0.0;
  for (int t = 0; t < burn_in; ++t) burn += (pred.burn_in[t].topRows(3) - all.truth[t].topRows(3)).cwiseAbs().sum();
  r.burn_in_mae = burn / (3.0 * m * burn_in);
  r.mean_gain_position = pred.mean_gain.head(3).mean();
  r.mean_gain_velocity = pred.mean_gain.tail(3).mean();
  return r;
}

MetricsReport run_experiment(const ExperimentConfig& config, LoadedData data) {
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<Dataset> own_train, own_eval;
  const Dataset* train_ds = data.train;
  const Dataset* eval_ds = data.eval;
  if (config.train_model && train_ds == nullptr) train_ds = &own_train.emplace(load_dataset(config.train_dataset));
  if (eval_ds == nullptr) eval_ds = &own_eval.emplace(load_dataset(config.eval_dataset));
  if (config.noise_sigma) {
    auto noisy = [&](const Dataset* ds, std::optional<Dataset>& own) -> const Dataset* {
      if (ds == nullptr || ds->generation.noise_sigma == *config.noise_sigma) return ds;
      if (!own || &*own != ds) own = *ds;
      reobserve(*own, *config.noise_sigma);
      return &*own;
    };
    train_ds = noisy(train_ds, own_train);
    eval_ds = noisy(eval_ds, own_eval);
  }
  if (eval_ds->episodes.empty()) throw ValidationError("evaluation dataset is empty");
  config.validate(eval_ds->episodes.front().truth.frames.size());

  const SceneConfig& scene = eval_ds->generation.scene;
  const CameraConfig& cam = eval_ds->generation.camera;
  const double reference_depth = scene.guidance_point.z - cam.position.z;
  Model model(static_cast<int>(scene.num_objects), config.init_mode, reference_depth);

  MetricsReport report;
  if (config.train_model) {
    std::set<std::string> train_ids;
    for (const auto& ep : train_ds->episodes) train_ids.insert(ep.id);
    for (const auto& ep : eval_ds->episodes)
      if (train_ids.count(ep.id)) throw ValidationError("episode " + ep.id + " appears in both training and evaluation sets");
    if (to_json(train_ds->generation.scene) != to_json(scene) || to_json(train_ds->generation.camera) != to_json(cam))
      throw ValidationError("training and evaluation datasets use different scene or camera settings");
    config.validate(train_ds->episodes.front().truth.frames.size());

    std::vector<SequenceBatch> seqs;
    for (const auto& ep : train_ds->episodes) seqs.push_back(to_sequence(ep, cam));
    const TrainResult tr = train(model, seqs, config.strategy, scene, cam, config.train, [](int step, const LossBreakdown& l) {
      spdlog::info("step {:5d}  loss {:.5g}  rec {:.4g}  obs {:.4g}  ae {:.3g}", step, l.total, l.rec, l.obs, l.ae);
    });
    if (!tr.curve.empty()) report.final_loss = tr.curve.back().total;
    if (config.checkpoint_out) {
      auto params = model.parameters();
      nnkit::save_checkpoint(*config.checkpoint_out, params);
    }
  } else {
    auto params = model.parameters();
    nnkit::load_checkpoint(*config.checkpoint_in, params);
  }

  const GainStrategy& eval_gain = config.eval_strategy ? *config.eval_strategy : config.strategy;
  MetricsReport eval = evaluate_model(model, eval_gain, *eval_ds, config.burn_in, config.rollout);
  eval.final_loss = report.final_loss;
  eval.config = config.to_json();
  eval.fingerprint = fnv1a_hex(eval.config.dump());
  eval.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return eval;
}

// ---- ablations ----------------------------------------------------------------

AblationCell summarize(const std::string& name, std::vector<MetricsReport> runs) {
  AblationCell c;
  c.name = name;
  c.runs = std::move(runs);
  if (c.runs.empty()) return c;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : c.runs) {
    c.mean += r.position_mae;
    lo = std::min(lo, r.position_mae);
    hi = std::max(hi, r.position_mae);
    for (int a = 0; a < 3; ++a) c.mean_axis[a] += r.per_axis_mae[a];
  }
  const double n = static_cast<double>(c.runs.size());
  c.mean /= n;
  for (double& a : c.mean_axis) a /= n;
  c.spread = hi - lo;
  return c;
}

std::vector<AblationCell> run_ablation_suite(const AblationConfig& config) {
  struct CellSpec {
    std::string name;
    InitMode mode;
    GainStrategy gain;
    bool obs_loss;
  };
  std::vector<CellSpec> grid;
  if (config.suite == "2d-gain") {
    for (bool obs : {true, false})
      for (const GainStrategy& g : {GainStrategy::constant(1.0), GainStrategy::constant(0.5), GainStrategy::learned()})
        grid.push_back({std::string(obs ? "L_obs" : "no-L_obs") + "/" + g.describe(), InitMode::ScreenOnly, g, obs});
  } else if (config.suite == "3d-depth") {
    for (InitMode m : {InitMode::ScreenOnly, InitMode::ScreenPlusDepth, InitMode::GroundtruthZ})
      grid.push_back({to_string(m), m, GainStrategy::learned(), true});
  } else {
    throw ValidationError("unknown suite '" + config.suite + "' (2d-gain|3d-depth)");
  }
  std::vector<AblationCell> cells;
  if (config.seeds.empty()) return cells;

  const Dataset train_ds = load_dataset(config.train_dataset);
  const Dataset eval_ds = load_dataset(config.eval_dataset);
  if (config.out_dir) fs::create_directories(*config.out_dir);
  for (const CellSpec& spec : grid) {
    std::vector<MetricsReport> runs;
    for (std::uint64_t seed : config.seeds) {
      ExperimentConfig ec;
      ec.train_dataset = config.train_dataset;
      ec.eval_dataset = config.eval_dataset;
      ec.init_mode = spec.mode;
      ec.strategy = spec.gain;
      ec.train = config.train;
      ec.train.seed = seed;
      ec.train.observation_loss = spec.obs_loss;
      spdlog::info("ablation cell {} seed {}", spec.name, seed);
      runs.push_back(run_experiment(ec, {&train_ds, &eval_ds}));
      if (config.out_dir) {
        std::string file = spec.name;
        std::replace(file.begin(), file.end(), '/', '_');
        std::replace(file.begin(), file.end(), ':', '-');
        std::ofstream out(*config.out_dir / (file + "_seed" + std::to_string(seed) + ".json"), std::ios::trunc);
        out << runs.back().to_json().dump(2) << '\n';
      }
    }
    cells.push_back(summarize(spec.name, std::move(runs)));
  }
  if (config.out_dir) {
    std::ofstream table(*config.out_dir / "table.md", std::ios::trunc);
    table << format_table(cells);
  }
  return cells;
}

std::string format_table(const std::vector<AblationCell>& cells) {
  std::ostringstream os;
  os << "| cell | seeds | position MAE (mean) | spread | x | y | z |\n|---|---|---|---|---|---|---|\n";
  char buf[256];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "| %s | %zu | %.6f | %.6f | %.6f | %.6f | %.6f |\n", c.name.c_str(), c.runs.size(),
                  c.mean, c.spread, c.mean_axis[0], c.mean_axis[1], c.mean_axis[2]);
    os << buf;
  }
  return os.str();
}

// ---- plotting -----------------------------------------------------------------

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

struct Panel {
  double x0, y0, size;
  double lo_a, hi_a, lo_b, hi_b;
  double px(double a) const { return x0 + 20 + (a - lo_a) / (hi_a - lo_a) * (size - 40); }
  double py(double b) const { return y0 + size - 20 - (b - lo_b) / (hi_b - lo_b) * (size - 40); }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string render_svg(const Episode& episode, std::span<const SymbolicState> predicted, std::size_t burn_in) {
  const auto& frames = episode.truth.frames;
  const bool three_d = episode.config.mode == Mode::ThreeD;
  const int axis_b[2] = {1, 2};  // y for the x-y panel, z for the x-z panel
  const int panels = three_d ? 2 : 1;
  const double size = 400.0;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(size * panels) << "\" height=\"" << fmt(size)
     << "\" viewBox=\"0 0 " << fmt(size * panels) << ' ' << fmt(size) << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int p = 0; p < panels; ++p) {
    const int b = axis_b[p];
    double lo_a = INFINITY, hi_a = -INFINITY, lo_b = INFINITY, hi_b = -INFINITY;
    auto extend = [&](const SymbolicState& s) {
      for (const auto& o : s) {
        lo_a = std::min(lo_a, o.position.x);
        hi_a = std::max(hi_a, o.position.x);
        lo_b = std::min(lo_b, o.position[b]);
        hi_b = std::max(hi_b, o.position[b]);
      }
    };
    for (const auto& f : frames) extend(f);
    for (const auto& f : predicted) extend(f);
    if (!(hi_a > lo_a)) { lo_a -= 1; hi_a += 1; }
    if (!(hi_b > lo_b)) { lo_b -= 1; hi_b += 1; }
    const Panel pn{size * p, 0.0, size, lo_a, hi_a, lo_b, hi_b};
    os << "<g>\n<rect x=\"" << fmt(pn.x0 + 10) << "\" y=\"10\" width=\"" << fmt(size - 20) << "\" height=\""
       << fmt(size - 20) << "\" fill=\"none\" stroke=\"#999\"/>\n"
       << "<text x=\"" << fmt(pn.x0 + 16) << "\" y=\"26\" font-size=\"12\" font-family=\"sans-serif\">x-"
       << (b == 1 ? 'y' : 'z') << "</text>\n";
    const std::size_t n = frames.empty() ? 0 : frames.front().size();
    for (std::size_t j = 0; j < n; ++j) {
      const char* color = kPalette[j % (sizeof kPalette / sizeof *kPalette)];
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t t = 0; t < frames.size(); ++t)
        os << (t ? " " : "") << fmt(pn.px(frames[t][j].position.x)) << ',' << fmt(pn.py(frames[t][j].position[b]));
      os << "\"/>\n";
      if (burn_in < frames.size()) {
        const auto& s = frames[burn_in][j].position;
        os << "<circle cx=\"" << fmt(pn.px(s.x)) << "\" cy=\"" << fmt(pn.py(s[b])) << "\" r=\"3\" fill=\"" << color
           << "\"/>\n";
      }
      if (!predicted.empty() && j < predicted.front().size()) {
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\" points=\"";
        for (std::size_t t = 0; t < predicted.size(); ++t)
          os << (t ? " " : "") << fmt(pn.px(predicted[t][j].position.x)) << ','
             << fmt(pn.py(predicted[t][j].position[b]));
        os << "\"/>\n";
      }
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void plot_trajectories(const Episode& episode, std::span<const SymbolicState> predicted, std::size_t burn_in,
                       const fs::path& output) {
  if (!predicted.empty() && predicted.size() > episode.truth.frames.size())
    throw LengthMismatch("more predicted frames than ground-truth frames");
  std::ofstream out(output, std::ios::trunc);
  if (!out) throw IoError("cannot write " + output.string());
  out << render_svg(episode, predicted, burn_in);
  if (!out) throw IoError("failed writing " + output.string());
}

}  // namespace orbits
