#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nnkit/layers.hpp"
#include "nnkit/optim.hpp"
#include "orbits/camera.hpp"
#include "orbits/dynamics.hpp"
#include "orbits/statecodec.hpp"

namespace orbits {

inline constexpr int kGainHidden = 128;

// G: joined per-object [z_obs; z_pred] (N*128) -> 128 ReLU -> GRU(128) -> N*6.
struct GainNet {
  int num_objects = 0;
  nnkit::Dense input;
  nnkit::GruCell gru;
  nnkit::Dense output;

  explicit GainNet(int n = 4);
  std::vector<Parameter*> parameters();
  void init(std::mt19937_64& rng);
};

struct GainStrategy {
  enum class Kind { Constant, Learned };
  Kind kind = Kind::Learned;
  double k = 0.0;

  static GainStrategy constant(double k);
  static GainStrategy learned() { return {}; }
  bool is_learned() const { return kind == Kind::Learned; }
  std::string describe() const;  // "constant:<k>" or "learned"
};

GainStrategy parse_gain(const std::string& text);

// Every trainable piece of the estimator. Parameter names carry the
// "codec/", "init/" and "gain/" prefixes used in checkpoints.
struct Model {
  CodecParams codec;
  InitNet init;
  GainNet gain;

  Model(int num_objects, InitMode mode, double reference_depth = 10.0);
  std::vector<Parameter*> parameters();
  void initialize(std::uint64_t seed);
};

struct EstimatorState {
  SymbolicState current_symbolic;
  LatentState current_latent;
  Eigen::VectorXd gru_hidden;
  std::size_t frame_index = 0;
};

struct FrameRecord {
  std::size_t frame_index = 0;
  std::optional<SymbolicState> s_pred;  // absent at frame 0
  SymbolicState s_obs;
  std::optional<Matrix> gain;           // 6 x N, absent at frame 0
};

// ---- value-level operations ------------------------------------------------
SymbolicState predict(const EstimatorState& state, const SceneConfig& config);

struct GainResult {
  Matrix k;  // 6 x N
  Eigen::VectorXd hidden;
};
GainResult compute_gain(const GainStrategy& strategy, GainNet* net, const LatentState& z_obs,
                        const LatentState& z_pred, const Eigen::VectorXd& hidden);

SymbolicState fuse(std::span<const BodyState> s_pred, std::span<const BodyState> s_obs, const Matrix& k);

struct LiftContext {
  const CameraConfig* camera = nullptr;
  const SceneConfig* scene = nullptr;
  std::span<const double> gt_z;                  // GroundtruthZ only
  const SymbolicState* s_pred = nullptr;         // depth proxy for frames > 0
};
SymbolicState lift_observation(const Observation& obs, InitNet& init, const LiftContext& ctx,
                               const EstimatorState* prev_state);

struct BurnInResult {
  EstimatorState state;
  std::vector<FrameRecord> records;
};
// gt_z: per frame, per object true world z (GroundtruthZ mode only).
BurnInResult burn_in(std::span<const Observation> observations, const GainStrategy& strategy, Model& model,
                     const SceneConfig& config, const CameraConfig& cam,
                     std::span<const std::vector<double>> gt_z = {});

std::vector<SymbolicState> rollout(const EstimatorState& state, std::size_t m, const SceneConfig& config);

// ---- batched graph machinery ------------------------------------------------
// Observation channel of B episodes x N objects laid out column-wise
// (column b*N + n).
struct SequenceBatch {
  int batch = 0;
  int num_objects = 0;
  std::vector<Matrix> uv;        // per frame, 2 x M
  std::vector<Matrix> visible;   // per frame, 1 x M of 0/1
  Matrix depth0;                 // 1 x M frame-0 depth samples, empty if none
  std::vector<Matrix> gt_depth;  // per frame, 1 x M true view depth, empty if none
  std::vector<Matrix> truth;     // per frame, 6 x M ground truth, empty if none

  int columns() const { return batch * num_objects; }
  int frames() const { return static_cast<int>(uv.size()); }
};

SequenceBatch stack_batches(std::span<const SequenceBatch* const> parts);

// One dynamics step over every episode in a 6 x M state; gradients flow
// through the integrator.
Var dynamics_step(Var states, const SceneConfig& config, int num_objects);

struct Unroll {
  std::vector<Var> fused;      // burn-in frames 0..n-1
  std::vector<Var> predicted;  // index t >= 1 valid; [0] is a copy of fused[0]
  std::vector<Var> observed;   // s_obs per burn-in frame
  std::vector<Var> gains;      // index t >= 1 valid
  std::vector<Var> rollout;    // frames n..n+m-1
  Var hidden;                  // gain-network recurrent state after burn-in
};

Unroll unroll(Graph& g, Model& model, const GainStrategy& strategy, const SceneConfig& config,
              const CameraConfig& cam, const SequenceBatch& batch, int burn_in_frames, int rollout_frames);

struct TrainConfig {
  int steps = 5000;
  int batch_size = 16;
  int burn_in = 6;
  int unroll = 6;
  nnkit::AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 10.0};
  LossWeights weights;
  bool observation_loss = true;
  // First burn-in frame scored by L_obs. Frame 1's prediction carries the
  // zero initial velocity, so aligning to it rewards suppressed motion.
  int obs_first_frame = 2;
  bool supervised = false;  // adds MSE to ground truth over burn-in frames
  std::uint64_t seed = 0;
  int log_every = 500;
};

struct LossBreakdown {
  double total = 0.0;
  double rec = 0.0;
  double ae = 0.0;
  double obs = 0.0;
  double sup = 0.0;
};

struct TrainResult {
  std::vector<LossBreakdown> curve;  // one entry per step
};

LossBreakdown training_loss(Graph& g, Model& model, const GainStrategy& strategy, const SceneConfig& config,
                            const CameraConfig& cam, const SequenceBatch& batch, const TrainConfig& tc,
                            Var* total_out);

// Initialises the model from tc.seed and optimises it on `episodes`.
TrainResult train(Model& model, std::span<const SequenceBatch> episodes, const GainStrategy& strategy,
                  const SceneConfig& config, const CameraConfig& cam, const TrainConfig& tc,
                  const std::function<void(int, const LossBreakdown&)>& on_log = {});

struct Prediction {
  std::vector<Matrix> burn_in;    // fused 6 x M per burn-in frame
  std::vector<Matrix> rollout;    // 6 x M per rollout frame
  Eigen::VectorXd mean_gain;      // 6 entries, averaged over fused frames 1..n-1
};

Prediction evaluate(Model& model, const GainStrategy& strategy, const SceneConfig& config, const CameraConfig& cam,
                    const SequenceBatch& batch, int burn_in_frames, int rollout_frames);

}  // namespace orbits
