#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nnkit/graph.hpp"
#include "nnkit/layers.hpp"
#include "orbits/camera.hpp"
#include "orbits/dynamics.hpp"

namespace orbits {

using nnkit::Graph;
using nnkit::Matrix;
using nnkit::Parameter;
using nnkit::Var;

inline constexpr int kSymbolicSize = 3;  // per variable
inline constexpr int kLatentSize = 32;   // per variable
inline constexpr int kHiddenSize = 64;

// Symbolic states travel through graphs as 6 x M matrices: rows are
// (px, py, pz, vx, vy, vz); column j holds object j % N of episode j / N.
using SymbolicState = std::vector<BodyState>;

struct LatentState {
  Matrix position;  // kLatentSize x N
  Matrix velocity;  // kLatentSize x N
};

Matrix to_matrix(std::span<const BodyState> states);
SymbolicState from_matrix(const Matrix& m, Eigen::Index first_col, Eigen::Index count);
inline SymbolicState from_matrix(const Matrix& m) { return from_matrix(m, 0, m.cols()); }

// Single-hidden-layer network: in -> 64 (ReLU) -> out.
struct Mlp {
  nnkit::Dense hidden;
  nnkit::Dense out;

  Mlp() = default;
  Mlp(const std::string& name, int in, int out_features);
  Var forward(Graph& g, Var x) { return out.forward(g, hidden.forward(g, x)); }
  std::vector<Parameter*> parameters();
  void init(std::mt19937_64& rng);
};

struct CodecParams {
  Mlp in_p{"codec/in_p", kSymbolicSize, kLatentSize};
  Mlp in_v{"codec/in_v", kSymbolicSize, kLatentSize};
  Mlp out_p{"codec/out_p", kLatentSize, kSymbolicSize};
  Mlp out_v{"codec/out_v", kLatentSize, kSymbolicSize};

  std::vector<Parameter*> parameters();
  void init(std::mt19937_64& rng);
};

enum class InitMode { ScreenOnly, ScreenPlusDepth, GroundtruthZ };

std::string to_string(InitMode mode);
InitMode parse_init_mode(const std::string& text);

// Maps per-object conditioning to a world position. The network predicts a
// residual on top of the back-projection of the observed pixel at an anchor
// depth: the fixed reference depth (ScreenOnly), the sampled depth
// (ScreenPlusDepth) or the true depth (GroundtruthZ, whose z is then
// overwritten). Inputs are normalised pixel offsets and, with depth, the
// relative depth offset. The output layer starts at zero.
struct InitNet {
  InitMode mode = InitMode::ScreenOnly;
  double reference_depth = 10.0;
  Mlp net;

  InitNet() : InitNet(InitMode::ScreenOnly) {}
  explicit InitNet(InitMode m, double ref_depth = 10.0);

  int input_width() const { return mode == InitMode::ScreenPlusDepth ? 3 : 2; }
  std::vector<Parameter*> parameters() { return net.parameters(); }
  void init(std::mt19937_64& rng);
};

// ---- graph-level building blocks (batched, see layout above) --------------
Var encode(Graph& g, CodecParams& codec, Var states);   // 6 x M -> 64 x M
Var decode(Graph& g, CodecParams& codec, Var latents);  // 64 x M -> 6 x M

// uv: 2 x M observed pixels. depth: 1 x M view-axis depth used as anchor and
// feature (sampled depth / true depth; ignored for ScreenOnly).
Var lift_positions(Graph& g, InitNet& net, const CameraConfig& cam, const Matrix& uv, const Matrix* depth);

Var loss_obs(Var s_pred, Var s_obs);
Var loss_ae(Graph& g, CodecParams& codec, Var states);
// positions: 3 x M (or the 6 x M state; only the first three rows are read).
// observed_visible: 1 x M of 0/1.
Var loss_rec(Var positions, const Matrix& observed_uv, const Matrix& observed_visible, const CameraConfig& cam);

struct LossWeights {
  double rec = 1.0;
  double ae = 1.0;
  double obs = 1.0;
};

Var loss_total(Var rec, Var ae, std::optional<Var> obs, const LossWeights& w = {});
double loss_total(double rec, double ae, double obs);

// ---- value-level API ------------------------------------------------------
LatentState encode(std::span<const BodyState> s, CodecParams& codec);
SymbolicState decode(const LatentState& z, CodecParams& codec);

// Positions from the frame-0 observation; velocities zero. gt_z holds the
// true world z per object and is required in GroundtruthZ mode.
SymbolicState init_state(const Observation& obs0, InitNet& net, const CameraConfig& cam,
                         std::span<const double> gt_z = {});

double loss_obs(std::span<const BodyState> s_pred, std::span<const BodyState> s_obs);
double loss_ae(std::span<const BodyState> s, CodecParams& codec);
double loss_rec(std::span<const BodyState> predicted, const Observation& obs, const CameraConfig& cam);

// Observation fields -> matrices (2 x N pixels, 1 x N visibility).
Matrix observed_uv(const Observation& obs);
Matrix observed_visibility(const Observation& obs);

}  // namespace orbits
