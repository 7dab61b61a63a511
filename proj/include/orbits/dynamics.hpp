#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "orbits/vec3.hpp"

namespace orbits {

enum class Mode { TwoD, ThreeD };

struct BodyState {
  Vec3 position;
  Vec3 velocity;

  friend bool operator==(const BodyState&, const BodyState&) = default;
};

// Physical constants of an Orbits scene. Defaults follow the dataset
// description; dt and the softening length are our own choices.
struct SceneConfig {
  double gravitational_constant = 7.0;
  double object_mass = 1.5;
  double guidance_mass = 2.0;
  Vec3 guidance_point{};
  double guidance_coefficient_3d = 0.6;
  double dt = 0.05;
  std::size_t num_objects = 4;
  Mode mode = Mode::TwoD;
  // Distances below this are clamped inside both inverse-square laws.
  // Zero selects strict mode, where coincident points raise DegenerateGeometry.
  double softening_epsilon = 1e-3;

  // Throws ValidationError.
  void validate() const;
};

struct Trajectory {
  std::vector<std::vector<BodyState>> frames;
  SceneConfig config;
};

std::vector<Vec3> mutual_force(std::span<const BodyState> states, const SceneConfig& config);
Vec3 guidance_force(const BodyState& state, const SceneConfig& config);

// Semi-implicit Euler: velocity first, then position with the new velocity.
std::vector<BodyState> step(std::span<const BodyState> states, const SceneConfig& config);

Trajectory simulate(std::span<const BodyState> initial, const SceneConfig& config,
                    std::size_t num_frames);

// Kinetic plus potential energy of the conservative system the forces derive
// from. In 2D mode only in-plane kinetic energy is counted.
double total_energy(std::span<const BodyState> states, const SceneConfig& config);

// Vector-Jacobian product of step(): given dL/d(next state), returns
// dL/d(state). Uses the same softening branch decisions as the forward pass.
std::vector<BodyState> step_vjp(std::span<const BodyState> states, const SceneConfig& config,
                                std::span<const BodyState> grad_next);

// Whether any softening clamp is active for the given states. Gradient
// checks use this to recognise non-differentiable points.
bool softening_active(std::span<const BodyState> states, const SceneConfig& config);

}  // namespace orbits
