#include "orbits/dynamics.hpp"

#include <cmath>
#include <string>

#include "orbits/errors.hpp"

namespace orbits {
namespace {

// Pull of strength k towards an attractor at offset d from the body:
// unit(d) * k / max(|d|, eps)^2.
Vec3 inverse_square(const Vec3& d, double k, double eps) {
  const double r = norm(d);
  if (r == 0.0) {
    if (eps == 0.0) throw DegenerateGeometry("coincident points with softening disabled");
    return {};
  }
  const double rs = std::max(r, eps);
  return d * (k / (r * rs * rs));
}

// d/dd of inverse_square, applied to w. The Jacobian is symmetric.
Vec3 inverse_square_jvp(const Vec3& d, double k, double eps, const Vec3& w) {
  const double r = norm(d);
  if (r == 0.0) return {};
  const double dw = dot(d, w);
  if (r >= eps) {
    const double r3 = r * r * r;
    return (w - d * (3.0 * dw / (r * r))) * (k / r3);
  }
  return (w - d * (dw / (r * r))) * (k / (eps * eps * r));
}

Vec3 total_force(std::span<const BodyState> states, std::size_t n, const std::vector<Vec3>& mutual,
                 const SceneConfig& config) {
  Vec3 f = mutual[n] + guidance_force(states[n], config);
  if (config.mode == Mode::TwoD) f.z = 0.0;
  return f;
}

}  // namespace

void SceneConfig::validate() const {
  if (!(gravitational_constant > 0.0)) throw ValidationError("gravitational constant must be > 0");
  if (!(object_mass > 0.0)) throw ValidationError("object mass must be > 0");
  if (!(guidance_mass > 0.0)) throw ValidationError("guidance mass must be > 0");
  if (!(dt > 0.0)) throw ValidationError("dt must be > 0");
  if (num_objects < 1) throw ValidationError("at least one object is required");
  if (!(softening_epsilon >= 0.0)) throw ValidationError("softening epsilon must be >= 0");
  if (!is_finite(guidance_point) || !std::isfinite(guidance_coefficient_3d))
    throw ValidationError("guidance parameters must be finite");
}

std::vector<Vec3> mutual_force(std::span<const BodyState> states, const SceneConfig& config) {
  const double k = config.gravitational_constant * config.object_mass * config.object_mass;
  std::vector<Vec3> forces(states.size());
  for (std::size_t n = 0; n < states.size(); ++n) {
    for (std::size_t i = n + 1; i < states.size(); ++i) {
      const Vec3 f = inverse_square(states[i].position - states[n].position, k,
                                    config.softening_epsilon);
      forces[n] += f;
      forces[i] -= f;
    }
  }
  return forces;
}

Vec3 guidance_force(const BodyState& state, const SceneConfig& config) {
  const Vec3 d = config.guidance_point - state.position;
  if (config.mode == Mode::ThreeD) return d * config.guidance_coefficient_3d;
  const double k = config.gravitational_constant * config.object_mass * config.guidance_mass;
  return inverse_square(d, k, config.softening_epsilon);
}

std::vector<BodyState> step(std::span<const BodyState> states, const SceneConfig& config) {
  const auto mutual = mutual_force(states, config);
  std::vector<BodyState> next(states.size());
  for (std::size_t n = 0; n < states.size(); ++n) {
    const Vec3 a = total_force(states, n, mutual, config) / config.object_mass;
    next[n].velocity = states[n].velocity + config.dt * a;
    next[n].position = states[n].position + config.dt * next[n].velocity;
  }
  return next;
}

Trajectory simulate(std::span<const BodyState> initial, const SceneConfig& config,
                    std::size_t num_frames) {
  config.validate();
  if (num_frames < 1) throw ValidationError("num_frames must be >= 1");
  if (initial.size() != config.num_objects)
    throw ValidationError("initial state has " + std::to_string(initial.size()) +
                          " objects, config expects " + std::to_string(config.num_objects));
  Trajectory traj;
  traj.config = config;
  traj.frames.reserve(num_frames);
  traj.frames.emplace_back(initial.begin(), initial.end());
  for (std::size_t t = 1; t < num_frames; ++t) {
    try {
      traj.frames.push_back(step(traj.frames.back(), config));
    } catch (const DegenerateGeometry& e) {
      throw DegenerateGeometry("frame " + std::to_string(t) + ": " + e.what());
    }
  }
  return traj;
}

double total_energy(std::span<const BodyState> states, const SceneConfig& config) {
  const double m = config.object_mass;
  const double g = config.gravitational_constant;
  double energy = 0.0;
  for (std::size_t n = 0; n < states.size(); ++n) {
    Vec3 v = states[n].velocity;
    if (config.mode == Mode::TwoD) v.z = 0.0;
    energy += 0.5 * m * dot(v, v);
    for (std::size_t i = n + 1; i < states.size(); ++i) {
      const double r = std::max(norm(states[i].position - states[n].position),
                                config.softening_epsilon);
      energy -= g * m * m / r;
    }
    const Vec3 d = config.guidance_point - states[n].position;
    if (config.mode == Mode::ThreeD) {
      energy += 0.5 * config.guidance_coefficient_3d * dot(d, d);
    } else {
      energy -= g * m * config.guidance_mass / std::max(norm(d), config.softening_epsilon);
    }
  }
  return energy;
}

std::vector<BodyState> step_vjp(std::span<const BodyState> states, const SceneConfig& config,
                                std::span<const BodyState> grad_next) {
  const std::size_t n_obj = states.size();
  if (grad_next.size() != n_obj) throw ShapeMismatch("step_vjp: gradient size mismatch");
  const double dt = config.dt;
  const double m = config.object_mass;
  const double eps = config.softening_epsilon;
  const double k_mutual = config.gravitational_constant * m * m;
  const double k_guide = config.gravitational_constant * m * config.guidance_mass;

  // dL/da for every body; a.z is identically zero in 2D mode.
  std::vector<Vec3> w(n_obj);
  for (std::size_t n = 0; n < n_obj; ++n) {
    w[n] = dt * grad_next[n].velocity + (dt * dt) * grad_next[n].position;
    if (config.mode == Mode::TwoD) w[n].z = 0.0;
  }

  std::vector<BodyState> grad(n_obj);
  for (std::size_t n = 0; n < n_obj; ++n) {
    grad[n].velocity = grad_next[n].velocity + dt * grad_next[n].position;
    Vec3 gp = grad_next[n].position;
    for (std::size_t i = 0; i < n_obj; ++i) {
      if (i == n) continue;
      const Vec3 d = states[i].position - states[n].position;
      // Body n moves the pull on i (through d_in = -d) and its own pull from i.
      gp += inverse_square_jvp(d, k_mutual, eps, w[i] - w[n]) / m;
    }
    if (config.mode == Mode::ThreeD) {
      gp -= w[n] * (config.guidance_coefficient_3d / m);
    } else {
      const Vec3 d = config.guidance_point - states[n].position;
      gp -= inverse_square_jvp(d, k_guide, eps, w[n]) / m;
    }
    grad[n].position = gp;
  }
  return grad;
}

bool softening_active(std::span<const BodyState> states, const SceneConfig& config) {
  const double eps = config.softening_epsilon;
  for (std::size_t n = 0; n < states.size(); ++n) {
    for (std::size_t i = n + 1; i < states.size(); ++i) {
      if (norm(states[i].position - states[n].position) < eps) return true;
    }
    if (config.mode == Mode::TwoD && norm(config.guidance_point - states[n].position) < eps)
      return true;
  }
  return false;
}

}  // namespace orbits
