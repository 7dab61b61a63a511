#include "orbits/camera.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "orbits/binary_io.hpp"
#include "orbits/errors.hpp"

namespace orbits {

void CameraConfig::validate() const {
  if (!(focal_length > 0.0)) throw ValidationError("focal_length must be > 0");
  if (image_width <= 0 || image_height <= 0) throw ValidationError("image dimensions must be positive");
  if (!(near_plane > 0.0)) throw ValidationError("near_plane must be > 0");
  if (!(object_radius > 0.0)) throw ValidationError("object_radius must be > 0");
  if (!is_finite(position) || !std::isfinite(principal_x) || !std::isfinite(principal_y))
    throw ValidationError("camera parameters must be finite");
}

double CameraConfig::diagonal() const {
  return std::hypot(static_cast<double>(image_width), static_cast<double>(image_height));
}

std::optional<Projection> project(const Vec3& world_point, const CameraConfig& cam) {
  const Vec3 rel = world_point - cam.position;
  const double depth = rel.z;
  if (!(depth > cam.near_plane)) return std::nullopt;
  return Projection{cam.principal_x + cam.focal_length * rel.x / depth,
                    cam.principal_y + cam.focal_length * rel.y / depth, depth};
}

namespace {

// Nearest positive view-axis depth at which the ray through pixel (col,row)
// enters the sphere, or +inf.
double ray_sphere_depth(double col, double row, const Vec3& centre_rel, double radius,
                        const CameraConfig& cam) {
  const Vec3 dir{(col - cam.principal_x) / cam.focal_length, (row - cam.principal_y) / cam.focal_length, 1.0};
  const double a = dot(dir, dir);
  const double b = dot(dir, centre_rel);
  const double c = dot(centre_rel, centre_rel) - radius * radius;
  const double disc = b * b - a * c;
  if (disc < 0.0) return INFINITY;
  const double root = std::sqrt(disc);
  double t = (b - root) / a;
  if (!(t > cam.near_plane)) t = (b + root) / a;  // camera inside the sphere
  return t > cam.near_plane ? t : INFINITY;
}

struct PixelBox {
  int col0, col1, row0, row1;
};

// Conservative screen-space bound of a sphere: extreme x/z and y/z ratios
// over the corners of its axis-aligned bounding box.
PixelBox sphere_bounds(const Vec3& c, double r, const CameraConfig& cam) {
  const int w = cam.image_width, h = cam.image_height;
  if (c.z - r <= cam.near_plane) return {0, w - 1, 0, h - 1};
  double umin = INFINITY, umax = -INFINITY, vmin = INFINITY, vmax = -INFINITY;
  for (double z : {c.z - r, c.z + r}) {
    for (double x : {c.x - r, c.x + r}) {
      const double u = cam.principal_x + cam.focal_length * x / z;
      umin = std::min(umin, u);
      umax = std::max(umax, u);
    }
    for (double y : {c.y - r, c.y + r}) {
      const double v = cam.principal_y + cam.focal_length * y / z;
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
  }
  auto clamp_idx = [](double x, int n) { return static_cast<int>(std::clamp(x, -1.0, static_cast<double>(n))); };
  return {std::max(0, clamp_idx(std::floor(umin), w)), std::min(w - 1, clamp_idx(std::ceil(umax), w)),
          std::max(0, clamp_idx(std::floor(vmin), h)), std::min(h - 1, clamp_idx(std::ceil(vmax), h))};
}

}  // namespace

DepthMap render_depth_map(std::span<const BodyState> states, const CameraConfig& cam) {
  cam.validate();
  DepthMap map{cam.image_width, cam.image_height,
               std::vector<float>(static_cast<std::size_t>(cam.image_width) * cam.image_height, kDepthSentinel)};
  for (const auto& s : states) {
    const Vec3 c = s.position - cam.position;
    if (c.z + cam.object_radius <= cam.near_plane) continue;
    const PixelBox box = sphere_bounds(c, cam.object_radius, cam);
    for (int row = box.row0; row <= box.row1; ++row) {
      for (int col = box.col0; col <= box.col1; ++col) {
        const double t = ray_sphere_depth(col, row, c, cam.object_radius, cam);
        if (!std::isfinite(t)) continue;
        float& px = map.values[static_cast<std::size_t>(row) * map.width + col];
        px = std::min(px, static_cast<float>(t));
      }
    }
  }
  return map;
}

std::optional<double> sample_depth(const DepthMap& map, ScreenPoint coord) {
  if (map.width <= 0 || map.height <= 0) return std::nullopt;
  const double col = std::clamp(std::round(coord.u), 0.0, static_cast<double>(map.width - 1));
  const double row = std::clamp(std::round(coord.v), 0.0, static_cast<double>(map.height - 1));
  const float value = map.at(static_cast<int>(col), static_cast<int>(row));
  if (value >= kDepthSentinel) return std::nullopt;
  return static_cast<double>(value);
}

Observation observe(std::span<const BodyState> states, const CameraConfig& cam, double noise_sigma,
                    std::mt19937_64& rng, const DepthMap* depth_map, std::size_t frame_index) {
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0) throw ValidationError("noise_sigma must be finite and >= 0");
  Observation obs;
  obs.frame_index = frame_index;
  obs.screen_coords.reserve(states.size());
  obs.visibility.reserve(states.size());
  std::normal_distribution<double> noise(0.0, 1.0);
  for (const auto& s : states) {
    const auto proj = project(s.position, cam);
    // Draw noise for every object so the stream does not depend on visibility.
    const double nu = noise(rng), nv = noise(rng);
    if (proj) {
      obs.screen_coords.push_back({proj->u + noise_sigma * nu, proj->v + noise_sigma * nv});
      obs.visibility.push_back(true);
    } else {
      obs.screen_coords.push_back({std::nan(""), std::nan("")});
      obs.visibility.push_back(false);
    }
  }
  if (depth_map != nullptr) {
    std::vector<std::optional<double>> samples;
    samples.reserve(states.size());
    for (std::size_t i = 0; i < states.size(); ++i)
      samples.push_back(obs.visibility[i] ? sample_depth(*depth_map, obs.screen_coords[i]) : std::nullopt);
    obs.depth_samples = std::move(samples);
  }
  return obs;
}

void write_depth_map(std::ostream& out, const DepthMap& map) {
  binary::write_u32(out, static_cast<std::uint32_t>(map.width));
  binary::write_u32(out, static_cast<std::uint32_t>(map.height));
  binary::write_f32(out, kDepthSentinel);
  binary::write_u32(out, 0);
  for (float v : map.values) binary::write_f32(out, v);
  if (!out) throw IoError("failed to write depth map");
}

DepthMap read_depth_map(std::istream& in) {
  DepthMap map;
  map.width = static_cast<int>(binary::read_u32(in));
  map.height = static_cast<int>(binary::read_u32(in));
  const float sentinel = binary::read_f32(in);
  binary::read_u32(in);
  if (map.width <= 0 || map.height <= 0 || map.width > 1 << 16 || map.height > 1 << 16)
    throw IoError("implausible depth map dimensions");
  map.values.resize(static_cast<std::size_t>(map.width) * map.height);
  for (auto& v : map.values) {
    v = binary::read_f32(in);
    if (v >= sentinel) v = kDepthSentinel;
  }
  return map;
}

}  // namespace orbits
