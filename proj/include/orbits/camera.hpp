#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "orbits/dynamics.hpp"
#include "orbits/vec3.hpp"

namespace orbits {

// Pinhole camera looking along +z. Pixel (col, row) has its centre at the
// integer screen coordinate (col, row).
struct CameraConfig {
  Vec3 position{0.0, 0.0, -10.0};
  double focal_length = 512.0;
  int image_width = 512;
  int image_height = 512;
  double principal_x = 256.0;
  double principal_y = 256.0;
  double near_plane = 0.1;
  double object_radius = 0.5;

  void validate() const;
  double diagonal() const;
};

struct ScreenPoint {
  double u = 0.0;
  double v = 0.0;
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

// std::nullopt when the point lies on or in front of the near plane.
std::optional<Projection> project(const Vec3& world_point, const CameraConfig& cam);

inline constexpr float kDepthSentinel = 1.0e9f;

struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major

  float at(int col, int row) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

DepthMap render_depth_map(std::span<const BodyState> states, const CameraConfig& cam);

// Nearest pixel after rounding and clamping; std::nullopt on background.
std::optional<double> sample_depth(const DepthMap& map, ScreenPoint coord);

struct Observation {
  std::size_t frame_index = 0;
  std::vector<ScreenPoint> screen_coords;
  // Present only when a depth map was supplied; per object, empty when the
  // sampled pixel is background.
  std::optional<std::vector<std::optional<double>>> depth_samples;
  std::vector<bool> visibility;
};

Observation observe(std::span<const BodyState> states, const CameraConfig& cam, double noise_sigma,
                    std::mt19937_64& rng, const DepthMap* depth_map = nullptr,
                    std::size_t frame_index = 0);

// 16-byte header (u32 width, u32 height, f32 sentinel, u32 reserved) followed
// by width*height little-endian f32 values.
void write_depth_map(std::ostream& out, const DepthMap& map);
DepthMap read_depth_map(std::istream& in);

}  // namespace orbits
