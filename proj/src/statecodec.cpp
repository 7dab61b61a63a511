#include "orbits/statecodec.hpp"

#include <cmath>

#include "orbits/errors.hpp"

namespace orbits {

Matrix to_matrix(std::span<const BodyState> states) {
  Matrix m(6, static_cast<Eigen::Index>(states.size()));
  for (std::size_t j = 0; j < states.size(); ++j) {
    const auto& s = states[j];
    m.col(static_cast<Eigen::Index>(j)) << s.position.x, s.position.y, s.position.z, s.velocity.x, s.velocity.y,
        s.velocity.z;
  }
  return m;
}

SymbolicState from_matrix(const Matrix& m, Eigen::Index first_col, Eigen::Index count) {
  if (m.rows() < 3) throw ShapeMismatch("state matrix needs at least 3 rows");
  SymbolicState out(static_cast<std::size_t>(count));
  for (Eigen::Index j = 0; j < count; ++j) {
    const auto c = m.col(first_col + j);
    out[j].position = {c(0), c(1), c(2)};
    if (m.rows() >= 6) out[j].velocity = {c(3), c(4), c(5)};
  }
  return out;
}

Mlp::Mlp(const std::string& name, int in, int out_features)
    : hidden(name + "/hidden", in, kHiddenSize, nnkit::Activation::ReLU),
      out(name + "/out", kHiddenSize, out_features, nnkit::Activation::None) {}

std::vector<Parameter*> Mlp::parameters() { return {&hidden.weight, &hidden.bias, &out.weight, &out.bias}; }

void Mlp::init(std::mt19937_64& rng) {
  nnkit::init_dense(hidden, rng);
  nnkit::init_dense(out, rng);
}

std::vector<Parameter*> CodecParams::parameters() {
  std::vector<Parameter*> all;
  for (Mlp* m : {&in_p, &in_v, &out_p, &out_v})
    for (Parameter* p : m->parameters()) all.push_back(p);
  return all;
}

void CodecParams::init(std::mt19937_64& rng) {
  for (Mlp* m : {&in_p, &in_v, &out_p, &out_v}) m->init(rng);
}

std::string to_string(InitMode mode) {
  switch (mode) {
    case InitMode::ScreenOnly: return "screen-only";
    case InitMode::ScreenPlusDepth: return "screen-plus-depth";
    case InitMode::GroundtruthZ: return "groundtruth-z";
  }
  return "?";
}

InitMode parse_init_mode(const std::string& text) {
  if (text == "screen-only" || text == "screen") return InitMode::ScreenOnly;
  if (text == "screen-plus-depth" || text == "depth") return InitMode::ScreenPlusDepth;
  if (text == "groundtruth-z" || text == "gtz") return InitMode::GroundtruthZ;
  throw ValidationError("unknown init mode '" + text + "' (screen-only|screen-plus-depth|groundtruth-z)");
}

InitNet::InitNet(InitMode m, double ref_depth)
    : mode(m), reference_depth(ref_depth), net("init", m == InitMode::ScreenPlusDepth ? 3 : 2, kSymbolicSize) {}

void InitNet::init(std::mt19937_64& rng) {
  net.init(rng);
  net.out.weight.value.setZero();
}

Var encode(Graph& g, CodecParams& codec, Var states) {
  if (states.rows() != 6) throw ShapeMismatch("encode expects 6 x M states");
  return nnkit::concat_rows({codec.in_p.forward(g, nnkit::slice_rows(states, 0, 3)),
                             codec.in_v.forward(g, nnkit::slice_rows(states, 3, 3))});
}

Var decode(Graph& g, CodecParams& codec, Var latents) {
  if (latents.rows() != 2 * kLatentSize) throw ShapeMismatch("decode expects 64 x M latents");
  return nnkit::concat_rows({codec.out_p.forward(g, nnkit::slice_rows(latents, 0, kLatentSize)),
                             codec.out_v.forward(g, nnkit::slice_rows(latents, kLatentSize, kLatentSize))});
}

Var lift_positions(Graph& g, InitNet& net, const CameraConfig& cam, const Matrix& uv, const Matrix* depth) {
  const Eigen::Index m = uv.cols();
  if (uv.rows() != 2) throw ShapeMismatch("lift expects 2 x M pixel coordinates");
  if (net.mode != InitMode::ScreenOnly && (depth == nullptr || depth->cols() != m || depth->rows() != 1))
    throw ValidationError("lift in " + to_string(net.mode) + " mode needs a 1 x M depth row");

  Matrix anchor(3, m);
  Matrix features(net.input_width(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double du = uv(0, j) - cam.principal_x, dv = uv(1, j) - cam.principal_y;
    // A depth-map sample hits the sphere's near surface; the centre lies one radius further.
    double d = net.reference_depth;
    if (net.mode == InitMode::ScreenPlusDepth) d = (*depth)(0, j) + cam.object_radius;
    if (net.mode == InitMode::GroundtruthZ) d = (*depth)(0, j);
    anchor(0, j) = cam.position.x + d * du / cam.focal_length;
    anchor(1, j) = cam.position.y + d * dv / cam.focal_length;
    anchor(2, j) = cam.position.z + d;
    features(0, j) = du / (0.5 * cam.image_width);
    features(1, j) = dv / (0.5 * cam.image_height);
    if (net.mode == InitMode::ScreenPlusDepth) features(2, j) = (d - net.reference_depth) / net.reference_depth;
  }
  // Both depth modes take the measured view-axis depth as the z coordinate; the
  // residual only refines x and y. Left free, the pixel-space loss drifts z
  // along the camera rays, where depth is unobservable after frame 0.
  Matrix measured_z = Matrix::Zero(3, m);
  measured_z.row(2) = anchor.row(2);
  Var pos = nnkit::add(g.constant(std::move(anchor)), net.net.forward(g, g.constant(std::move(features))));
  if (net.mode == InitMode::ScreenOnly) return pos;

  Matrix keep = Matrix::Ones(3, m);
  keep.row(2).setZero();
  return nnkit::add(nnkit::mask(pos, keep), g.constant(std::move(measured_z)));
}

Var loss_obs(Var s_pred, Var s_obs) { return nnkit::mse(s_pred, s_obs); }

Var loss_ae(Graph& g, CodecParams& codec, Var states) { return nnkit::mse(decode(g, codec, encode(g, codec, states)), states); }

Var loss_rec(Var positions, const Matrix& observed_uv, const Matrix& observed_visible, const CameraConfig& cam) {
  const Matrix& P = positions.value();
  const Eigen::Index m = P.cols();
  if (P.rows() < 3 || observed_uv.rows() != 2 || observed_uv.cols() != m || observed_visible.cols() != m)
    throw ShapeMismatch("loss_rec: inconsistent shapes");

  const double penalty = cam.diagonal() * cam.diagonal();
  Matrix dP = Matrix::Zero(P.rows(), m);  // d(sum of per-object errors)/dP
  double total = 0.0;
  int count = 0;
  auto& sig = positions.graph->signature();
  for (Eigen::Index j = 0; j < m; ++j) {
    if (observed_visible(0, j) == 0.0) continue;
    ++count;
    const double x = P(0, j) - cam.position.x, y = P(1, j) - cam.position.y, z = P(2, j) - cam.position.z;
    const bool visible = z > cam.near_plane;
    sig.push_back(visible ? 1 : 0);
    if (!visible) {
      total += penalty;
      continue;
    }
    const double u = cam.principal_x + cam.focal_length * x / z;
    const double v = cam.principal_y + cam.focal_length * y / z;
    const double eu = u - observed_uv(0, j), ev = v - observed_uv(1, j);
    total += 0.5 * (eu * eu + ev * ev);
    dP(0, j) = eu * cam.focal_length / z;
    dP(1, j) = ev * cam.focal_length / z;
    dP(2, j) = -(eu * (u - cam.principal_x) + ev * (v - cam.principal_y)) / z;
  }
  Matrix out(1, 1);
  out(0, 0) = count > 0 ? total / count : 0.0;
  if (count > 0) dP /= count;
  const int ip = positions.id;
  return positions.graph->record(std::move(out), {ip}, [ip, dP = std::move(dP)](Graph& gr, int self) {
    gr.accumulate_expr(ip, gr.grad(self)(0, 0) * dP);
  });
}

Var loss_total(Var rec, Var ae, std::optional<Var> obs, const LossWeights& w) {
  Var total = nnkit::add(nnkit::scale(rec, w.rec), nnkit::scale(ae, w.ae));
  if (obs) total = nnkit::add(total, nnkit::scale(*obs, w.obs));
  return total;
}

double loss_total(double rec, double ae, double obs) { return rec + ae + obs; }

LatentState encode(std::span<const BodyState> s, CodecParams& codec) {
  Graph g;
  const Matrix z = encode(g, codec, g.constant(to_matrix(s))).value();
  return {z.topRows(kLatentSize), z.bottomRows(kLatentSize)};
}

SymbolicState decode(const LatentState& z, CodecParams& codec) {
  if (z.position.rows() != kLatentSize || z.velocity.rows() != kLatentSize || z.position.cols() != z.velocity.cols())
    throw ShapeMismatch("latent state blocks must be 32 x N and agree in N");
  Graph g;
  Matrix stacked(2 * kLatentSize, z.position.cols());
  stacked << z.position, z.velocity;
  return from_matrix(decode(g, codec, g.constant(std::move(stacked))).value());
}

Matrix observed_uv(const Observation& obs) {
  Matrix m(2, static_cast<Eigen::Index>(obs.screen_coords.size()));
  for (std::size_t j = 0; j < obs.screen_coords.size(); ++j) {
    m(0, static_cast<Eigen::Index>(j)) = obs.screen_coords[j].u;
    m(1, static_cast<Eigen::Index>(j)) = obs.screen_coords[j].v;
  }
  return m;
}

Matrix observed_visibility(const Observation& obs) {
  Matrix m(1, static_cast<Eigen::Index>(obs.visibility.size()));
  for (std::size_t j = 0; j < obs.visibility.size(); ++j) m(0, static_cast<Eigen::Index>(j)) = obs.visibility[j] ? 1.0 : 0.0;
  return m;
}

SymbolicState init_state(const Observation& obs0, InitNet& net, const CameraConfig& cam, std::span<const double> gt_z) {
  const std::size_t n = obs0.screen_coords.size();
  Matrix depth(1, static_cast<Eigen::Index>(n));
  if (net.mode == InitMode::ScreenPlusDepth) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!obs0.depth_samples || !(*obs0.depth_samples)[j]) throw MissingDepth(j);
      depth(0, static_cast<Eigen::Index>(j)) = *(*obs0.depth_samples)[j];
    }
  } else if (net.mode == InitMode::GroundtruthZ) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j >= gt_z.size() || !std::isfinite(gt_z[j])) throw MissingGroundtruthZ(j);
      depth(0, static_cast<Eigen::Index>(j)) = gt_z[j] - cam.position.z;
    }
  }
  Graph g;
  const Matrix pos = lift_positions(g, net, cam, observed_uv(obs0), &depth).value();
  SymbolicState s(n);
  for (std::size_t j = 0; j < n; ++j) s[j].position = {pos(0, j), pos(1, j), pos(2, j)};
  return s;
}

double loss_obs(std::span<const BodyState> s_pred, std::span<const BodyState> s_obs) {
  if (s_pred.size() != s_obs.size()) throw ShapeMismatch("loss_obs: object counts differ");
  Graph g;
  return loss_obs(g.constant(to_matrix(s_pred)), g.constant(to_matrix(s_obs))).scalar();
}

double loss_ae(std::span<const BodyState> s, CodecParams& codec) {
  Graph g;
  return loss_ae(g, codec, g.constant(to_matrix(s))).scalar();
}

double loss_rec(std::span<const BodyState> predicted, const Observation& obs, const CameraConfig& cam) {
  Graph g;
  return loss_rec(g.constant(to_matrix(predicted)), observed_uv(obs), observed_visibility(obs), cam).scalar();
}

}  // namespace orbits
