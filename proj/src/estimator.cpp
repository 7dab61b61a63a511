#include "orbits/estimator.hpp"

#include <cmath>
#include <sstream>

#include "orbits/errors.hpp"

namespace orbits {

using nnkit::Graph;

GainNet::GainNet(int n)
    : num_objects(n),
      input("gain/input", n * 4 * kLatentSize, kGainHidden, nnkit::Activation::ReLU),
      gru("gain/gru", kGainHidden, kGainHidden),
      output("gain/output", kGainHidden, n * 6, nnkit::Activation::None) {}

std::vector<Parameter*> GainNet::parameters() {
  std::vector<Parameter*> all = input.parameters();
  for (Parameter* p : gru.parameters()) all.push_back(p);
  for (Parameter* p : output.parameters()) all.push_back(p);
  return all;
}

void GainNet::init(std::mt19937_64& rng) {
  nnkit::init_dense(input, rng);
  nnkit::init_gru(gru, rng);
  nnkit::init_dense(output, rng);
}

GainStrategy GainStrategy::constant(double k) {
  if (!(k >= 0.0 && k <= 1.0)) throw ValidationError("constant gain must lie in [0, 1]");
  return {Kind::Constant, k};
}

std::string GainStrategy::describe() const {
  if (is_learned()) return "learned";
  std::ostringstream os;
  os << "constant:" << k;
  return os.str();
}

GainStrategy parse_gain(const std::string& text) {
  if (text == "learned") return GainStrategy::learned();
  if (text.rfind("constant:", 0) == 0) {
    const std::string num = text.substr(9);
    std::size_t used = 0;
    double k = 0.0;
    try {
      k = std::stod(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != num.size()) throw ValidationError("bad gain value '" + num + "'");
    return GainStrategy::constant(k);
  }
  throw ValidationError("unknown gain strategy '" + text + "' (constant:<k>|learned)");
}

Model::Model(int num_objects, InitMode mode, double reference_depth)
    : init(mode, reference_depth), gain(num_objects) {}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> all = codec.parameters();
  for (Parameter* p : init.parameters()) all.push_back(p);
  for (Parameter* p : gain.parameters()) all.push_back(p);
  return all;
}

void Model::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  codec.init(rng);
  init.init(rng);
  gain.init(rng);
}

// ---- batched graph ---------------------------------------------------------

SequenceBatch stack_batches(std::span<const SequenceBatch* const> parts) {
  SequenceBatch out;
  if (parts.empty()) return out;
  const SequenceBatch& first = *parts.front();
  out.num_objects = first.num_objects;
  const int frames = first.frames();
  for (const SequenceBatch* p : parts) {
    if (p->num_objects != out.num_objects || p->frames() != frames)
      throw ShapeMismatch("cannot stack sequences of different shapes");
    out.batch += p->batch;
  }
  const Eigen::Index m = out.columns();
  auto join = [&](auto member, Eigen::Index rows) {
    Matrix joined(rows, m);
    Eigen::Index c = 0;
    for (const SequenceBatch* p : parts) {
      const Matrix& src = member(*p);
      joined.middleCols(c, src.cols()) = src;
      c += src.cols();
    }
    return joined;
  };
  for (int t = 0; t < frames; ++t) {
    out.uv.push_back(join([t](const SequenceBatch& s) -> const Matrix& { return s.uv[t]; }, 2));
    out.visible.push_back(join([t](const SequenceBatch& s) -> const Matrix& { return s.visible[t]; }, 1));
  }
  bool all_depth = true, all_gt = true, all_truth = true;
  for (const SequenceBatch* p : parts) {
    all_depth = all_depth && p->depth0.size() > 0;
    all_gt = all_gt && static_cast<int>(p->gt_depth.size()) == frames;
    all_truth = all_truth && static_cast<int>(p->truth.size()) == frames;
  }
  if (all_depth) out.depth0 = join([](const SequenceBatch& s) -> const Matrix& { return s.depth0; }, 1);
  for (int t = 0; all_gt && t < frames; ++t)
    out.gt_depth.push_back(join([t](const SequenceBatch& s) -> const Matrix& { return s.gt_depth[t]; }, 1));
  for (int t = 0; all_truth && t < frames; ++t)
    out.truth.push_back(join([t](const SequenceBatch& s) -> const Matrix& { return s.truth[t]; }, 6));
  return out;
}

Var dynamics_step(Var states, const SceneConfig& config, int num_objects) {
  const Matrix& S = states.value();
  if (S.rows() != 6 || num_objects <= 0 || S.cols() % num_objects != 0)
    throw ShapeMismatch("dynamics_step expects 6 x (B*N) states");
  const Eigen::Index episodes = S.cols() / num_objects;
  Matrix next(6, S.cols());
  auto& sig = states.graph->signature();
  for (Eigen::Index b = 0; b < episodes; ++b) {
    const SymbolicState cur = from_matrix(S, b * num_objects, num_objects);
    const std::vector<BodyState> nxt = step(cur, config);
    next.middleCols(b * num_objects, num_objects) = to_matrix(nxt);
    sig.push_back(softening_active(cur, config) ? 1 : 0);
  }
  const int is = states.id;
  return states.graph->record(std::move(next), {is}, [is, config, num_objects, episodes](Graph& gr, int self) {
    const Matrix& S = gr.value(is);
    const Matrix& G = gr.grad(self);
    Matrix out(6, S.cols());
    for (Eigen::Index b = 0; b < episodes; ++b) {
      const SymbolicState cur = from_matrix(S, b * num_objects, num_objects);
      const SymbolicState gnext = from_matrix(G, b * num_objects, num_objects);
      out.middleCols(b * num_objects, num_objects) = to_matrix(step_vjp(cur, config, gnext));
    }
    gr.accumulate(is, out);
  });
}

namespace {

// Invisible observations carry NaN pixels; lift them at the principal point
// and let the caller substitute the prediction.
Matrix sanitized_uv(const Matrix& uv, const Matrix& visible, const CameraConfig& cam) {
  Matrix out = uv;
  for (Eigen::Index j = 0; j < uv.cols(); ++j)
    if (visible(0, j) == 0.0 || !std::isfinite(uv(0, j)) || !std::isfinite(uv(1, j))) {
      out(0, j) = cam.principal_x;
      out(1, j) = cam.principal_y;
    }
  return out;
}

Var learned_gain(Graph& g, GainNet& net, Var z_obs, Var z_pred, Var& hidden, int batch) {
  const int n = net.num_objects;
  Var joined = nnkit::reshape(nnkit::concat_rows({z_obs, z_pred}), 4 * kLatentSize * n, batch);
  Var h = net.gru.step(g, net.input.forward(g, joined), hidden);
  hidden = h;
  return nnkit::sigmoid(nnkit::reshape(net.output.forward(g, h), 6, static_cast<Eigen::Index>(batch) * n));
}

}  // namespace

Unroll unroll(Graph& g, Model& model, const GainStrategy& strategy, const SceneConfig& config,
              const CameraConfig& cam, const SequenceBatch& batch, int burn_in_frames, int rollout_frames) {
  if (burn_in_frames < 1) throw ValidationError("burn-in needs at least one frame");
  if (rollout_frames < 0 || burn_in_frames > batch.frames()) throw ValidationError("sequence shorter than burn-in");
  if (strategy.is_learned() && model.gain.num_objects != batch.num_objects)
    throw ShapeMismatch("gain network built for a different object count");
  const int m = batch.columns();
  const InitMode mode = model.init.mode;
  if (mode == InitMode::ScreenPlusDepth && batch.depth0.cols() != m)
    throw ValidationError("screen-plus-depth lifting needs frame-0 depth samples");
  if (mode == InitMode::GroundtruthZ && static_cast<int>(batch.gt_depth.size()) < burn_in_frames)
    throw ValidationError("groundtruth-z lifting needs per-frame true depth");

  Unroll u;
  Var hidden = g.constant(Matrix::Zero(kGainHidden, batch.batch));
  for (int t = 0; t < burn_in_frames; ++t) {
    const Matrix& vis = batch.visible[t];
    const Matrix uv = sanitized_uv(batch.uv[t], vis, cam);
    std::optional<Var> s_pred;
    Matrix depth;
    if (t > 0) s_pred = dynamics_step(u.fused.back(), config, batch.num_objects);
    if (mode == InitMode::ScreenPlusDepth) {
      if (t == 0) {
        depth = batch.depth0;
      } else {  // no depth map after frame 0: use the predicted surface depth
        depth = (s_pred->value().row(2).array() - cam.position.z - cam.object_radius).matrix();
      }
    } else if (mode == InitMode::GroundtruthZ) {
      depth = batch.gt_depth[t];
    }
    Var pos = lift_positions(g, model.init, cam, uv, depth.size() ? &depth : nullptr);

    Var s_obs;
    if (t == 0) {
      s_obs = nnkit::concat_rows({pos, g.constant(Matrix::Zero(3, m))});
    } else {
      if (vis.minCoeff() == 0.0) {  // unobserved objects fall back to the prediction
        Matrix keep(3, m);
        for (int r = 0; r < 3; ++r) keep.row(r) = vis;
        pos = nnkit::add(nnkit::mask(pos, keep),
                         nnkit::mask(nnkit::slice_rows(*s_pred, 0, 3), (1.0 - keep.array()).matrix()));
      }
      Var prev_pos = nnkit::slice_rows(u.fused.back(), 0, 3);
      Var vel = nnkit::scale(nnkit::sub(pos, prev_pos), 1.0 / config.dt);
      s_obs = nnkit::concat_rows({pos, vel});
    }
    u.observed.push_back(s_obs);

    if (t == 0) {
      u.fused.push_back(s_obs);
      u.predicted.push_back(s_obs);
      u.gains.push_back(g.constant(Matrix::Ones(6, m)));
      continue;
    }
    Var k = strategy.is_learned()
                ? learned_gain(g, model.gain, encode(g, model.codec, s_obs), encode(g, model.codec, *s_pred), hidden,
                               batch.batch)
                : g.constant(Matrix::Constant(6, m, strategy.k));
    u.predicted.push_back(*s_pred);
    u.gains.push_back(k);
    // (1 - K) s_pred + K s_obs: exact at K = 0 and K = 1.
    Var keep_pred = nnkit::sub(g.constant(Matrix::Ones(6, m)), k);
    u.fused.push_back(nnkit::add(nnkit::mul(keep_pred, *s_pred), nnkit::mul(k, s_obs)));
  }
  u.hidden = hidden;
  Var s = u.fused.back();
  for (int t = 0; t < rollout_frames; ++t) {
    s = dynamics_step(s, config, batch.num_objects);
    u.rollout.push_back(s);
  }
  return u;
}

LossBreakdown training_loss(Graph& g, Model& model, const GainStrategy& strategy, const SceneConfig& config,
                            const CameraConfig& cam, const SequenceBatch& batch, const TrainConfig& tc,
                            Var* total_out) {
  if (batch.frames() < tc.burn_in + tc.unroll) throw ValidationError("episodes shorter than burn-in + unroll");
  if (tc.supervised && static_cast<int>(batch.truth.size()) < tc.burn_in)
    throw ValidationError("supervised training needs ground truth");
  const Unroll u = unroll(g, model, strategy, config, cam, batch, tc.burn_in, tc.unroll);

  std::vector<Var> rec_terms, ae_terms, obs_terms, sup_terms;
  for (int t = 0; t < tc.burn_in; ++t) {
    rec_terms.push_back(loss_rec(u.fused[t], batch.uv[t], batch.visible[t], cam));
    ae_terms.push_back(loss_ae(g, model.codec, u.fused[t]));
    if (t >= std::max(1, tc.obs_first_frame)) obs_terms.push_back(loss_obs(u.predicted[t], u.observed[t]));
    if (tc.supervised) sup_terms.push_back(nnkit::mse(u.fused[t], g.constant(batch.truth[t])));
  }
  for (int t = 0; t < tc.unroll; ++t)
    rec_terms.push_back(loss_rec(u.rollout[t], batch.uv[tc.burn_in + t], batch.visible[tc.burn_in + t], cam));

  auto average = [&](const std::vector<Var>& terms) {
    Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = nnkit::add(acc, terms[i]);
    return nnkit::scale(acc, 1.0 / static_cast<double>(terms.size()));
  };
  Var rec = average(rec_terms);
  Var ae = average(ae_terms);
  std::optional<Var> obs;
  if (!obs_terms.empty()) obs = average(obs_terms);

  LossBreakdown lb;
  lb.rec = rec.scalar();
  lb.ae = ae.scalar();
  lb.obs = obs ? obs->scalar() : 0.0;
  Var total = loss_total(rec, ae, tc.observation_loss ? obs : std::nullopt, tc.weights);
  if (tc.supervised) {
    Var sup = average(sup_terms);
    lb.sup = sup.scalar();
    total = nnkit::add(total, sup);
  }
  lb.total = total.scalar();
  if (total_out) *total_out = total;
  return lb;
}

TrainResult train(Model& model, std::span<const SequenceBatch> episodes, const GainStrategy& strategy,
                  const SceneConfig& config, const CameraConfig& cam, const TrainConfig& tc,
                  const std::function<void(int, const LossBreakdown&)>& on_log) {
  if (episodes.empty()) throw ValidationError("training set is empty");
  if (tc.steps < 0 || tc.batch_size < 1) throw ValidationError("steps must be >= 0 and batch size >= 1");
  model.initialize(tc.seed);
  std::vector<Parameter*> params = model.parameters();
  if (!strategy.is_learned()) params.resize(params.size() - model.gain.parameters().size());
  nnkit::AdamState opt = nnkit::make_adam(tc.adam, params);

  std::mt19937_64 rng(tc.seed ^ 0x5DEECE66DULL);
  std::uniform_int_distribution<std::size_t> pick(0, episodes.size() - 1);
  TrainResult result;
  result.curve.reserve(static_cast<std::size_t>(tc.steps));
  std::vector<const SequenceBatch*> chosen(static_cast<std::size_t>(tc.batch_size));
  for (int step = 0; step < tc.steps; ++step) {
    for (auto& c : chosen) c = &episodes[pick(rng)];
    const SequenceBatch batch = stack_batches(chosen);
    Graph g;
    Var total;
    const LossBreakdown lb = training_loss(g, model, strategy, config, cam, batch, tc, &total);
    if (!std::isfinite(lb.total)) throw NonFiniteLoss(static_cast<std::size_t>(step), "total loss");
    nnkit::zero_grads(params);
    g.backward(total);
    nnkit::adam_step(opt, params);
    result.curve.push_back(lb);
    if (on_log && tc.log_every > 0 && (step % tc.log_every == 0 || step + 1 == tc.steps)) on_log(step, lb);
  }
  return result;
}

Prediction evaluate(Model& model, const GainStrategy& strategy, const SceneConfig& config, const CameraConfig& cam,
                    const SequenceBatch& batch, int burn_in_frames, int rollout_frames) {
  if (burn_in_frames + rollout_frames > batch.frames()) throw ValidationError("burn-in + rollout exceeds episode length");
  Graph g;
  const Unroll u = unroll(g, model, strategy, config, cam, batch, burn_in_frames, rollout_frames);
  Prediction p;
  for (const Var& v : u.fused) p.burn_in.push_back(v.value());
  for (const Var& v : u.rollout) p.rollout.push_back(v.value());
  p.mean_gain = Eigen::VectorXd::Zero(6);
  if (burn_in_frames > 1) {
    for (int t = 1; t < burn_in_frames; ++t) p.mean_gain += u.gains[t].value().rowwise().mean();
    p.mean_gain /= static_cast<double>(burn_in_frames - 1);
  }
  return p;
}

// ---- value-level API -------------------------------------------------------

SymbolicState predict(const EstimatorState& state, const SceneConfig& config) {
  return step(state.current_symbolic, config);
}

GainResult compute_gain(const GainStrategy& strategy, GainNet* net, const LatentState& z_obs,
                        const LatentState& z_pred, const Eigen::VectorXd& hidden) {
  const Eigen::Index n = z_obs.position.cols();
  if (z_pred.position.cols() != n || z_obs.velocity.cols() != n || z_pred.velocity.cols() != n)
    throw ShapeMismatch("latent object counts differ");
  if (!strategy.is_learned()) return {Matrix::Constant(6, n, strategy.k), hidden};
  if (net == nullptr) throw ValidationError("learned gain requires a gain network");
  if (net->num_objects != n || hidden.size() != kGainHidden) throw ShapeMismatch("gain network / hidden size mismatch");
  Graph g;
  Matrix zo(2 * kLatentSize, n), zp(2 * kLatentSize, n);
  zo << z_obs.position, z_obs.velocity;
  zp << z_pred.position, z_pred.velocity;
  Var h = g.constant(hidden);
  Var k = learned_gain(g, *net, g.constant(zo), g.constant(zp), h, 1);
  return {k.value(), h.value().col(0)};
}

SymbolicState fuse(std::span<const BodyState> s_pred, std::span<const BodyState> s_obs, const Matrix& k) {
  if (s_pred.size() != s_obs.size() || k.rows() != 6 || k.cols() != static_cast<Eigen::Index>(s_pred.size()))
    throw ShapeMismatch("fuse: shapes differ");
  SymbolicState out(s_pred.size());
  for (std::size_t j = 0; j < s_pred.size(); ++j) {
    for (int c = 0; c < 3; ++c) {
      const double kp = k(c, static_cast<Eigen::Index>(j)), kv = k(3 + c, static_cast<Eigen::Index>(j));
      out[j].position[c] = (1.0 - kp) * s_pred[j].position[c] + kp * s_obs[j].position[c];
      out[j].velocity[c] = (1.0 - kv) * s_pred[j].velocity[c] + kv * s_obs[j].velocity[c];
    }
  }
  return out;
}

namespace {

Matrix depth_row_for(const Observation& obs, const InitNet& init, const LiftContext& ctx) {
  const std::size_t n = obs.screen_coords.size();
  Matrix depth(1, static_cast<Eigen::Index>(n));
  const CameraConfig& cam = *ctx.camera;
  for (std::size_t j = 0; j < n; ++j) {
    double d = 0.0;
    if (init.mode == InitMode::ScreenPlusDepth) {
      if (ctx.s_pred != nullptr) {
        d = (*ctx.s_pred)[j].position.z - cam.position.z - cam.object_radius;
      } else {
        if (!obs.depth_samples || !(*obs.depth_samples)[j]) throw MissingDepth(j);
        d = *(*obs.depth_samples)[j];
      }
    } else if (init.mode == InitMode::GroundtruthZ) {
      if (j >= ctx.gt_z.size() || !std::isfinite(ctx.gt_z[j])) throw MissingGroundtruthZ(j);
      d = ctx.gt_z[j] - cam.position.z;
    }
    depth(0, static_cast<Eigen::Index>(j)) = d;
  }
  return depth;
}

}  // namespace

SymbolicState lift_observation(const Observation& obs, InitNet& init, const LiftContext& ctx,
                               const EstimatorState* prev_state) {
  if (ctx.camera == nullptr || ctx.scene == nullptr) throw ValidationError("lift needs camera and scene");
  const Matrix depth = depth_row_for(obs, init, ctx);
  Graph g;
  const Matrix uv = sanitized_uv(observed_uv(obs), observed_visibility(obs), *ctx.camera);
  const Matrix pos = lift_positions(g, init, *ctx.camera, uv, &depth).value();
  SymbolicState s = from_matrix(pos);
  if (prev_state != nullptr) {
    if (prev_state->current_symbolic.size() != s.size()) throw ShapeMismatch("previous state has a different N");
    for (std::size_t j = 0; j < s.size(); ++j)
      s[j].velocity = (s[j].position - prev_state->current_symbolic[j].position) / ctx.scene->dt;
  }
  return s;
}

BurnInResult burn_in(std::span<const Observation> observations, const GainStrategy& strategy, Model& model,
                     const SceneConfig& config, const CameraConfig& cam, std::span<const std::vector<double>> gt_z) {
  if (observations.empty()) throw ValidationError("burn-in needs at least one observation");
  const int n = static_cast<int>(observations.front().screen_coords.size());
  SequenceBatch b;
  b.batch = 1;
  b.num_objects = n;
  for (std::size_t t = 0; t < observations.size(); ++t) {
    const Observation& o = observations[t];
    if (static_cast<int>(o.screen_coords.size()) != n) throw ShapeMismatch("observations disagree on N");
    b.uv.push_back(observed_uv(o));
    b.visible.push_back(observed_visibility(o));
  }
  if (model.init.mode == InitMode::ScreenPlusDepth) {
    const Observation& o0 = observations.front();
    b.depth0.resize(1, n);
    for (int j = 0; j < n; ++j) {
      if (!o0.depth_samples || !(*o0.depth_samples)[j]) throw MissingDepth(static_cast<std::size_t>(j));
      b.depth0(0, j) = *(*o0.depth_samples)[j];
    }
  }
  if (model.init.mode == InitMode::GroundtruthZ) {
    if (gt_z.size() < observations.size()) throw MissingGroundtruthZ(0);
    for (std::size_t t = 0; t < observations.size(); ++t) {
      Matrix d(1, n);
      for (int j = 0; j < n; ++j) {
        if (static_cast<int>(gt_z[t].size()) <= j) throw MissingGroundtruthZ(static_cast<std::size_t>(j));
        d(0, j) = gt_z[t][j] - cam.position.z;
      }
      b.gt_depth.push_back(std::move(d));
    }
  }

  Graph g;
  const int frames = static_cast<int>(observations.size());
  const Unroll u = unroll(g, model, strategy, config, cam, b, frames, 0);
  BurnInResult r;
  for (int t = 0; t < frames; ++t) {
    FrameRecord rec;
    rec.frame_index = static_cast<std::size_t>(t);
    rec.s_obs = from_matrix(u.observed[t].value());
    if (t > 0) {
      rec.s_pred = from_matrix(u.predicted[t].value());
      rec.gain = u.gains[t].value();
    }
    r.records.push_back(std::move(rec));
  }
  r.state.current_symbolic = from_matrix(u.fused.back().value());
  r.state.current_latent = encode(r.state.current_symbolic, model.codec);
  r.state.gru_hidden = u.hidden.value().col(0);
  r.state.frame_index = static_cast<std::size_t>(frames - 1);
  return r;
}

std::vector<SymbolicState> rollout(const EstimatorState& state, std::size_t m, const SceneConfig& config) {
  std::vector<SymbolicState> out;
  out.reserve(m);
  SymbolicState s = state.current_symbolic;
  for (std::size_t i = 0; i < m; ++i) {
    s = step(s, config);
    out.push_back(s);
  }
  return out;
}

}  // namespace orbits
