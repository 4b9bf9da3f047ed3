#include "rmnerf/radiance_field.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rmnerf/param_io.h"
#include "rmnerf/random.h"

namespace rmnerf {
namespace {

Eigen::MatrixXd GlorotUniform(int rows, int cols, std::uint64_t seed,
                              std::uint64_t stream) {
  const CounterRng rng(seed, stream);
  const double a = std::sqrt(6.0 / (rows + cols));
  Eigen::MatrixXd m(rows, cols);
  std::uint64_t k = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = a * (2.0 * rng.Uniform(k++) - 1.0);
  }
  return m;
}

std::vector<double> TransmittanceOf(std::span<const double> sigma,
                                    std::span<const double> deltas) {
  std::vector<double> t(sigma.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    t[i] = std::exp(-acc);
    acc += sigma[i] * deltas[i];
  }
  return t;
}

}  // namespace

void FieldConfig::Validate() const {
  if (pos_octaves < 1 || dir_octaves < 1 || hidden < 1 || latent < 1) {
    throw std::invalid_argument("FieldConfig: sizes must be positive");
  }
  if (dir_octaves > pos_octaves) {
    throw std::invalid_argument("FieldConfig: dir_octaves must not exceed pos_octaves");
  }
}

RadianceField::RadianceField(const FieldConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.Validate();
  const int h = cfg.hidden;
  params_ = {GlorotUniform(h, cfg.PosFeatures(), seed, 0),
             Eigen::MatrixXd::Zero(h, 1),
             GlorotUniform(h, h, seed, 1),
             Eigen::MatrixXd::Zero(h, 1),
             GlorotUniform(1 + cfg.latent, h, seed, 2),
             Eigen::MatrixXd::Zero(1 + cfg.latent, 1),
             GlorotUniform(3, cfg.latent + cfg.DirFeatures(), seed, 3),
             Eigen::MatrixXd::Zero(3, 1)};
}

int RadianceField::NumParams() const {
  int n = 0;
  for (const auto& p : params_) n += static_cast<int>(p.size());
  return n;
}

Eigen::VectorXd RadianceField::Flatten() const {
  Eigen::VectorXd flat(NumParams());
  Eigen::Index at = 0;
  for (const auto& p : params_) {
    flat.segment(at, p.size()) = p.reshaped();
    at += p.size();
  }
  return flat;
}

void RadianceField::Unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() != NumParams()) {
    throw std::invalid_argument("RadianceField::Unflatten: size mismatch");
  }
  Eigen::Index at = 0;
  for (auto& p : params_) {
    p.reshaped() = flat.segment(at, p.size());
    at += p.size();
  }
}

std::vector<ad::Var> RadianceField::Bind(ad::Tape& tape, bool trainable) const {
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(trainable ? tape.Leaf(p) : tape.Constant(p));
  return vars;
}

RadianceField::Output RadianceField::Forward(std::span<const ad::Var> p,
                                             const ad::Var& pos_features,
                                             const ad::Var& dir_features) const {
  if (p.size() != kNumTensors) throw std::invalid_argument("RadianceField: bad params");
  const ad::Var h1 = ad::Softplus(ad::AddColumn(ad::MatMul(p[0], pos_features), p[1]));
  const ad::Var h2 = ad::Softplus(ad::AddColumn(ad::MatMul(p[2], h1), p[3]));
  const ad::Var out = ad::AddColumn(ad::MatMul(p[4], h2), p[5]);
  Output o;
  o.sigma = ad::Softplus(ad::SliceRows(out, 0, 1));
  const ad::Var latent = ad::SliceRows(out, 1, cfg_.latent);
  const ad::Var color_in[] = {latent, dir_features};
  o.rgb = ad::Sigmoid(ad::AddColumn(ad::MatMul(p[6], ad::ConcatRows(color_in)), p[7]));
  return o;
}

RaySamplePlan StratifiedIntervals(double near, double far, int n,
                                  std::optional<std::uint64_t> jitter_seed,
                                  std::uint64_t stream) {
  if (!(near > 0.0 && far > near) || n < 1) {
    throw std::invalid_argument("StratifiedIntervals: need 0 < near < far and n >= 1");
  }
  RaySamplePlan plan;
  plan.breaks.resize(n + 1);
  const double h = (far - near) / n;
  plan.breaks[0] = near;
  plan.breaks[n] = far;
  for (int i = 1; i < n; ++i) {
    double offset = 0.0;
    if (jitter_seed) offset = CounterRng(*jitter_seed, stream).Uniform(i) - 0.5;
    plan.breaks[i] = near + h * (i + offset);
  }
  return plan;
}

void RenderConfig::Validate() const {
  if (!(near > 0.0 && far > near)) throw std::invalid_argument("RenderConfig: bad near/far");
  if (num_samples < 1) throw std::invalid_argument("RenderConfig: num_samples < 1");
  encoding.Validate();
}

Eigen::MatrixXd SampleMoments(std::span<const double> radii,
                              std::span<const RaySamplePlan> plans) {
  if (radii.size() != plans.size() || plans.empty()) {
    throw std::invalid_argument("SampleMoments: radii/plans mismatch");
  }
  const int n = plans[0].num_intervals();
  Eigen::MatrixXd m(3, static_cast<Eigen::Index>(plans.size()) * n);
  for (std::size_t r = 0; r < plans.size(); ++r) {
    if (plans[r].num_intervals() != n) {
      throw std::invalid_argument("SampleMoments: rays differ in sample count");
    }
    for (int s = 0; s < n; ++s) {
      const FrustumMoments fm =
          ComputeFrustumMoments(plans[r].breaks[s], plans[r].breaks[s + 1], radii[r]);
      const Eigen::Index col = static_cast<Eigen::Index>(r) * n + s;
      m(0, col) = fm.mean_t;
      m(1, col) = fm.var_t;
      m(2, col) = fm.var_r;
    }
  }
  return m;
}

Eigen::MatrixXd SampleDeltas(std::span<const RaySamplePlan> plans) {
  const int n = plans.empty() ? 0 : plans[0].num_intervals();
  Eigen::MatrixXd d(1, static_cast<Eigen::Index>(plans.size()) * n);
  for (std::size_t r = 0; r < plans.size(); ++r) {
    for (int s = 0; s < n; ++s) {
      d(0, static_cast<Eigen::Index>(r) * n + s) = plans[r].breaks[s + 1] - plans[r].breaks[s];
    }
  }
  return d;
}

ad::Var RenderRays(const RadianceField& field, std::span<const ad::Var> params,
                   const ad::Var& origins, const ad::Var& directions,
                   std::span<const double> radii,
                   std::span<const RaySamplePlan> plans,
                   const EncodingConfig& encoding) {
  const FieldConfig& fc = field.config();
  if (encoding.num_octaves != fc.pos_octaves) {
    throw std::invalid_argument("RenderRays: encoding octaves differ from the field");
  }
  const int n = plans.front().num_intervals();
  const std::vector<double> weights = AnnealedWeights(encoding);
  const ad::Var pos = ad::IntegratedEncoding(origins, directions, SampleMoments(radii, plans),
                                             n, weights);
  const std::span<const double> dir_weights(weights.data(), fc.dir_octaves);
  const ad::Var dir = ad::RepeatCols(ad::SinusoidalEncoding(directions, dir_weights), n);
  const RadianceField::Output out = field.Forward(params, pos, dir);
  return ad::Composite(out.sigma, out.rgb, SampleDeltas(plans), n);
}

RayRender RenderRay(const Eigen::Vector2d& pixel, const CameraPose& pose,
                    const RadianceField& field, const RenderConfig& cfg) {
  cfg.Validate();
  const ConicalFrustum f = CastFrustum(pixel, pose, cfg.near, cfg.far);
  const std::uint64_t stream =
      static_cast<std::uint64_t>(std::floor(pixel.y())) * pose.intrinsics.width +
      static_cast<std::uint64_t>(std::floor(pixel.x()));
  const RaySamplePlan plan =
      StratifiedIntervals(cfg.near, cfg.far, cfg.num_samples, cfg.jitter_seed, stream);
  ad::Tape tape;
  const std::vector<ad::Var> params = field.Bind(tape, false);
  const ad::Var o = tape.Constant(f.origin);
  const ad::Var d = tape.Constant(f.direction);
  const std::vector<double> weights = AnnealedWeights(cfg.encoding);
  const int n = plan.num_intervals();
  const double radius[] = {f.radius};
  const RaySamplePlan plans[] = {plan};
  const ad::Var pos = ad::IntegratedEncoding(o, d, SampleMoments(radius, plans), n, weights);
  const ad::Var dir = ad::RepeatCols(
      ad::SinusoidalEncoding(d, std::span<const double>(weights.data(), field.config().dir_octaves)),
      n);
  const RadianceField::Output out = field.Forward(params, pos, dir);
  std::vector<double> sigma(n), deltas(n);
  std::vector<Eigen::Vector3d> rgb(n);
  for (int s = 0; s < n; ++s) {
    sigma[s] = out.sigma.value()(0, s);
    rgb[s] = out.rgb.value().col(s);
    deltas[s] = plan.breaks[s + 1] - plan.breaks[s];
  }
  RayRender r;
  r.rgb = ad::CompositeRay(sigma, rgb, deltas, &r.weights);
  r.transmittance = TransmittanceOf(sigma, deltas);
  return r;
}

Image RenderImage(const CameraPose& pose, const RadianceField& field,
                  const RenderConfig& cfg) {
  cfg.Validate();
  const Intrinsics& k = pose.intrinsics;
  if (!k.Valid()) throw std::invalid_argument("RenderImage: invalid intrinsics");
  Image image(k.width, k.height);
  const int total = k.width * k.height;
  constexpr int kChunk = 512;
  for (int start = 0; start < total; start += kChunk) {
    const int count = std::min(kChunk, total - start);
    Eigen::MatrixXd origins(3, count), dirs(3, count);
    std::vector<double> radii(count);
    std::vector<RaySamplePlan> plans(count);
    for (int i = 0; i < count; ++i) {
      const int p = start + i;
      const Eigen::Vector2d pixel(p % k.width + 0.5, p / k.width + 0.5);
      const ConicalFrustum f = CastFrustum(pixel, pose, cfg.near, cfg.far);
      origins.col(i) = f.origin;
      dirs.col(i) = f.direction;
      radii[i] = f.radius;
      plans[i] = StratifiedIntervals(cfg.near, cfg.far, cfg.num_samples, cfg.jitter_seed,
                                     static_cast<std::uint64_t>(p));
    }
    ad::Tape tape;
    const std::vector<ad::Var> params = field.Bind(tape, false);
    const ad::Var rgb = RenderRays(field, params, tape.Constant(origins), tape.Constant(dirs),
                                   radii, plans, cfg.encoding);
    for (int i = 0; i < count; ++i) {
      const int p = start + i;
      image.SetPixel(p % k.width, p / k.width, rgb.value().col(i));
    }
  }
  return image;
}

RayRender RenderRayPoints(const Vec3& origin, const Vec3& direction,
                          const RaySamplePlan& plan, const PointField& field) {
  const int n = plan.num_intervals();
  std::vector<double> sigma(n), deltas(n);
  std::vector<Eigen::Vector3d> rgb(n);
  for (int s = 0; s < n; ++s) {
    const double mid = 0.5 * (plan.breaks[s] + plan.breaks[s + 1]);
    field(origin + mid * direction, &sigma[s], &rgb[s]);
    deltas[s] = plan.breaks[s + 1] - plan.breaks[s];
  }
  RayRender r;
  r.rgb = ad::CompositeRay(sigma, rgb, deltas, &r.weights);
  r.transmittance = TransmittanceOf(sigma, deltas);
  return r;
}

void SaveField(const RadianceField& field, const std::string& path,
               const std::string& config_hash) {
  const FieldConfig& c = field.config();
  SaveParams(path, field.params(),
             {{"kind", "radiance_field"},
              {"config_hash", config_hash},
              {"pos_octaves", c.pos_octaves},
              {"dir_octaves", c.dir_octaves},
              {"hidden", c.hidden},
              {"latent", c.latent}});
}

RadianceField LoadField(const std::string& path) {
  ParamBlob blob = LoadParams(path);
  if (blob.meta.value("kind", "") != "radiance_field") {
    throw std::runtime_error("LoadField: " + path + " is not a radiance field");
  }
  FieldConfig c;
  c.pos_octaves = blob.meta.at("pos_octaves").get<int>();
  c.dir_octaves = blob.meta.at("dir_octaves").get<int>();
  c.hidden = blob.meta.at("hidden").get<int>();
  c.latent = blob.meta.at("latent").get<int>();
  RadianceField field(c, 0);
  if (blob.tensors.size() != field.params().size()) {
    throw std::runtime_error("LoadField: tensor count mismatch");
  }
  for (std::size_t i = 0; i < blob.tensors.size(); ++i) {
    if (blob.tensors[i].rows() != field.params()[i].rows() ||
        blob.tensors[i].cols() != field.params()[i].cols()) {
      throw std::runtime_error("LoadField: tensor shape mismatch");
    }
    field.params()[i] = std::move(blob.tensors[i]);
  }
  return field;
}

}  // namespace rmnerf
