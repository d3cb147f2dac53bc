#include "clustergnn/synthetic.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace clustergnn {
namespace {

constexpr int kMaxHomographyDraws = 10;
constexpr int kMaxPlacementTries = 200000;

bool homography_ok(const Eigen::Matrix3d& h, const ImageSize& image) {
  if (!h.allFinite()) return false;
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(h);
  const auto sv = svd.singularValues();
  if (sv(2) <= 1e-12 || sv(0) / sv(2) > 1e8) return false;
  const double w = image.width, hh = image.height;
  for (const auto& corner : {Eigen::Vector3d(0, 0, 1), Eigen::Vector3d(w, 0, 1),
                             Eigen::Vector3d(0, hh, 1),
                             Eigen::Vector3d(w, hh, 1)}) {
    if ((h * corner)(2) <= 1e-6) return false;
  }
  return true;
}

Eigen::Matrix3d sample_homography(std::mt19937_64& rng,
                                  const PairOptions& opt) {
  const double rot = opt.max_rotation_deg * std::numbers::pi / 180.0;
  std::uniform_real_distribution<double> angle(-rot, rot);
  std::uniform_real_distribution<double> log_scale(
      std::log(std::max(opt.min_scale, 1e-300)),
      std::log(std::max(opt.max_scale, 1e-300)));
  std::uniform_real_distribution<double> persp(-opt.max_perspective,
                                               opt.max_perspective);
  std::uniform_real_distribution<double> shift(-opt.max_shift_px,
                                               opt.max_shift_px);
  for (int draw = 0; draw < kMaxHomographyDraws; ++draw) {
    const double theta = angle(rng);
    const double s = opt.min_scale <= 0.0 ? 0.0 : std::exp(log_scale(rng));
    const double p1 = persp(rng), p2 = persp(rng);
    const double tx = shift(rng), ty = shift(rng);
    Eigen::Matrix3d core;
    core << s * std::cos(theta), -s * std::sin(theta), 0.0,
        s * std::sin(theta), s * std::cos(theta), 0.0, p1, p2, 1.0;
    const double cx = 0.5 * opt.image.width, cy = 0.5 * opt.image.height;
    Eigen::Matrix3d to_center = Eigen::Matrix3d::Identity();
    to_center(0, 2) = -cx;
    to_center(1, 2) = -cy;
    Eigen::Matrix3d back = Eigen::Matrix3d::Identity();
    back(0, 2) = cx + tx;
    back(1, 2) = cy + ty;
    const Eigen::Matrix3d h = back * core * to_center;
    if (homography_ok(h, opt.image)) return h;
  }
  throw DegenerateTransformError("generate_pair: " +
                                 std::to_string(kMaxHomographyDraws) +
                                 " degenerate homography draws");
}

bool inside(const Eigen::Vector2d& p, const ImageSize& image, double margin) {
  return p.x() >= margin && p.y() >= margin &&
         p.x() < image.width - margin && p.y() < image.height - margin;
}

bool far_from(const Eigen::Vector2d& p,
              const std::vector<Eigen::Vector2d>& others, double dist) {
  const double d2 = dist * dist;
  for (const auto& o : others) {
    if ((p - o).squaredNorm() < d2) return false;
  }
  return true;
}

std::vector<float> observe(const DescriptorModel& model,
                           const Eigen::VectorXd& latent,
                           std::mt19937_64& rng) {
  const std::size_t d = model.dim;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      e(model.embedding.data(), d, d);
  Eigen::VectorXd base = e * latent;
  base.normalize();
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd obs = base;
  const double sigma = model.noise / std::sqrt(static_cast<double>(d));
  for (std::size_t j = 0; j < d; ++j) obs(j) += sigma * gauss(rng);
  obs.normalize();
  std::vector<float> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(obs(j));
  return out;
}

Eigen::VectorXd sample_latent(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(d);
  for (std::size_t j = 0; j < d; ++j) z(j) = gauss(rng);
  return z;
}

struct Observation {
  Eigen::Vector2d xy;
  float score;
  std::vector<float> descriptor;
  long partner;  // index in the other image's construction order, or -1
};

KeypointSet assemble(const std::vector<Observation>& obs,
                     const std::vector<std::size_t>& order, ImageSize image,
                     std::size_t dim) {
  KeypointSet kp;
  kp.coords = MatrixF(obs.size(), 2);
  kp.descriptors = MatrixF(obs.size(), dim);
  kp.scores.resize(obs.size());
  kp.image_size = image;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const Observation& o = obs[order[r]];
    kp.coords(r, 0) = static_cast<float>(o.xy.x());
    kp.coords(r, 1) = static_cast<float>(o.xy.y());
    kp.scores[r] = o.score;
    std::copy(o.descriptor.begin(), o.descriptor.end(),
              kp.descriptors.row(r).begin());
  }
  return kp;
}

}  // namespace

DescriptorModel DescriptorModel::make(std::uint64_t seed, std::size_t dim,
                                      double noise) {
  DescriptorModel m;
  m.dim = dim;
  m.noise = noise;
  m.embedding = MatrixD(dim, dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(double(dim)));
  for (auto& v : m.embedding.storage()) v = gauss(rng);
  return m;
}

Eigen::Vector2d apply_homography(const Eigen::Matrix3d& h,
                                 const Eigen::Vector2d& p) {
  return (h * p.homogeneous()).hnormalized();
}

SyntheticPair generate_pair(std::uint64_t seed, const PairOptions& opt,
                            const DescriptorModel& descriptors) {
  if (!(opt.outlier_frac >= 0.0 && opt.outlier_frac <= 1.0)) {
    throw std::invalid_argument("outlier_frac must lie in [0, 1]");
  }
  if (opt.n_keypoints == 0) {
    throw std::invalid_argument("n_keypoints must be positive");
  }
  std::mt19937_64 rng(seed);
  SyntheticPair pair;
  pair.noise_px = opt.noise_px;
  pair.outlier_frac = opt.outlier_frac;
  pair.homography = sample_homography(rng, opt);
  const Eigen::Matrix3d& h = pair.homography;

  const std::size_t n = opt.n_keypoints;
  const auto n_out = static_cast<std::size_t>(
      std::llround(opt.outlier_frac * static_cast<double>(n)));
  const std::size_t n_in = n - n_out;
  const double w = opt.image.width, hh = opt.image.height;
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, hh);
  std::uniform_real_distribution<float> uscore(0.0f, 1.0f);
  std::normal_distribution<double> pixel_noise(0.0, 1.0);
  const double spacing = opt.min_spacing_px;
  const double outlier_gap = std::max(spacing, 8.0);

  std::vector<Observation> obs_a, obs_b;
  std::vector<Eigen::Vector2d> pts_a, proj_a, pts_b;
  auto place = [&](auto&& accept) {
    for (int t = 0; t < kMaxPlacementTries; ++t) {
      const Eigen::Vector2d p(ux(rng), uy(rng));
      if (accept(p)) return p;
    }
    throw std::runtime_error("generate_pair: could not place keypoints");
  };

  for (std::size_t i = 0; i < n_in; ++i) {
    Eigen::Vector2d q;
    const Eigen::Vector2d p = place([&](const Eigen::Vector2d& cand) {
      q = apply_homography(h, cand);
      return inside(q, opt.image, 2.0) && far_from(cand, pts_a, spacing) &&
             far_from(q, pts_b, spacing);
    });
    Eigen::Vector2d qn(q.x() + opt.noise_px * pixel_noise(rng),
                       q.y() + opt.noise_px * pixel_noise(rng));
    qn.x() = std::clamp(qn.x(), 0.0, w - 1e-3);
    qn.y() = std::clamp(qn.y(), 0.0, hh - 1e-3);
    const Eigen::VectorXd z = sample_latent(descriptors.dim, rng);
    obs_a.push_back({p, uscore(rng), observe(descriptors, z, rng),
                     static_cast<long>(i)});
    obs_b.push_back({qn, uscore(rng), observe(descriptors, z, rng),
                     static_cast<long>(i)});
    pts_a.push_back(p);
    proj_a.push_back(q);
    pts_b.push_back(qn);
  }
  for (std::size_t i = 0; i < n_out; ++i) {
    const Eigen::Vector2d p = place([&](const Eigen::Vector2d& cand) {
      const Eigen::Vector3d hp = h * cand.homogeneous();
      const bool projects_far =
          hp(2) <= 0.0 || far_from(hp.hnormalized(), pts_b, outlier_gap);
      return far_from(cand, pts_a, spacing) && projects_far;
    });
    obs_a.push_back({p, uscore(rng),
                     observe(descriptors, sample_latent(descriptors.dim, rng),
                             rng),
                     -1});
    pts_a.push_back(p);
    const Eigen::Vector3d hp = h * p.homogeneous();
    if (hp(2) > 0.0) proj_a.push_back(hp.hnormalized());
  }
  for (std::size_t i = 0; i < n_out; ++i) {
    const Eigen::Vector2d q = place([&](const Eigen::Vector2d& cand) {
      return far_from(cand, pts_b, spacing) &&
             far_from(cand, proj_a, outlier_gap);
    });
    obs_b.push_back({q, uscore(rng),
                     observe(descriptors, sample_latent(descriptors.dim, rng),
                             rng),
                     -1});
    pts_b.push_back(q);
  }

  std::vector<std::size_t> order_a(obs_a.size()), order_b(obs_b.size());
  for (std::size_t i = 0; i < order_a.size(); ++i) order_a[i] = i;
  for (std::size_t i = 0; i < order_b.size(); ++i) order_b[i] = i;
  std::shuffle(order_a.begin(), order_a.end(), rng);
  std::shuffle(order_b.begin(), order_b.end(), rng);
  pair.a = assemble(obs_a, order_a, opt.image, descriptors.dim);
  pair.b = assemble(obs_b, order_b, opt.image, descriptors.dim);

  std::vector<std::size_t> where_b(order_b.size());
  for (std::size_t r = 0; r < order_b.size(); ++r) where_b[order_b[r]] = r;
  for (std::size_t r = 0; r < order_a.size(); ++r) {
    const long partner = obs_a[order_a[r]].partner;
    if (partner >= 0) {
      pair.inliers.emplace_back(r, where_b[static_cast<std::size_t>(partner)]);
    }
  }
  return pair;
}

}  // namespace clustergnn
