#include "bodyfuse/pointcloud.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>
#include <numeric>

#include "bodyfuse/error.hpp"

namespace bodyfuse {

PointCloud depth_to_cloud(const DepthImage& img, const CameraIntrinsics& intr, int stride) {
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  if (img.width != intr.width || img.height != intr.height ||
      img.depths.size() != static_cast<std::size_t>(img.width) * img.height)
    throw Error(ErrorCode::DimensionMismatch, "depth image does not match intrinsics");
  PointCloud cloud;
  const std::size_t total = img.depths.size();
  cloud.points.reserve(total / static_cast<std::size_t>(stride) + 1);
  for (std::size_t i = 0; i < total; i += static_cast<std::size_t>(stride)) {
    const float d = img.depths[i];
    if (!(d > 0.0f)) continue;
    const auto u = static_cast<double>(i % static_cast<std::size_t>(img.width));
    const auto v = static_cast<double>(i / static_cast<std::size_t>(img.width));
    cloud.points.push_back(unproject(intr, u, v, d));
  }
  return cloud;
}

PointCloud transformed(const PointCloud& cloud, const RigidTransform& t) {
  const kernels::SoaPoints in(cloud.points);
  kernels::SoaPoints out;
  kernels::transform_points(t, in, out);
  PointCloud result;
  result.points.resize(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) result.points[i] = out.at(i);
  return result;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

}  // namespace

std::vector<std::uint8_t> serialize_cloud(const PointCloud& cloud) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + cloud.size() * 12);
  put_u32(out, static_cast<std::uint32_t>(cloud.size()));
  for (const auto& p : cloud.points) {
    for (const double c : {p.x, p.y, p.z}) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(c)));
  }
  return out;
}

PointCloud deserialize_cloud(std::span<const std::uint8_t> blob) {
  if (blob.size() < 4) throw Error(ErrorCode::TruncatedPayload, "point cloud blob missing count");
  const std::uint32_t count = get_u32(blob.data());
  if (blob.size() < 4 + static_cast<std::size_t>(count) * 12)
    throw Error(ErrorCode::TruncatedPayload, "point cloud blob shorter than its count");
  PointCloud cloud;
  cloud.points.resize(count);
  const std::uint8_t* p = blob.data() + 4;
  for (std::uint32_t i = 0; i < count; ++i, p += 12) {
    cloud.points[i] = {std::bit_cast<float>(get_u32(p)), std::bit_cast<float>(get_u32(p + 4)),
                       std::bit_cast<float>(get_u32(p + 8))};
  }
  return cloud;
}

// --- SpatialIndex ---------------------------------------------------------------------------

namespace {
constexpr std::uint32_t kLeafSize = 16;

double coord(const Vec3& p, int axis) { return axis == 0 ? p.x : (axis == 1 ? p.y : p.z); }
}  // namespace

SpatialIndex::SpatialIndex(std::span<const Vec3> points) {
  std::vector<std::uint32_t> idx(points.size());
  std::iota(idx.begin(), idx.end(), 0u);
  order_.reserve(points.size());
  leaf_points_.x.reserve(points.size());
  leaf_points_.y.reserve(points.size());
  leaf_points_.z.reserve(points.size());
  if (!points.empty()) build(0, static_cast<std::uint32_t>(points.size()), idx, points);
}

std::uint32_t SpatialIndex::build(std::uint32_t begin, std::uint32_t end, std::vector<std::uint32_t>& idx,
                                  std::span<const Vec3> points) {
  const auto node_id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  if (end - begin <= kLeafSize) {
    std::sort(idx.begin() + begin, idx.begin() + end);
    Node& leaf = nodes_[node_id];
    leaf.left = static_cast<std::uint32_t>(order_.size());
    for (std::uint32_t i = begin; i < end; ++i) {
      const Vec3& p = points[idx[i]];
      leaf_points_.x.push_back(p.x);
      leaf_points_.y.push_back(p.y);
      leaf_points_.z.push_back(p.z);
      order_.push_back(idx[i]);
    }
    leaf.right = static_cast<std::uint32_t>(order_.size());
    return node_id;
  }

  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    const Vec3& p = points[idx[i]];
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const Vec3 extent = hi - lo;
  int axis = 0;
  if (extent.y > extent.x && extent.y >= extent.z) axis = 1;
  else if (extent.z > extent.x && extent.z > extent.y) axis = 2;

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ca = coord(points[a], axis), cb = coord(points[b], axis);
                     return ca < cb || (ca == cb && a < b);
                   });
  const double split = coord(points[idx[mid]], axis);
  const std::uint32_t left = build(begin, mid, idx, points);
  const std::uint32_t right = build(mid, end, idx, points);
  Node& node = nodes_[node_id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return node_id;
}

void SpatialIndex::search(std::uint32_t node_id, const Vec3& q, double& best_d2, std::size_t& best_slot) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    double d2 = 0.0;
    const std::size_t n = node.right - node.left;
    const std::size_t local = kernels::active().nearest(q.x, q.y, q.z, leaf_points_.x.data() + node.left,
                                                        leaf_points_.y.data() + node.left,
                                                        leaf_points_.z.data() + node.left, n, &d2);
    const std::size_t slot = node.left + local;
    if (d2 < best_d2 || (d2 == best_d2 && order_[slot] < order_[best_slot])) {
      best_d2 = d2;
      best_slot = slot;
    }
    return;
  }
  const double diff = coord(q, node.axis) - node.split;
  const std::uint32_t near = diff < 0.0 ? node.left : node.right;
  const std::uint32_t far = diff < 0.0 ? node.right : node.left;
  search(near, q, best_d2, best_slot);
  if (diff * diff <= best_d2) search(far, q, best_d2, best_slot);
}

NearestResult SpatialIndex::nearest(const Vec3& q) const {
  if (order_.empty()) throw Error(ErrorCode::EmptyIndex, "nearest() on an empty index");
  double best_d2 = std::numeric_limits<double>::infinity();
  std::size_t best_slot = 0;
  search(0, q, best_d2, best_slot);
  NearestResult r;
  r.point = leaf_points_.at(best_slot);
  r.distance = std::sqrt(best_d2);
  r.index = order_[best_slot];
  return r;
}

// --- Kabsch -------------------------------------------------------------------------------

RigidTransform kabsch(std::span<const Vec3> source, std::span<const Vec3> target, std::span<const double> weights) {
  if (source.size() != target.size() || source.size() != weights.size())
    throw Error(ErrorCode::LengthMismatch, "kabsch inputs differ in length");
  if (source.size() < 3) throw Error(ErrorCode::DegenerateConfiguration, "kabsch needs at least 3 points");

  double wsum = 0.0;
  Vec3 cs, ct;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw Error(ErrorCode::InvalidArgument, "negative kabsch weight");
    wsum += weights[i];
    cs += source[i] * weights[i];
    ct += target[i] * weights[i];
  }
  if (!(wsum > 0.0)) throw Error(ErrorCode::DegenerateConfiguration, "all kabsch weights are zero");
  cs = cs / wsum;
  ct = ct / wsum;

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 a = source[i] - cs;
    const Vec3 b = target[i] - ct;
    const Eigen::Vector3d ea(a.x, a.y, a.z), eb(b.x, b.y, b.z);
    h += weights[i] * ea * eb.transpose();
  }

  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-10 * sv(0))
    throw Error(ErrorCode::DegenerateConfiguration, "correspondences are collinear or coincident");

  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;  // flip the least significant axis
  const Eigen::Matrix3d r = v * d * u.transpose();

  RigidTransform t;
  t.rotation = Quaternion::from_matrix({r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)});
  t.translation = ct - t.rotation.rotate(cs);
  return t;
}

RigidTransform kabsch(std::span<const Vec3> source, std::span<const Vec3> target) {
  const std::vector<double> w(source.size(), 1.0);
  return kabsch(source, target, w);
}

// --- ICP ----------------------------------------------------------------------------------

namespace {

struct Correspondences {
  std::vector<Vec3> source;  // original (untransformed) source points of inliers
  std::vector<Vec3> target;
  double truncated_sum = 0.0;
  double inlier_sum = 0.0;
  std::size_t inliers = 0;
};

Correspondences correspond(const kernels::SoaPoints& src, const SpatialIndex& index, const RigidTransform& t,
                           double reject, kernels::SoaPoints& scratch) {
  kernels::transform_points(t, src, scratch);
  Correspondences c;
  const double reject2 = reject * reject;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const NearestResult nn = index.nearest(scratch.at(i));
    const double d2 = nn.distance * nn.distance;
    if (nn.distance <= reject) {
      c.source.push_back(src.at(i));
      c.target.push_back(nn.point);
      c.inlier_sum += d2;
      c.truncated_sum += d2;
      ++c.inliers;
    } else {
      c.truncated_sum += reject2;
    }
  }
  if (c.inliers == 0) throw Error(ErrorCode::NoInliers, "every correspondence exceeded the reject threshold");
  return c;
}

}  // namespace

IcpResult icp(const PointCloud& source, const SpatialIndex& target_index, const RigidTransform& init,
              const IcpParams& params) {
  if (source.size() < params.min_points || target_index.size() < params.min_points)
    throw Error(ErrorCode::TooFewPoints, "ICP needs at least " + std::to_string(params.min_points) + " points");

  const kernels::SoaPoints src(source.points);
  kernels::SoaPoints scratch;
  const double n = static_cast<double>(source.size());

  IcpResult result;
  RigidTransform current = init;
  Correspondences corr = correspond(src, target_index, current, params.reject_threshold, scratch);
  double current_rmse = std::sqrt(corr.truncated_sum / n);
  result.rmse_trace.push_back(current_rmse);

  bool epsilon_fired = false;
  for (int iter = 1; iter <= params.max_iterations; ++iter) {
    result.iterations = iter;
    const RigidTransform candidate = kabsch(corr.source, corr.target);
    Correspondences next = correspond(src, target_index, candidate, params.reject_threshold, scratch);
    const double next_rmse = std::sqrt(next.truncated_sum / n);
    if (next_rmse > current_rmse) {
      // Only reachable through rounding at a fixed point; keep the better transform.
      result.rmse_trace.push_back(current_rmse);
      epsilon_fired = true;
      break;
    }
    const double improvement = current_rmse - next_rmse;
    current = candidate;
    corr = std::move(next);
    current_rmse = next_rmse;
    result.rmse_trace.push_back(current_rmse);
    if (improvement < params.epsilon) {
      epsilon_fired = true;
      break;
    }
  }

  result.transform = current;
  result.rmse = std::sqrt(corr.inlier_sum / static_cast<double>(corr.inliers));
  result.inlier_fraction = static_cast<double>(corr.inliers) / n;
  result.converged = epsilon_fired && result.inlier_fraction >= params.min_inlier_fraction;
  return result;
}

IcpResult icp(const PointCloud& source, const PointCloud& target, const RigidTransform& init,
              const IcpParams& params) {
  if (source.size() < params.min_points || target.size() < params.min_points)
    throw Error(ErrorCode::TooFewPoints, "ICP needs at least " + std::to_string(params.min_points) + " points");
  const SpatialIndex index(target.points);
  return icp(source, index, init, params);
}

}  // namespace bodyfuse
