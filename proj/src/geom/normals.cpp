#include <Eigen/Eigenvalues>

#include "pcal/error.hpp"
#include "pcal/spatial_index.hpp"

namespace pcal {

PointCloud estimate_normals(const PointCloud& cloud, std::size_t k) {
  if (k < 3) throw InvalidParameter("normal estimation requires k >= 3");
  return estimate_normals(cloud, SpatialIndex(cloud), k);
}

PointCloud estimate_normals(const PointCloud& cloud, const SpatialIndex& index, std::size_t k) {
  if (k < 3) throw InvalidParameter("normal estimation requires k >= 3");
  if (cloud.size() <= k) throw InvalidParameter("normal estimation requires N > k");
  if (index.size() != cloud.size()) throw InvalidParameter("index does not match cloud");

  PointCloud out = cloud;
  auto& normals = out.normals.emplace(cloud.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver;
  for (PointId i = 0; i < cloud.size(); ++i) {
    auto ids = index.query(i, Knn{k});
    ids.push_back(i);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (PointId j : ids) {
      const auto& p = cloud.positions[j];
      mean += Eigen::Vector3d(p[0], p[1], p[2]);
    }
    mean /= static_cast<double>(ids.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (PointId j : ids) {
      const auto& p = cloud.positions[j];
      const Eigen::Vector3d d = Eigen::Vector3d(p[0], p[1], p[2]) - mean;
      cov += d * d.transpose();
    }
    solver.compute(cov);
    Eigen::Vector3d nrm = solver.eigenvectors().col(0);
    const double len = nrm.norm();
    nrm = len > 0 ? Eigen::Vector3d(nrm / len) : Eigen::Vector3d::UnitZ();
    normals[i] = {static_cast<float>(nrm.x()), static_cast<float>(nrm.y()),
                  static_cast<float>(nrm.z())};
  }
  return out;
}

}  // namespace pcal
