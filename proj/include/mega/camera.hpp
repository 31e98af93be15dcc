#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "mega/errors.hpp"

namespace mega {

/// Pinhole camera with a world-to-camera rigid transform and a query time.
struct Camera {
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();  // world-to-camera
  Eigen::Vector3d trans = Eigen::Vector3d::Zero();
  double fx = 100.0, fy = 100.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  double time = 0.0;

  /// Camera center in world coordinates: p_v = -R^T t.
  Eigen::Vector3d center() const { return -rot.transpose() * trans; }

  /// World-space optical axis (camera +z).
  Eigen::Vector3d forward_axis() const { return rot.row(2).transpose(); }

  void validate() const {
    if ((rot * rot.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-8)
      throw InvalidParameter("camera: rotation is not orthonormal");
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidParameter("camera: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw InvalidParameter("camera: empty viewport");
  }

  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                        const Eigen::Vector3d& up, double focal, int width, int height,
                        double time = 0.0) {
    Camera cam;
    const Eigen::Vector3d fwd = (target - eye).normalized();
    const Eigen::Vector3d right = fwd.cross(up).normalized();
    const Eigen::Vector3d down = fwd.cross(right).normalized();
    cam.rot.row(0) = right;
    cam.rot.row(1) = down;
    cam.rot.row(2) = fwd;
    cam.trans = -cam.rot * eye;
    cam.fx = cam.fy = focal;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.width = width;
    cam.height = height;
    cam.time = time;
    return cam;
  }
};

}  // namespace mega
