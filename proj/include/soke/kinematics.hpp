#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include "soke/motion.hpp"

namespace soke {

/// N x 3 point set, one row per joint.
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// Topologically ordered articulated skeleton. Joint j carries three rotation
/// parameters; its position is parent position + parent global rotation * offset.
/// End sites are rigid points hung off leaf joints so that leaf rotations are
/// observable in joint-position metrics.
struct KinematicChain {
  std::vector<std::string> names;
  std::vector<int> parents;              // -1 for the root
  std::vector<Eigen::Vector3d> offsets;  // in the parent's frame (mm)
  std::vector<std::size_t> param_offsets;  // column of the joint's axis-angle in a frame
  Eigen::Vector3d root_position = Eigen::Vector3d::Zero();

  struct Site {
    std::string name;
    int joint = 0;
    Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  };
  std::vector<Site> sites;

  /// Indices (into the FK output rows) of upper-body points and hand points.
  std::vector<int> body_points;
  std::vector<int> hand_points;

  std::size_t num_joints() const { return parents.size(); }
  std::size_t num_points() const { return parents.size() + sites.size(); }
  int joint_index(const std::string& name) const;
  /// Mean length over all joint and site offsets (the root excluded).
  double mean_bone_length() const;
};

/// Toy upper-body + two-hand skeleton matching `layout`. Bone lengths are fixed
/// relative proportions rescaled so that the mean bone length is
/// `mean_bone_length_mm`. Requires layout.body_joints == 11.
KinematicChain make_default_chain(const PartLayout& layout, double mean_bone_length_mm = 100.0);

/// Rodrigues rotation of an axis-angle vector.
Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& v);
Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& r);

/// Joint positions followed by site positions (num_points x 3). Expression
/// parameters are ignored.
Points3 forward_kinematics(std::span<const float> frame, const KinematicChain& chain);
Points3 forward_kinematics(std::span<const double> frame, const KinematicChain& chain);

/// FK for every frame.
std::vector<Points3> forward_kinematics(const MotionSequence& seq, const KinematicChain& chain);

}  // namespace soke
