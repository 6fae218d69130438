#include "soke/kinematics.hpp"

#include <Eigen/Geometry>
#include <cmath>

#include "soke/error.hpp"

namespace soke {

namespace {

template <typename Scalar>
Points3 run_fk(std::span<const Scalar> frame, const KinematicChain& chain) {
  const std::size_t n = chain.num_joints();
  Points3 pts(chain.num_points(), 3);
  std::vector<Eigen::Matrix3d> global(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t c = chain.param_offsets[j];
    const Eigen::Vector3d aa(frame[c], frame[c + 1], frame[c + 2]);
    const Eigen::Matrix3d local = axis_angle_to_matrix(aa);
    const int parent = chain.parents[j];
    if (parent < 0) {
      global[j] = local;
      pts.row(j) = (chain.root_position + chain.offsets[j]).transpose();
    } else {
      global[j] = global[parent] * local;
      pts.row(j) = pts.row(parent) + (global[parent] * chain.offsets[j]).transpose();
    }
  }
  for (std::size_t s = 0; s < chain.sites.size(); ++s) {
    const auto& site = chain.sites[s];
    pts.row(n + s) = pts.row(site.joint) + (global[site.joint] * site.offset).transpose();
  }
  return pts;
}

}  // namespace

int KinematicChain::joint_index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  throw InputError("no joint named " + name);
}

double KinematicChain::mean_bone_length() const {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < parents.size(); ++j) {
    if (parents[j] < 0) continue;
    total += offsets[j].norm();
    ++count;
  }
  for (const auto& s : sites) {
    total += s.offset.norm();
    ++count;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

KinematicChain make_default_chain(const PartLayout& layout, double mean_bone_length_mm) {
  if (layout.body_joints != 11) {
    throw LayoutError("the toy skeleton has exactly 11 upper-body joints, layout asks for " +
                      std::to_string(layout.body_joints));
  }
  if (layout.hand_joints_per_hand == 0) throw LayoutError("hands need at least one joint");
  KinematicChain c;
  auto add = [&c](std::string name, int parent, Eigen::Vector3d off, std::size_t param) {
    c.names.push_back(std::move(name));
    c.parents.push_back(parent);
    c.offsets.push_back(off);
    c.param_offsets.push_back(param);
    return static_cast<int>(c.names.size() - 1);
  };
  // Viewer frame: x to the signer's left, y up, z towards the camera.
  const int pelvis = add("pelvis", -1, {0, 0, 0}, 0);
  const int spine = add("spine", pelvis, {0, 1.0, 0}, 3);
  const int chest = add("chest", spine, {0, 1.2, 0}, 6);
  const int neck = add("neck", chest, {0, 1.0, 0}, 9);
  const int head = add("head", neck, {0, 0.6, 0.1}, 12);
  const int l_sh = add("l_shoulder", chest, {1.5, 0.8, 0}, 15);
  const int l_el = add("l_elbow", l_sh, {2.6, 0, 0}, 18);
  const int l_wr = add("l_wrist", l_el, {2.4, 0, 0}, 21);
  const int r_sh = add("r_shoulder", chest, {-1.5, 0.8, 0}, 24);
  const int r_el = add("r_elbow", r_sh, {-2.6, 0, 0}, 27);
  const int r_wr = add("r_wrist", r_el, {-2.4, 0, 0}, 30);
  c.sites.push_back({"head_top", head, {0, 1.2, 0.2}});

  const std::size_t hand_joints = layout.hand_joints_per_hand;
  const std::size_t fingers = (hand_joints + 2) / 3;
  const double segment[3] = {0.45, 0.3, 0.25};
  auto add_hand = [&](const char* prefix, int wrist, double side, std::size_t param_base) {
    std::size_t placed = 0;
    for (std::size_t f = 0; f < fingers; ++f) {
      const double spread = fingers > 1 ? (static_cast<double>(f) / (fingers - 1) - 0.5) : 0.0;
      int parent = wrist;
      Eigen::Vector3d off(side * 0.8, 0.5 * spread, 0.1 * spread);
      for (std::size_t s = 0; s < 3 && placed < hand_joints; ++s, ++placed) {
        parent = add(std::string(prefix) + "_f" + std::to_string(f) + "_" + std::to_string(s), parent, off,
                     param_base + 3 * placed);
        off = Eigen::Vector3d(side * segment[s], 0, 0);
      }
      c.sites.push_back({std::string(prefix) + "_tip" + std::to_string(f), parent, Eigen::Vector3d(side * 0.2, 0, 0)});
    }
  };
  const Slice lh = layout.part_slice(Part::kLeftHand);
  const Slice rh = layout.part_slice(Part::kRightHand);
  const std::size_t first_lh = c.names.size();
  add_hand("lh", l_wr, 1.0, lh.offset);
  add_hand("rh", r_wr, -1.0, rh.offset);

  const double scale = mean_bone_length_mm / c.mean_bone_length();
  for (auto& o : c.offsets) o *= scale;
  for (auto& s : c.sites) s.offset *= scale;

  for (int j = 0; j < static_cast<int>(first_lh); ++j) c.body_points.push_back(j);
  c.body_points.push_back(static_cast<int>(c.num_joints()));  // head_top
  for (int j = static_cast<int>(first_lh); j < static_cast<int>(c.num_joints()); ++j) c.hand_points.push_back(j);
  for (std::size_t s = 1; s < c.sites.size(); ++s) c.hand_points.push_back(static_cast<int>(c.num_joints() + s));
  return c;
}

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& v) {
  const double angle = v.norm();
  if (angle < 1e-12) {
    Eigen::Matrix3d k;
    k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return Eigen::Matrix3d::Identity() + k;
  }
  return Eigen::AngleAxisd(angle, v / angle).toRotationMatrix();
}

Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

Points3 forward_kinematics(std::span<const float> frame, const KinematicChain& chain) {
  return run_fk(frame, chain);
}

Points3 forward_kinematics(std::span<const double> frame, const KinematicChain& chain) {
  return run_fk(frame, chain);
}

std::vector<Points3> forward_kinematics(const MotionSequence& seq, const KinematicChain& chain) {
  std::vector<Points3> out;
  out.reserve(seq.num_frames());
  for (std::size_t t = 0; t < seq.num_frames(); ++t) out.push_back(forward_kinematics(seq.frame(t), chain));
  return out;
}

}  // namespace soke
