#pragma once

#include <Eigen/Dense>
#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "morphco/ad.hpp"
#include "morphco/cage.hpp"
#include "morphco/geom.hpp"

#include "json.hpp"

// Hierarchical morphology parameterization for a 3-link planar arm.
//
// The 9-dimensional design vector holds (length scale, proximal width scale,
// distal width scale) per link. Each link carries an octagonal cage
// (rectangle corners plus edge midpoints); the design scalars move the cage
// handles through a fixed linear encoding, the cached mean-value weights
// carry the handles to the link's boundary polygon, and polygon integrals
// turn the deformed boundary into lengths, masses, inertias and the contact
// profile. Every stage is smooth, so the whole chain differentiates.

namespace morphco::morpho {

struct OutOfBounds : std::runtime_error {
  explicit OutOfBounds(const std::string& m) : std::runtime_error(m) {}
};
struct DegenerateShape : std::runtime_error {
  explicit DegenerateShape(const std::string& m) : std::runtime_error(m) {}
};

inline constexpr int kNumLinks = 3;
inline constexpr int kDesignDim = 3 * kNumLinks;
inline constexpr int kHandlesPerLink = 8;

struct MorphParams {
  Eigen::Matrix<double, kDesignDim, 1> values;

  static MorphParams ones() {
    MorphParams p;
    p.values.setOnes();
    return p;
  }
  static MorphParams from(const Eigen::VectorXd& v) {
    MorphParams p;
    p.values = v;
    return p;
  }
};

struct RobotSpec {
  int link_count = kNumLinks;
  double rest_link_length = 8.0;
  double rest_link_width = 1.2;
  double material_density = 0.01;   // mass per unit area
  Vec2d base_position{0.0, 0.0};
  int control_horizon = 240;
  double design_lo = 0.4;
  double design_hi = 2.5;
  int bottom_samples = 3;           // interior points on the lower edge
  double cage_margin_factor = 0.25; // cage margin as a fraction of the width

  void validate() const {
    if (link_count != kNumLinks) throw std::invalid_argument("link_count is fixed at 3");
    if (rest_link_length <= 0 || rest_link_width <= 0 || material_density <= 0)
      throw std::invalid_argument("geometric quantities must be strictly positive");
    if (design_lo >= design_hi || design_lo <= 0)
      throw std::invalid_argument("invalid design box");
  }
};

template <class T>
struct LinkParamsT {
  T length{};
  T mass{};
  T inertia{};   // about the proximal joint (link-frame origin)
  Vec2<T> com{}; // in the link frame
  std::vector<Vec2<T>> contact_profile;  // lower boundary, x-monotone
};

template <class T>
struct SimParamsT {
  std::array<LinkParamsT<T>, kNumLinks> links;
  Vec2<T> base{};
};

using SimParams = SimParamsT<double>;

// Flat layout shared by the morphology Jacobian and the simulator adjoint:
// per link [length, mass, inertia, com.x, com.y, profile_0.x, profile_0.y, ...]
// followed by [base.x, base.y].
inline int profile_point_count(const RobotSpec& spec) { return spec.bottom_samples + 2; }
inline int link_flat_size(const RobotSpec& spec) { return 5 + 2 * profile_point_count(spec); }
inline int sim_flat_size(const RobotSpec& spec) { return kNumLinks * link_flat_size(spec) + 2; }

template <class T>
void flatten_sim_params(const SimParamsT<T>& s, std::vector<T>& out) {
  out.clear();
  for (const auto& l : s.links) {
    out.push_back(l.length);
    out.push_back(l.mass);
    out.push_back(l.inertia);
    out.push_back(l.com.x);
    out.push_back(l.com.y);
    for (const auto& p : l.contact_profile) {
      out.push_back(p.x);
      out.push_back(p.y);
    }
  }
  out.push_back(s.base.x);
  out.push_back(s.base.y);
}

template <class T>
SimParamsT<T> unflatten_sim_params(const std::vector<T>& flat, int profile_points) {
  SimParamsT<T> s;
  std::size_t pos = 0;
  for (auto& l : s.links) {
    l.length = flat[pos++];
    l.mass = flat[pos++];
    l.inertia = flat[pos++];
    l.com.x = flat[pos++];
    l.com.y = flat[pos++];
    l.contact_profile.resize(static_cast<std::size_t>(profile_points));
    for (auto& p : l.contact_profile) {
      p.x = flat[pos++];
      p.y = flat[pos++];
    }
  }
  s.base.x = flat[pos++];
  s.base.y = flat[pos++];
  return s;
}

// Rest geometry shared by all three links, with the deformation weights
// computed once at construction and reused for every design evaluation.
class LinkTemplate {
 public:
  explicit LinkTemplate(const RobotSpec& spec)
      : cage_(make_cage(spec)), mesh_(make_mesh(spec)), weights_(cage::compute_weights(cage_, mesh_)) {
    const int nb = spec.bottom_samples;
    proximal_idx_ = 0;
    distal_idx_ = nb + 3;
    profile_begin_ = 1;
    profile_end_ = nb + 3;  // exclusive
    rest_area_ = spec.rest_link_length * spec.rest_link_width;
  }

  const cage::Cage& cage() const { return cage_; }
  const cage::Mesh& mesh() const { return mesh_; }
  const cage::DeformWeights& weights() const { return weights_; }
  int proximal_index() const { return proximal_idx_; }
  int distal_index() const { return distal_idx_; }
  int profile_begin() const { return profile_begin_; }
  int profile_end() const { return profile_end_; }
  double rest_area() const { return rest_area_; }

  // Handle order (counterclockwise): BL, bottom-mid, BR, right-mid, TR,
  // top-mid, TL, left-mid. The y scale of the left handles follows the
  // proximal width scale, the right handles the distal one, and the two
  // mid-edge handles the average of both.
  static std::vector<Vec2d> rest_handles(const RobotSpec& spec) {
    const double L = spec.rest_link_length;
    const double mg = spec.cage_margin_factor * spec.rest_link_width;
    const double hy = 0.5 * spec.rest_link_width + mg;
    return {{-mg, -hy}, {0.5 * L, -hy}, {L + mg, -hy}, {L + mg, 0.0},
            {L + mg, hy}, {0.5 * L, hy}, {-mg, hy},    {-mg, 0.0}};
  }

  // Boundary loop (counterclockwise): proximal anchor, lower-left corner,
  // lower edge, lower-right corner, distal anchor, upper-right corner,
  // upper edge, upper-left corner.
  static std::vector<Vec2d> rest_boundary(const RobotSpec& spec) {
    const double L = spec.rest_link_length;
    const double h = 0.5 * spec.rest_link_width;
    const int nb = spec.bottom_samples;
    std::vector<Vec2d> v;
    v.push_back({0.0, 0.0});
    v.push_back({0.0, -h});
    for (int k = 1; k <= nb; ++k) v.push_back({L * k / (nb + 1), -h});
    v.push_back({L, -h});
    v.push_back({L, 0.0});
    v.push_back({L, h});
    for (int k = nb; k >= 1; --k) v.push_back({L * k / (nb + 1), h});
    v.push_back({0.0, h});
    return v;
  }

 private:
  static cage::Cage make_cage(const RobotSpec& spec) { return cage::Cage(rest_handles(spec)); }
  static cage::Mesh make_mesh(const RobotSpec& spec) { return cage::Mesh(rest_boundary(spec)); }

  cage::Cage cage_;
  cage::Mesh mesh_;
  cage::DeformWeights weights_;
  int proximal_idx_, distal_idx_, profile_begin_, profile_end_;
  double rest_area_;
};

namespace detail {

template <class T>
void check_bounds(const Eigen::Matrix<T, kDesignDim, 1>&) {}

inline void check_bounds_values(const MorphParams& p, const RobotSpec& spec) {
  for (int i = 0; i < kDesignDim; ++i) {
    const double v = p.values[i];
    if (!(v >= spec.design_lo && v <= spec.design_hi))
      throw OutOfBounds("design entry " + std::to_string(i) + " = " + std::to_string(v) +
                        " outside [" + std::to_string(spec.design_lo) + ", " +
                        std::to_string(spec.design_hi) + "]");
  }
}

}  // namespace detail

// The fixed linear encoding from a link's three design scalars to its eight
// handle positions.
template <class T>
std::array<Vec2<T>, kHandlesPerLink> link_handles(const RobotSpec& spec, const T& len_scale,
                                                  const T& wprox_scale, const T& wdist_scale) {
  const std::vector<Vec2d> rest = LinkTemplate::rest_handles(spec);
  const T wmid = (wprox_scale + wdist_scale) * T(0.5);
  // y-scale per handle in the order documented on LinkTemplate
  const std::array<const T*, kHandlesPerLink> yscale = {&wprox_scale, &wmid,        &wdist_scale,
                                                        &wdist_scale, &wdist_scale, &wmid,
                                                        &wprox_scale, &wprox_scale};
  std::array<Vec2<T>, kHandlesPerLink> out;
  for (int j = 0; j < kHandlesPerLink; ++j)
    out[static_cast<std::size_t>(j)] = {len_scale * T(rest[static_cast<std::size_t>(j)].x),
                                        (*yscale[static_cast<std::size_t>(j)]) *
                                            T(rest[static_cast<std::size_t>(j)].y)};
  return out;
}

template <class T>
std::vector<std::array<Vec2<T>, kHandlesPerLink>> expand_design_t(
    const Eigen::Matrix<T, kDesignDim, 1>& p, const RobotSpec& spec) {
  std::vector<std::array<Vec2<T>, kHandlesPerLink>> links;
  links.reserve(kNumLinks);
  for (int i = 0; i < kNumLinks; ++i)
    links.push_back(link_handles(spec, p[3 * i], p[3 * i + 1], p[3 * i + 2]));
  return links;
}

inline std::vector<std::array<Vec2d, kHandlesPerLink>> expand_design(const MorphParams& p,
                                                                     const RobotSpec& spec) {
  spec.validate();
  detail::check_bounds_values(p, spec);
  return expand_design_t<double>(p.values, spec);
}

// Full chain for one scalar type. Callers are expected to have validated the
// bounds; the geometric degeneracy checks run on plain values.
template <class T>
SimParamsT<T> derive_sim_params_t(const Eigen::Matrix<T, kDesignDim, 1>& p, const RobotSpec& spec,
                                  const LinkTemplate& tpl) {
  SimParamsT<T> s;
  s.base = {T(spec.base_position.x), T(spec.base_position.y)};
  const auto handles = expand_design_t<T>(p, spec);
  for (int i = 0; i < kNumLinks; ++i) {
    std::vector<Vec2<T>> h(handles[static_cast<std::size_t>(i)].begin(),
                           handles[static_cast<std::size_t>(i)].end());
    std::vector<Vec2<T>> pts = cage::deform(tpl.weights(), h);

    // degeneracy checks on values only
    std::vector<Vec2d> vals(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k) vals[k] = {val(pts[k].x), val(pts[k].y)};
    const double area_val = polygon_area(vals);
    if (!(area_val > 1e-6 * tpl.rest_area()))
      throw DegenerateShape("link " + std::to_string(i) + " deformed area " +
                            std::to_string(area_val) + " below threshold");
    if (!polygon_is_simple(vals, cage::Cage::simple_eps(vals)))
      throw DegenerateShape("link " + std::to_string(i) + " deformed polygon self-intersects");

    LinkParamsT<T>& link = s.links[static_cast<std::size_t>(i)];
    const Vec2<T> prox = pts[static_cast<std::size_t>(tpl.proximal_index())];
    const Vec2<T> dist = pts[static_cast<std::size_t>(tpl.distal_index())];
    link.length = norm(dist - prox);
    const T area = polygon_area(pts);
    link.mass = T(spec.material_density) * area;
    link.inertia = T(spec.material_density) * polygon_second_moment_origin(pts);
    link.com = polygon_centroid(pts);
    link.contact_profile.assign(pts.begin() + tpl.profile_begin(), pts.begin() + tpl.profile_end());
    for (std::size_t k = 1; k < link.contact_profile.size(); ++k)
      if (!(val(link.contact_profile[k].x) > val(link.contact_profile[k - 1].x)))
        throw DegenerateShape("link " + std::to_string(i) + " contact profile not x-monotone");
  }
  return s;
}

// Convenience wrapper owning the cached link template. One instance per
// optimization run; evaluations never recompute the deformation weights.
class MorphModel {
 public:
  explicit MorphModel(RobotSpec spec) : spec_(std::move(spec)), tpl_(spec_) { spec_.validate(); }

  const RobotSpec& spec() const { return spec_; }
  const LinkTemplate& link_template() const { return tpl_; }

  SimParams derive(const MorphParams& p) const {
    detail::check_bounds_values(p, spec_);
    return derive_sim_params_t<double>(p.values, spec_, tpl_);
  }

  // d(flat S)/d(design vector), via one forward-mode pass.
  Eigen::MatrixXd jacobian(const MorphParams& p) const {
    detail::check_bounds_values(p, spec_);
    using D = ad::Dual<kDesignDim>;
    Eigen::Matrix<D, kDesignDim, 1> pd;
    for (int k = 0; k < kDesignDim; ++k) pd[k] = D::seed(p.values[k], k);
    const SimParamsT<D> s = derive_sim_params_t<D>(pd, spec_, tpl_);
    std::vector<D> flat;
    flatten_sim_params(s, flat);
    Eigen::MatrixXd j(static_cast<int>(flat.size()), kDesignDim);
    for (int r = 0; r < static_cast<int>(flat.size()); ++r)
      for (int c = 0; c < kDesignDim; ++c) j(r, c) = flat[static_cast<std::size_t>(r)].d[static_cast<std::size_t>(c)];
    return j;
  }

 private:
  RobotSpec spec_;
  LinkTemplate tpl_;
};

inline SimParams derive_sim_params(const MorphParams& p, const RobotSpec& spec) {
  spec.validate();
  return MorphModel(spec).derive(p);
}

inline Eigen::MatrixXd sim_params_jacobian(const MorphParams& p, const RobotSpec& spec) {
  spec.validate();
  return MorphModel(spec).jacobian(p);
}

// JSON snapshot used by the harness for visual inspection of morphologies.
inline nlohmann::json snapshot_json(const MorphParams& p, const MorphModel& model) {
  const SimParams s = model.derive(p);
  nlohmann::json j;
  j["design_vector"] = std::vector<double>(p.values.data(), p.values.data() + kDesignDim);
  nlohmann::json links = nlohmann::json::array();
  const auto handles = expand_design_t<double>(p.values, model.spec());
  for (int i = 0; i < kNumLinks; ++i) {
    std::vector<Vec2d> h(handles[static_cast<std::size_t>(i)].begin(),
                         handles[static_cast<std::size_t>(i)].end());
    const auto pts = cage::deform(model.link_template().weights(), h);
    nlohmann::json poly = nlohmann::json::array();
    for (const auto& q : pts) poly.push_back({q.x, q.y});
    links.push_back({{"length", s.links[static_cast<std::size_t>(i)].length},
                     {"mass", s.links[static_cast<std::size_t>(i)].mass},
                     {"inertia", s.links[static_cast<std::size_t>(i)].inertia},
                     {"polygon", poly}});
  }
  j["links"] = links;
  return j;
}

}  // namespace morphco::morpho
