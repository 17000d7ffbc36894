// Parametric object models: each class is a union of analytic primitives whose
// surfaces are sampled on a regular parameter grid, so every sample carries an
// exact outward normal and its part index.

#include "taskgrasp/scene.hpp"

#include "taskgrasp/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

namespace taskgrasp {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kMinAngularSegments = 48;

int count_for(double length, double spacing, int minimum = 1) {
  return std::max(minimum, static_cast<int>(std::ceil(length / spacing - 1e-9)));
}

double deg(double d) { return d * kPi / 180.0; }

/// Orthonormal pair perpendicular to a unit axis.
std::pair<Vec3, Vec3> perpendicular_basis(const Vec3& axis) {
  const Vec3 helper = std::abs(axis.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  Vec3 u = helper.cross(axis).normalized();
  Vec3 v = axis.cross(u);
  return {u, v};
}

using Samples = std::vector<SurfaceSample>;

void cylinder_side(Samples& out, const Vec3& base, const Vec3& axis, double r, double len, double s, int part,
                   bool inward = false) {
  const auto [u, v] = perpendicular_basis(axis);
  const int n_theta = count_for(2 * kPi * r, s, kMinAngularSegments);
  const int n_len = count_for(len, s);
  for (int i = 0; i < n_len; ++i) {
    const Vec3 c = base + axis * (len * (i + 0.5) / n_len);
    for (int j = 0; j < n_theta; ++j) {
      const double th = 2 * kPi * (j + 0.5) / n_theta;
      const Vec3 radial = std::cos(th) * u + std::sin(th) * v;
      out.push_back({c + r * radial, inward ? Vec3(-radial) : radial, part});
    }
  }
}

void annulus(Samples& out, const Vec3& center, const Vec3& normal, double r_in, double r_out, double s, int part) {
  const auto [u, v] = perpendicular_basis(normal);
  const int n_r = count_for(r_out - r_in, s);
  for (int k = 0; k < n_r; ++k) {
    const double rho = r_in + (r_out - r_in) * (k + 0.5) / n_r;
    const int n = count_for(2 * kPi * rho, s, 6);
    for (int j = 0; j < n; ++j) {
      const double th = 2 * kPi * (j + 0.5) / n + 0.37 * k;
      out.push_back({center + rho * (std::cos(th) * u + std::sin(th) * v), normal, part});
    }
  }
}

/// Zone of a sphere between polar angles phi0..phi1 measured from `pole`.
void sphere_zone(Samples& out, const Vec3& center, const Vec3& pole, double r, double phi0, double phi1, double s,
                 int part, bool inward = false) {
  const auto [u, v] = perpendicular_basis(pole);
  const int n_phi = count_for(r * (phi1 - phi0), s, 2);
  for (int i = 0; i < n_phi; ++i) {
    const double phi = phi0 + (phi1 - phi0) * (i + 0.5) / n_phi;
    const int n = count_for(2 * kPi * r * std::sin(phi), s, 6);
    for (int j = 0; j < n; ++j) {
      const double th = 2 * kPi * (j + 0.5) / n;
      const Vec3 dir = std::cos(phi) * pole + std::sin(phi) * (std::cos(th) * u + std::sin(th) * v);
      out.push_back({center + r * dir, inward ? Vec3(-dir) : dir, part});
    }
  }
}

/// Torus segment whose centre line is the arc centre + R (cos t e1 + sin t e2), t in [t0, t1].
void torus_segment(Samples& out, const Vec3& center, const Vec3& e1, const Vec3& e2, double R, double r, double t0,
                   double t1, double s, int part) {
  const Vec3 binormal = e1.cross(e2);
  const int n_major = count_for((R + r) * (t1 - t0), s, 8);
  const int n_minor = count_for(2 * kPi * r, s, kMinAngularSegments);
  for (int i = 0; i < n_major; ++i) {
    const double t = t0 + (t1 - t0) * (i + 0.5) / n_major;
    const Vec3 radial = std::cos(t) * e1 + std::sin(t) * e2;
    const Vec3 c = center + R * radial;
    for (int j = 0; j < n_minor; ++j) {
      const double psi = 2 * kPi * (j + 0.5) / n_minor;
      const Vec3 n = std::cos(psi) * radial + std::sin(psi) * binormal;
      out.push_back({c + r * n, n, part});
    }
  }
}

void ellipsoid(Samples& out, const Vec3& center, const Vec3& semi, double s, int part) {
  const double a = semi.x(), b = semi.y(), c = semi.z();
  const double longest = std::max({a, b, c});
  const int n_phi = count_for(kPi * longest, s, 4);
  for (int i = 0; i < n_phi; ++i) {
    const double phi = kPi * (i + 0.5) / n_phi;
    const int n = count_for(2 * kPi * std::max(a, b) * std::sin(phi), s, 6);
    for (int j = 0; j < n; ++j) {
      const double th = 2 * kPi * (j + 0.5) / n;
      const Vec3 p(a * std::sin(phi) * std::cos(th), b * std::sin(phi) * std::sin(th), c * std::cos(phi));
      const Vec3 grad(p.x() / (a * a), p.y() / (b * b), p.z() / (c * c));
      out.push_back({center + p, grad.normalized(), part});
    }
  }
}

void box(Samples& out, const Vec3& center, const Vec3& half, double s, int part) {
  for (int axis = 0; axis < 3; ++axis) {
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    const int n1 = count_for(2 * half[a1], s), n2 = count_for(2 * half[a2], s);
    for (int sign : {-1, 1}) {
      Vec3 normal = Vec3::Zero();
      normal[axis] = sign;
      for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j) {
          Vec3 p = center;
          p[axis] += sign * half[axis];
          p[a1] += -half[a1] + 2 * half[a1] * (i + 0.5) / n1;
          p[a2] += -half[a2] + 2 * half[a2] * (j + 0.5) / n2;
          out.push_back({p, normal, part});
        }
    }
  }
}

// Object models in their own frame: z up, resting on z = 0. Dimensions in meters.

Samples mug(double s) {
  Samples out;
  const int body = 0, handle = 1;
  cylinder_side(out, {0, 0, 0}, Vec3::UnitZ(), 0.040, 0.095, s, body);
  cylinder_side(out, {0, 0, 0.006}, Vec3::UnitZ(), 0.036, 0.089, s, body, true);
  annulus(out, {0, 0, 0.095}, Vec3::UnitZ(), 0.036, 0.040, s, body);
  annulus(out, {0, 0, 0.006}, Vec3::UnitZ(), 0.0, 0.036, s, body);
  annulus(out, {0, 0, 0.0}, -Vec3::UnitZ(), 0.0, 0.040, s, body);
  torus_segment(out, {0.054, 0, 0.050}, Vec3::UnitX(), Vec3::UnitZ(), 0.026, 0.007, deg(-105), deg(105), s, handle);
  return out;
}

Samples spoon(double s) {
  Samples out;
  const int handle = 0, bowl = 1;
  cylinder_side(out, {0, 0, 0.007}, Vec3::UnitX(), 0.007, 0.13, s, handle);
  annulus(out, {0, 0, 0.007}, -Vec3::UnitX(), 0.0, 0.007, s, handle);
  ellipsoid(out, {0.155, 0, 0.009}, {0.028, 0.019, 0.009}, s, bowl);
  return out;
}

Samples hammer(double s) {
  Samples out;
  const int handle = 0, head = 1;
  cylinder_side(out, {0, 0, 0.016}, Vec3::UnitX(), 0.008, 0.234, s, handle);
  annulus(out, {0, 0, 0.016}, -Vec3::UnitX(), 0.0, 0.008, s, handle);
  box(out, {0.25, 0, 0.016}, {0.016, 0.055, 0.016}, s, head);
  return out;
}

Samples screwdriver(double s) {
  Samples out;
  const int handle = 0, shaft = 1;
  cylinder_side(out, {0, 0, 0.008}, Vec3::UnitX(), 0.008, 0.10, s, handle);
  annulus(out, {0, 0, 0.008}, -Vec3::UnitX(), 0.0, 0.008, s, handle);
  annulus(out, {0.10, 0, 0.008}, Vec3::UnitX(), 0.003, 0.008, s, handle);
  cylinder_side(out, {0.10, 0, 0.008}, Vec3::UnitX(), 0.003, 0.11, s, shaft);
  annulus(out, {0.21, 0, 0.008}, Vec3::UnitX(), 0.0, 0.003, s, shaft);
  return out;
}

Samples bowl(double s) {
  Samples out;
  const int body = 0, rim = 1;
  const Vec3 c{0, 0, 0.072};
  const double foot = deg(25);
  sphere_zone(out, c, -Vec3::UnitZ(), 0.072, foot, deg(90), s, body);
  annulus(out, {0, 0, 0.072 - 0.072 * std::cos(foot)}, -Vec3::UnitZ(), 0.0, 0.072 * std::sin(foot), s, body);
  sphere_zone(out, c, -Vec3::UnitZ(), 0.060, 0.0, deg(90), s, body, true);
  torus_segment(out, c, Vec3::UnitX(), Vec3::UnitY(), 0.066, 0.006, 0.0, 2 * kPi, s, rim);
  return out;
}

Samples bottle(double s) {
  Samples out;
  const int body = 0, neck = 1, cap = 2;
  const double h = 0.030;
  cylinder_side(out, {0, 0, h}, Vec3::UnitX(), 0.030, 0.14, s, body);
  annulus(out, {0, 0, h}, -Vec3::UnitX(), 0.0, 0.030, s, body);
  annulus(out, {0.14, 0, h}, Vec3::UnitX(), 0.008, 0.030, s, body);
  cylinder_side(out, {0.14, 0, h}, Vec3::UnitX(), 0.008, 0.05, s, neck);
  cylinder_side(out, {0.19, 0, h}, Vec3::UnitX(), 0.0095, 0.02, s, cap);
  annulus(out, {0.19, 0, h}, -Vec3::UnitX(), 0.008, 0.0095, s, cap);
  annulus(out, {0.21, 0, h}, Vec3::UnitX(), 0.0, 0.0095, s, cap);
  return out;
}

Samples pan(double s) {
  Samples out;
  const int body = 0, handle = 1;
  annulus(out, {0, 0, 0}, -Vec3::UnitZ(), 0.0, 0.10, s, body);
  annulus(out, {0, 0, 0.004}, Vec3::UnitZ(), 0.0, 0.095, s, body);
  cylinder_side(out, {0, 0, 0}, Vec3::UnitZ(), 0.10, 0.035, s, body);
  cylinder_side(out, {0, 0, 0.004}, Vec3::UnitZ(), 0.095, 0.031, s, body, true);
  annulus(out, {0, 0, 0.035}, Vec3::UnitZ(), 0.095, 0.10, s, body);
  cylinder_side(out, {0.10, 0, 0.025}, Vec3::UnitX(), 0.008, 0.16, s, handle);
  annulus(out, {0.26, 0, 0.025}, Vec3::UnitX(), 0.0, 0.008, s, handle);
  return out;
}

Samples local_samples(ObjectClass c, double s) {
  switch (c) {
    case ObjectClass::Mug: return mug(s);
    case ObjectClass::Spoon: return spoon(s);
    case ObjectClass::Hammer: return hammer(s);
    case ObjectClass::Screwdriver: return screwdriver(s);
    case ObjectClass::Bowl: return bowl(s);
    case ObjectClass::Bottle: return bottle(s);
    case ObjectClass::Pan: return pan(s);
  }
  return {};
}

}  // namespace

std::string_view to_string(ObjectClass c) {
  switch (c) {
    case ObjectClass::Mug: return "mug";
    case ObjectClass::Spoon: return "spoon";
    case ObjectClass::Hammer: return "hammer";
    case ObjectClass::Screwdriver: return "screwdriver";
    case ObjectClass::Bowl: return "bowl";
    case ObjectClass::Bottle: return "bottle";
    case ObjectClass::Pan: return "pan";
  }
  return "unknown";
}

std::optional<ObjectClass> parse_object_class(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  for (auto c : kAllClasses)
    if (to_string(c) == lower) return c;
  return std::nullopt;
}

bool PartLabel::affords(std::string_view tag) const {
  return std::find(affordances.begin(), affordances.end(), tag) != affordances.end();
}

const std::vector<PartLabel>& class_parts(ObjectClass c) {
  static const std::vector<PartLabel> mug{{"body", {"contain", "pour"}}, {"handle", {"grasp"}}};
  static const std::vector<PartLabel> spoon{{"handle", {"grasp"}}, {"bowl", {"scoop", "contain"}}};
  static const std::vector<PartLabel> hammer{{"handle", {"grasp"}}, {"head", {"pound"}}};
  static const std::vector<PartLabel> screwdriver{{"handle", {"grasp"}}, {"shaft", {"screw"}}};
  static const std::vector<PartLabel> bowl{{"body", {"contain", "pour"}}, {"rim", {"grasp"}}};
  static const std::vector<PartLabel> bottle{{"body", {"contain"}}, {"neck", {"grasp", "pour"}}, {"cap", {"screw"}}};
  static const std::vector<PartLabel> pan{{"body", {"contain"}}, {"handle", {"grasp"}}};
  switch (c) {
    case ObjectClass::Mug: return mug;
    case ObjectClass::Spoon: return spoon;
    case ObjectClass::Hammer: return hammer;
    case ObjectClass::Screwdriver: return screwdriver;
    case ObjectClass::Bowl: return bowl;
    case ObjectClass::Bottle: return bottle;
    case ObjectClass::Pan: return pan;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown object class");
}

std::optional<int> part_index(ObjectClass c, std::string_view part_name) {
  const auto& parts = class_parts(c);
  for (std::size_t i = 0; i < parts.size(); ++i)
    if (parts[i].name == part_name) return static_cast<int>(i);
  return std::nullopt;
}

std::vector<SurfaceSample> sample_object(ObjectClass c, const RigidTransform& pose, double scale, double spacing) {
  if (!(spacing > 0)) throw Error(ErrorCode::InvalidArgument, "sample spacing must be positive");
  if (!(scale > 0)) throw Error(ErrorCode::InvalidArgument, "scale must be positive");
  // Sample the unscaled model finely enough that the scaled spacing stays below `spacing`.
  Samples local = local_samples(c, spacing / std::max(scale, 1.0));
  const Mat3 rot = pose.linear();
  for (auto& sample : local) {
    sample.point = pose * (scale * sample.point);
    sample.normal = (rot * sample.normal).normalized();
  }
  return local;
}

namespace primitives {

std::vector<SurfaceSample> sphere(const Vec3& center, double radius, double spacing, int part) {
  Samples out;
  sphere_zone(out, center, Vec3::UnitZ(), radius, 0.0, kPi, spacing, part);
  return out;
}

std::vector<SurfaceSample> cylinder(const Vec3& base, const Vec3& axis, double radius, double length, double spacing,
                                    int part, bool with_caps) {
  Samples out;
  const Vec3 a = axis.normalized();
  cylinder_side(out, base, a, radius, length, spacing, part);
  if (with_caps) {
    annulus(out, base, -a, 0.0, radius, spacing, part);
    annulus(out, base + a * length, a, 0.0, radius, spacing, part);
  }
  return out;
}

double cylinder_area(double radius, double length, bool with_caps) {
  return 2 * kPi * radius * length + (with_caps ? 2 * kPi * radius * radius : 0.0);
}

}  // namespace primitives

}  // namespace taskgrasp
