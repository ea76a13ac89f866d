#pragma once

// Value-semantic linear algebra for the AR engine: small vectors/matrices,
// rigid poses, the planar manipulation map, ray casting, pinhole projection,
// homography estimation and plane-based pose recovery.
//
// Frames and conventions
//   world   right-handed, Y up; manipulation happens in planes Y = const.
//   camera  x right, y down, z forward (pixels grow right/down).
//   Pose    maps points from a source frame into a target frame:
//           p_target = rotation * p_src + translation.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "solar_ar/error.hpp"

namespace solar_ar {

namespace tolerance {
inline constexpr double kGeometric = 1e-9;
inline constexpr double kProjective = 1e-8;
inline constexpr double kUnitLength = 1e-12;
inline constexpr double kRankRatio = 1e-10;
}  // namespace tolerance

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
  friend constexpr bool operator==(Vec2, Vec2) = default;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr bool operator==(Vec3, Vec3) = default;
};

inline constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline constexpr Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

inline Vec3 normalized(Vec3 a) {
  const double n = norm(a);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorCode::kDegenerate, "cannot normalize a zero or non-finite vector");
  }
  return (1.0 / n) * a;
}

inline bool is_finite(Vec2 a) { return std::isfinite(a.x) && std::isfinite(a.y); }
inline bool is_finite(Vec3 a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

/// 3x3 matrix, row-major.
struct Mat3 {
  std::array<double, 9> m{};

  static constexpr Mat3 identity() { return {{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
  static constexpr Mat3 diagonal(double a, double b, double c) {
    return {{a, 0, 0, 0, b, 0, 0, 0, c}};
  }
  static constexpr Mat3 from_columns(Vec3 c0, Vec3 c1, Vec3 c2) {
    return {{c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z}};
  }

  constexpr double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }
  constexpr double operator()(int r, int c) const {
    return m[static_cast<std::size_t>(r * 3 + c)];
  }

  constexpr Vec3 column(int c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }
  constexpr Vec3 row(int r) const { return {(*this)(r, 0), (*this)(r, 1), (*this)(r, 2)}; }

  constexpr Mat3 transposed() const {
    Mat3 t;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  constexpr double determinant() const {
    const auto& a = m;
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
           a[2] * (a[3] * a[7] - a[4] * a[6]);
  }

  Mat3 inverse() const {
    const double det = determinant();
    double scale = 0.0;
    for (double v : m) scale = std::max(scale, std::abs(v));
    if (!(std::abs(det) > 1e-300) || !std::isfinite(det) ||
        std::abs(det) <= 1e-14 * scale * scale * scale) {
      throw Error(ErrorCode::kSingular, "matrix is singular");
    }
    const auto& a = m;
    Mat3 inv{{a[4] * a[8] - a[5] * a[7], a[2] * a[7] - a[1] * a[8], a[1] * a[5] - a[2] * a[4],
              a[5] * a[6] - a[3] * a[8], a[0] * a[8] - a[2] * a[6], a[2] * a[3] - a[0] * a[5],
              a[3] * a[7] - a[4] * a[6], a[1] * a[6] - a[0] * a[7], a[0] * a[4] - a[1] * a[3]}};
    for (double& v : inv.m) v /= det;
    return inv;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : m) s += v * v;
    return std::sqrt(s);
  }

  bool is_finite() const {
    return std::all_of(m.begin(), m.end(), [](double v) { return std::isfinite(v); });
  }

  friend constexpr Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        out(r, c) = a(r, 0) * b(0, c) + a(r, 1) * b(1, c) + a(r, 2) * b(2, c);
    return out;
  }
  friend constexpr Vec3 operator*(const Mat3& a, Vec3 v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
            a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
  }
  friend constexpr Mat3 operator+(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (std::size_t i = 0; i < 9; ++i) out.m[i] = a.m[i] + b.m[i];
    return out;
  }
  friend constexpr Mat3 operator-(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (std::size_t i = 0; i < 9; ++i) out.m[i] = a.m[i] - b.m[i];
    return out;
  }
  friend constexpr Mat3 operator*(double s, const Mat3& a) {
    Mat3 out;
    for (std::size_t i = 0; i < 9; ++i) out.m[i] = s * a.m[i];
    return out;
  }
  friend constexpr bool operator==(const Mat3&, const Mat3&) = default;
};

/// Applies a projective 3x3 map to a 2D point (homogeneous divide).
inline Vec2 apply_homography(const Mat3& h, Vec2 p) {
  const Vec3 q = h * Vec3{p.x, p.y, 1.0};
  return {q.x / q.z, q.y / q.z};
}

/// Rotation about a (not necessarily unit) axis, Rodrigues form.
inline Mat3 axis_angle(Vec3 axis, double angle) {
  const Vec3 k = normalized(axis);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double v = 1.0 - c;
  return {{c + k.x * k.x * v, k.x * k.y * v - k.z * s, k.x * k.z * v + k.y * s,
           k.y * k.x * v + k.z * s, c + k.y * k.y * v, k.y * k.z * v - k.x * s,
           k.z * k.x * v - k.y * s, k.z * k.y * v + k.x * s, c + k.z * k.z * v}};
}

inline Mat3 rotation_y(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {{c, 0, s, 0, 1, 0, -s, 0, c}};
}

/// Geodesic angle of a rotation matrix, robust near 0 and pi.
inline double rotation_angle(const Mat3& r) {
  const double cos_part = 0.5 * (r(0, 0) + r(1, 1) + r(2, 2) - 1.0);
  const double sin_part = 0.5 * norm(Vec3{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)});
  return std::atan2(sin_part, cos_part);
}

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double w = std::remainder(a, kTwoPi);
  if (w <= -std::numbers::pi) w += kTwoPi;
  return w;
}

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion from_matrix(const Mat3& r) {
    Quaternion q;
    const double tr = r(0, 0) + r(1, 1) + r(2, 2);
    if (tr > 0.0) {
      const double s = 2.0 * std::sqrt(tr + 1.0);
      q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
      const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
      q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
    } else if (r(1, 1) > r(2, 2)) {
      const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
      q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
    } else {
      const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
      q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
    }
    return q.normalized();
  }

  Quaternion normalized() const {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (!(n > 0.0)) throw Error(ErrorCode::kDegenerate, "zero quaternion");
    return {w / n, x / n, y / n, z / n};
  }

  Mat3 to_matrix() const {
    const Quaternion q = normalized();
    const double ww = q.w * q.w, xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
    const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
    const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
    return {{ww + xx - yy - zz, 2 * (xy - wz), 2 * (xz + wy), 2 * (xy + wz), ww - xx + yy - zz,
             2 * (yz - wx), 2 * (xz - wy), 2 * (yz + wx), ww - xx - yy + zz}};
  }
};

/// Normalized linear interpolation on the shorter arc.
inline Quaternion nlerp(const Quaternion& a, Quaternion b, double s) {
  const double d = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
  if (d < 0.0) b = {-b.w, -b.x, -b.y, -b.z};
  return Quaternion{a.w + s * (b.w - a.w), a.x + s * (b.x - a.x), a.y + s * (b.y - a.y),
                    a.z + s * (b.z - a.z)}
      .normalized();
}

/// Rigid transform. rotation is orthonormal with det +1.
struct Pose {
  Mat3 rotation = Mat3::identity();
  Vec3 translation{};

  static Pose identity() { return {}; }

  Vec3 apply(Vec3 p) const { return rotation * p + translation; }

  Pose inverse() const {
    const Mat3 rt = rotation.transposed();
    return {rt, -(rt * translation)};
  }

  /// (a * b).apply(p) == a.apply(b.apply(p))
  friend Pose operator*(const Pose& a, const Pose& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
  }
  friend bool operator==(const Pose&, const Pose&) = default;

  bool is_valid(double eps = tolerance::kGeometric) const {
    if (!rotation.is_finite() || !is_finite(translation)) return false;
    const Mat3 should_be_identity = rotation.transposed() * rotation - Mat3::identity();
    for (double v : should_be_identity.m)
      if (std::abs(v) > eps) return false;
    return std::abs(rotation.determinant() - 1.0) <= eps;
  }
};

class Ray {
 public:
  /// direction is normalized; zero or non-finite inputs are rejected.
  Ray(Vec3 origin, Vec3 direction) : origin_(origin), direction_(normalized(direction)) {
    if (!is_finite(origin)) throw Error(ErrorCode::kInvalidArgument, "ray origin not finite");
  }

  Vec3 origin() const { return origin_; }
  Vec3 direction() const { return direction_; }
  Vec3 at(double t) const { return origin_ + t * direction_; }

 private:
  Vec3 origin_;
  Vec3 direction_;
};

struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
      throw Error(ErrorCode::kInvalidArgument, "focal lengths must be positive");
    }
    if (width <= 0 || height <= 0 || !(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
      throw Error(ErrorCode::kInvalidArgument, "principal point must lie inside the sensor");
    }
  }

  Mat3 matrix() const { return {{fx, 0, cx, 0, fy, cy, 0, 0, 1}}; }
  Mat3 inverse_matrix() const {
    return {{1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1}};
  }
  bool contains(Vec2 px) const { return px.x >= 0.0 && px.x < width && px.y >= 0.0 && px.y < height; }

  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

// ---------------------------------------------------------------------------
// Planar manipulation

/// A point of a horizontal plane in (Z, X) order, the order the manipulation
/// map is written in.
struct PlaneZX {
  double z = 0.0;
  double x = 0.0;
  friend constexpr bool operator==(PlaneZX, PlaneZX) = default;
};

/// Yaw about +Y by phi, then translation by dz along Z and dx along X.
struct ManipulationDelta {
  double phi = 0.0;
  double dz = 0.0;
  double dx = 0.0;
};

/// [Z1 X1]^T = [[cos phi, -sin phi], [sin phi, cos phi]] [Z0 X0]^T + [dz dx]^T
inline PlaneZX rotate_y_translate(PlaneZX p, const ManipulationDelta& d) {
  const double c = std::cos(d.phi);
  const double s = std::sin(d.phi);
  return {c * p.z - s * p.x + d.dz, s * p.z + c * p.x + d.dx};
}

/// Same map on a 3D point; y is carried through untouched.
inline Vec3 rotate_y_translate(Vec3 p, const ManipulationDelta& d) {
  const PlaneZX q = rotate_y_translate(PlaneZX{p.z, p.x}, d);
  return {q.x, p.y, q.z};
}

// ---------------------------------------------------------------------------
// Ray casting

struct PlaneHit {
  Vec3 point;
  double t = 0.0;
};

inline std::optional<PlaneHit> ray_plane_intersect(const Ray& ray, double plane_y) {
  const double dy = ray.direction().y;
  if (std::abs(dy) < tolerance::kUnitLength) return std::nullopt;
  const double t = (plane_y - ray.origin().y) / dy;
  if (!(t > 0.0) || !std::isfinite(t)) return std::nullopt;
  Vec3 p = ray.at(t);
  p.y = plane_y;
  return PlaneHit{p, t};
}

inline std::optional<double> ray_sphere_intersect(const Ray& ray, Vec3 center, double radius) {
  if (!(radius > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sphere radius must be positive");
  const Vec3 oc = ray.origin() - center;
  const double b = dot(oc, ray.direction());
  const double c = dot(oc, oc) - radius * radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  // Stable root pair: t0 * t1 == c.
  const double q = b > 0.0 ? -(b + root) : -(b - root);
  double t0 = q;
  double t1 = q != 0.0 ? c / q : -b;
  if (t0 > t1) std::swap(t0, t1);
  if (t0 > 0.0) return t0;
  if (t1 > 0.0) return t1;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Pinhole camera

/// world_to_camera maps world points into the camera frame.
inline Vec2 project(const Intrinsics& k, const Pose& world_to_camera, Vec3 world) {
  const Vec3 c = world_to_camera.apply(world);
  if (!(c.z > 0.0)) throw Error(ErrorCode::kBehindCamera, "point is not in front of the camera");
  return {k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy};
}

/// camera_to_world is the camera's pose in the world; the returned ray starts
/// at the camera center.
inline Ray unproject(const Intrinsics& k, const Pose& camera_to_world, Vec2 pixel) {
  if (!is_finite(pixel) || !k.contains(pixel)) {
    throw Error(ErrorCode::kOutOfBounds, "pixel outside the image");
  }
  const Vec3 dir_cam{(pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0};
  return Ray(camera_to_world.translation, camera_to_world.rotation * dir_cam);
}

// ---------------------------------------------------------------------------
// Small dense solvers

namespace detail {

/// Symmetric eigen-decomposition by cyclic Jacobi rotations. a is n x n
/// row-major and is destroyed; returns eigenvalues, eigenvectors in columns
/// of v.
inline std::vector<double> jacobi_eigen(std::vector<double>& a, std::vector<double>& v, int n) {
  v.assign(static_cast<std::size_t>(n * n), 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i * n + i)] = 1.0;
  auto at = [n](std::vector<double>& m, int r, int c) -> double& {
    return m[static_cast<std::size_t>(r * n + c)];
  };
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    double diag = 0.0;
    for (int p = 0; p < n; ++p) {
      diag += at(a, p, p) * at(a, p, p);
      for (int q = p + 1; q < n; ++q) off += at(a, p, q) * at(a, p, q);
    }
    if (off <= 1e-32 * diag || off == 0.0) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(a, p, q);
        if (apq == 0.0) continue;
        const double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(a, k, p);
          const double akq = at(a, k, q);
          at(a, k, p) = c * akp - s * akq;
          at(a, k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(a, p, k);
          const double aqk = at(a, q, k);
          at(a, p, k) = c * apk - s * aqk;
          at(a, q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = at(v, k, p);
          const double vkq = at(v, k, q);
          at(v, k, p) = c * vkp - s * vkq;
          at(v, k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<double> values(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) values[static_cast<std::size_t>(i)] = at(a, i, i);
  return values;
}

/// One-sided (Hestenes) Jacobi SVD of a rows x cols matrix (row-major).
/// Returns singular values (unsorted) and the right singular vectors as the
/// columns of v (cols x cols).
inline std::vector<double> jacobi_svd_right(std::vector<double> a, int rows, int cols,
                                            std::vector<double>& v) {
  v.assign(static_cast<std::size_t>(cols * cols), 0.0);
  for (int i = 0; i < cols; ++i) v[static_cast<std::size_t>(i * cols + i)] = 1.0;
  auto el = [](std::vector<double>& m, int stride, int r, int c) -> double& {
    return m[static_cast<std::size_t>(r * stride + c)];
  };
  for (int sweep = 0; sweep < 80; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < cols - 1; ++p) {
      for (int q = p + 1; q < cols; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (int r = 0; r < rows; ++r) {
          const double ap = el(a, cols, r, p);
          const double aq = el(a, cols, r, q);
          alpha += ap * ap;
          beta += aq * aq;
          gamma += ap * aq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int r = 0; r < rows; ++r) {
          const double ap = el(a, cols, r, p);
          const double aq = el(a, cols, r, q);
          el(a, cols, r, p) = c * ap - s * aq;
          el(a, cols, r, q) = s * ap + c * aq;
        }
        for (int r = 0; r < cols; ++r) {
          const double vp = el(v, cols, r, p);
          const double vq = el(v, cols, r, q);
          el(v, cols, r, p) = c * vp - s * vq;
          el(v, cols, r, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }
  std::vector<double> sigma(static_cast<std::size_t>(cols), 0.0);
  for (int c = 0; c < cols; ++c) {
    double s = 0.0;
    for (int r = 0; r < rows; ++r) s += el(a, cols, r, c) * el(a, cols, r, c);
    sigma[static_cast<std::size_t>(c)] = std::sqrt(s);
  }
  return sigma;
}

/// Similarity transform moving points to zero mean and mean distance sqrt(2).
inline Mat3 normalizing_transform(std::span<const Vec2> pts) {
  Vec2 mean{};
  for (Vec2 p : pts) mean = mean + p;
  mean = (1.0 / static_cast<double>(pts.size())) * mean;
  double spread = 0.0;
  for (Vec2 p : pts) spread += norm(p - mean);
  spread /= static_cast<double>(pts.size());
  if (!(spread > 0.0)) throw Error(ErrorCode::kDegenerate, "all points coincide");
  const double s = std::numbers::sqrt2 / spread;
  return {{s, 0, -s * mean.x, 0, s, -s * mean.y, 0, 0, 1}};
}

}  // namespace detail

struct Correspondence {
  Vec2 src;
  Vec2 dst;
};

/// Direct linear transform on Hartley-normalized points. The result maps
/// src to dst projectively and is scaled so that h33 == 1.
inline Mat3 solve_homography(std::span<const Correspondence> corr) {
  const int n = static_cast<int>(corr.size());
  if (n < 4) throw Error(ErrorCode::kInvalidArgument, "homography needs at least 4 correspondences");
  std::vector<Vec2> src(corr.size()), dst(corr.size());
  for (std::size_t i = 0; i < corr.size(); ++i) {
    if (!is_finite(corr[i].src) || !is_finite(corr[i].dst)) {
      throw Error(ErrorCode::kInvalidArgument, "non-finite correspondence");
    }
    src[i] = corr[i].src;
    dst[i] = corr[i].dst;
  }
  const Mat3 ts = detail::normalizing_transform(src);
  const Mat3 td = detail::normalizing_transform(dst);

  const int rows = 2 * n;
  std::vector<double> a(static_cast<std::size_t>(rows * 9), 0.0);
  for (int i = 0; i < n; ++i) {
    const Vec2 s = apply_homography(ts, src[static_cast<std::size_t>(i)]);
    const Vec2 d = apply_homography(td, dst[static_cast<std::size_t>(i)]);
    double* r0 = &a[static_cast<std::size_t>(2 * i * 9)];
    double* r1 = r0 + 9;
    // [ 0 0 0 | -s -1 | y*s y ] and [ s 1 | 0 0 0 | -x*s -x ]
    r0[3] = -s.x; r0[4] = -s.y; r0[5] = -1.0;
    r0[6] = d.y * s.x; r0[7] = d.y * s.y; r0[8] = d.y;
    r1[0] = s.x; r1[1] = s.y; r1[2] = 1.0;
    r1[6] = -d.x * s.x; r1[7] = -d.x * s.y; r1[8] = -d.x;
  }

  std::vector<double> v;
  const std::vector<double> sigma = detail::jacobi_svd_right(std::move(a), rows, 9, v);
  std::array<int, 9> order{};
  for (int i = 0; i < 9; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int l, int r) {
    return sigma[static_cast<std::size_t>(l)] > sigma[static_cast<std::size_t>(r)];
  });
  const double largest = sigma[static_cast<std::size_t>(order[0])];
  const double second_smallest = sigma[static_cast<std::size_t>(order[7])];
  if (!(largest > 0.0) || second_smallest <= tolerance::kRankRatio * largest) {
    throw Error(ErrorCode::kDegenerate, "correspondences do not determine a homography");
  }
  const int best = order[8];
  Mat3 hn;
  for (int i = 0; i < 9; ++i) hn.m[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i * 9 + best)];

  Mat3 h = td.inverse() * hn * ts;
  const double h33 = h(2, 2);
  if (std::abs(h33) <= tolerance::kGeometric * h.frobenius_norm()) {
    throw Error(ErrorCode::kDegenerate, "homography sends the origin to infinity");
  }
  h = (1.0 / h33) * h;
  if (std::abs(h.determinant()) <= tolerance::kRankRatio * std::pow(h.frobenius_norm(), 3)) {
    throw Error(ErrorCode::kDegenerate, "homography is singular");
  }
  return h;
}

/// Nearest rotation (det +1) in the Frobenius sense, i.e. the orthogonal
/// polar factor of m. Scaled Newton iteration X <- (gX + (gX)^-T)/2.
inline Mat3 nearest_rotation(const Mat3& m) {
  if (!m.is_finite()) throw Error(ErrorCode::kInvalidArgument, "matrix not finite");
  const double det = m.determinant();
  const double scale = m.frobenius_norm();
  if (!(std::abs(det) > 1e-12 * scale * scale * scale)) {
    throw Error(ErrorCode::kSingular, "cannot orthonormalize a singular matrix");
  }
  Mat3 x = m;
  for (int it = 0; it < 100; ++it) {
    const Mat3 inv_t = x.inverse().transposed();
    const double g = std::pow(std::abs(x.determinant()), -1.0 / 3.0);
    const double gamma = it < 6 ? g : 1.0;
    const Mat3 next = 0.5 * (gamma * x + (1.0 / gamma) * inv_t);
    const double change = (next - x).frobenius_norm();
    x = next;
    if (change <= 1e-15) break;
  }
  if (det > 0.0) return x;

  // Polar factor is a reflection; flip the axis of the smallest singular value.
  const Mat3 p = x.transposed() * m;  // symmetric positive definite
  std::vector<double> a(p.m.begin(), p.m.end());
  std::vector<double> v;
  const std::vector<double> ev = detail::jacobi_eigen(a, v, 3);
  const int k = static_cast<int>(std::min_element(ev.begin(), ev.end()) - ev.begin());
  const Vec3 u{v[static_cast<std::size_t>(k)], v[static_cast<std::size_t>(3 + k)],
               v[static_cast<std::size_t>(6 + k)]};
  Mat3 flip = Mat3::identity();
  for (int r = 0; r < 3; ++r) {
    const double ur = r == 0 ? u.x : r == 1 ? u.y : u.z;
    for (int c = 0; c < 3; ++c) {
      const double uc = c == 0 ? u.x : c == 1 ? u.y : u.z;
      flip(r, c) -= 2.0 * ur * uc;
    }
  }
  return x * flip;
}

/// Pose of the plane z = 0 (plane coordinates (u, v) -> (u, v, 0)) relative to
/// the camera, from a plane->pixel homography.
inline Pose pose_from_homography(const Mat3& h, const Intrinsics& k) {
  if (!h.is_finite()) throw Error(ErrorCode::kDegenerate, "homography not finite");
  if (std::abs(h.determinant()) <= tolerance::kRankRatio * std::pow(h.frobenius_norm(), 3)) {
    throw Error(ErrorCode::kDegenerate, "homography is singular");
  }
  const Mat3 b = k.inverse_matrix() * h;
  const Vec3 b1 = b.column(0);
  const Vec3 b2 = b.column(1);
  const Vec3 b3 = b.column(2);
  const double n1 = norm(b1);
  if (!(n1 > 0.0)) throw Error(ErrorCode::kDegenerate, "homography has a null column");
  double lambda = 1.0 / n1;
  // Choose the sign that puts the plane in front of the camera. Flipping
  // lambda flips r1, r2 and t together and keeps det(R) = +1.
  if (lambda * b3.z < 0.0) lambda = -lambda;
  const Vec3 r1 = lambda * b1;
  const Vec3 r2 = lambda * b2;
  const Vec3 r3 = cross(r1, r2);
  const Mat3 r = nearest_rotation(Mat3::from_columns(r1, r2, r3));
  return {r, lambda * b3};
}

}  // namespace solar_ar
