#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace bodyfit {

// Small fixed-size linear algebra, templated on the scalar so the same
// kinematic code runs on plain doubles and on autodiff variables.

template <class T>
struct Vec3 {
  T x{}, y{}, z{};

  Vec3() = default;
  Vec3(T x_, T y_, T z_) : x(x_), y(y_), z(z_) {}

  T& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  const T& operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(const T& s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(const T& s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Vec3& operator*=(const T& s) { x *= s; y *= s; z *= s; return *this; }

  T dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  T squaredNorm() const { return dot(*this); }
  T norm() const { using std::sqrt; return sqrt(squaredNorm()); }
  Vec3 normalized() const { return *this / norm(); }
};

template <class T>
Vec3<T> operator*(const T& s, const Vec3<T>& v) { return v * s; }

template <class T>
struct Vec2 {
  T x{}, y{};
  Vec2() = default;
  Vec2(T x_, T y_) : x(x_), y(y_) {}
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  T squaredNorm() const { return x * x + y * y; }
  T norm() const { using std::sqrt; return sqrt(squaredNorm()); }
};

// Row-major 3x3.
template <class T>
struct Mat3 {
  std::array<T, 9> m{};

  static Mat3 identity() {
    Mat3 r;
    r.m = {T(1), T(0), T(0), T(0), T(1), T(0), T(0), T(0), T(1)};
    return r;
  }
  static Mat3 zero() { return Mat3{}; }

  T& operator()(int r, int c) { return m[3 * r + c]; }
  const T& operator()(int r, int c) const { return m[3 * r + c]; }

  Vec3<T> operator*(const Vec3<T>& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r(i, j) = (*this)(i, 0) * o(0, j) + (*this)(i, 1) * o(1, j) + (*this)(i, 2) * o(2, j);
    return r;
  }
  Mat3 operator*(const T& s) const {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] * s;
    return r;
  }
  Mat3 operator+(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
    return r;
  }
  Mat3 operator-(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] - o.m[i];
    return r;
  }
  Mat3 transpose() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }
  T det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

// Rigid(+scale) transform as rotation/linear block and translation; the
// homogeneous bottom row is implicitly (0,0,0,1).
template <class T>
struct Transform {
  Mat3<T> linear = Mat3<T>::identity();
  Vec3<T> translation{};

  static Transform identity() { return Transform{}; }

  Vec3<T> apply(const Vec3<T>& p) const { return linear * p + translation; }

  Transform operator*(const Transform& o) const {
    Transform r;
    r.linear = linear * o.linear;
    r.translation = linear * o.translation + translation;
    return r;
  }
};

using Vec3d = Vec3<double>;
using Vec2d = Vec2<double>;
using Mat3d = Mat3<double>;
using Transformd = Transform<double>;

template <class T>
double value_of(const T& x) { return static_cast<double>(x); }

}  // namespace bodyfit
