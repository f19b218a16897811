#pragma once

// Test-only reference implementations. Nothing here calls into the code
// paths it is used to check.

#include <cmath>
#include <functional>
#include <vector>

namespace monodyn::oracle {

/// Textbook recursive Cox-de Boor B_{i,k} (order k) with the 0/0 = 0 convention.
/// Right-continuous, except that x == last knot belongs to the last interval.
inline double cox_de_boor(const std::vector<double>& t, int i, int k, double x) {
  if (k == 1) {
    const double last = t.back();
    if (x == last) {
      // Rightmost nonempty interval closes at the end.
      int j = static_cast<int>(t.size()) - 2;
      while (j > 0 && t[j] == t[j + 1]) --j;
      return i == j ? 1.0 : 0.0;
    }
    return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  }
  double a = 0.0, b = 0.0;
  const double d1 = t[i + k - 1] - t[i];
  const double d2 = t[i + k] - t[i + 1];
  if (d1 > 0) a = (x - t[i]) / d1 * cox_de_boor(t, i, k - 1, x);
  if (d2 > 0) b = (t[i + k] - x) / d2 * cox_de_boor(t, i + 1, k - 1, x);
  return a + b;
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

/// Composite trapezoid on n uniform panels.
inline double trapezoid(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = 0.5 * (f(a) + f(b));
  for (int i = 1; i < n; ++i) s += f(a + i * h);
  return s * h;
}

/// Composite Simpson on n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

/// Classical RK4 on x' = f(x) with n uniform steps, returning x(t1).
inline double rk4_endpoint(const std::function<double(double)>& f, double x0, double t0, double t1, int n) {
  const double h = (t1 - t0) / n;
  double x = x0;
  for (int i = 0; i < n; ++i) {
    const double k1 = f(x), k2 = f(x + 0.5 * h * k1), k3 = f(x + 0.5 * h * k2), k4 = f(x + h * k3);
    x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return x;
}

/// Golden-section minimizer of a unimodal function on [a, b].
inline double golden_section(const std::function<double(double)>& f, double a, double b, double tol) {
  const double r = (std::sqrt(5.0) - 1) / 2;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace monodyn::oracle
