#pragma once

// Test helpers: seeded generators for random inputs and a central
// finite-difference gradient oracle.

#include "flowgrad/autodiff.hpp"
#include "flowgrad/rng.hpp"
#include "flowgrad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testing {

using flowgrad::Rng;
using flowgrad::Shape;
using flowgrad::Tensor;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
	std::uniform_real_distribution<double> u(lo, hi);
	Tensor t(shape);
	for (double& v : t.data())
		v = u(rng);
	return t;
}

inline Tensor normal_tensor(const Shape& shape, Rng& rng, double sigma = 1.0)
{
	std::normal_distribution<double> n(0.0, sigma);
	Tensor t(shape);
	for (double& v : t.data())
		v = n(rng);
	return t;
}

inline std::size_t random_size(Rng& rng, std::size_t lo, std::size_t hi)
{
	return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Central differences of a scalar function of one tensor.
inline std::vector<double> numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                                            double h = 1e-5)
{
	std::vector<double> g(x.size());
	for (std::size_t i = 0; i < x.size(); ++i) {
		const double x0 = x[i];
		x[i] = x0 + h;
		const double fp = f(x);
		x[i] = x0 - h;
		const double fm = f(x);
		x[i] = x0;
		g[i] = (fp - fm) / (2.0 * h);
	}
	return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps entries that
/// are zero up to finite-difference noise from dominating.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6)
{
	double worst = 0.0;
	for (std::size_t i = 0; i < a.size(); ++i) {
		const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
		worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
	}
	return worst;
}

inline double mean(const std::vector<double>& x)
{
	double s = 0.0;
	for (double v : x)
		s += v;
	return s / static_cast<double>(x.size());
}

inline double variance(const std::vector<double>& x)
{
	const double m = mean(x);
	double s = 0.0;
	for (double v : x)
		s += (v - m) * (v - m);
	return s / static_cast<double>(x.size());
}

/// Composite Simpson rule on [a, b] with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, std::size_t n)
{
	if (n % 2)
		++n;
	const double h = (b - a) / static_cast<double>(n);
	double s = f(a) + f(b);
	for (std::size_t i = 1; i < n; ++i)
		s += (i % 2 ? 4.0 : 2.0) * f(a + h * static_cast<double>(i));
	return s * h / 3.0;
}

} // namespace testing
