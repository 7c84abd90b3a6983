#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace flowgrad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when an operation receives operands of incompatible shape. The
/// message names the operation and every offending shape.
class ShapeError : public std::invalid_argument {
  public:
	ShapeError(std::string_view op, std::initializer_list<Shape> shapes, std::string_view detail = {});
};

/// When enabled (the default), tensors built from explicit data reject NaN
/// and infinite entries.
void set_checked_mode(bool on);
bool checked_mode();

/// Dense row-major array of doubles. Rank-0 (shape {}) holds one value.
class Tensor {
  public:
	Tensor() = default;
	explicit Tensor(Shape shape, double fill = 0.0);
	Tensor(Shape shape, std::vector<double> data);

	static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

	const Shape& shape() const { return shape_; }
	std::size_t rank() const { return shape_.size(); }
	std::size_t dim(std::size_t i) const { return shape_.at(i); }
	std::size_t size() const { return data_.size(); }
	bool empty() const { return data_.empty(); }

	std::span<double> data() { return data_; }
	std::span<const double> data() const { return data_; }
	double* ptr() { return data_.data(); }
	const double* ptr() const { return data_.data(); }
	const std::vector<double>& values() const { return data_; }

	double& operator[](std::size_t i) { return data_[i]; }
	double operator[](std::size_t i) const { return data_[i]; }

	/// The single value of a one-element tensor.
	double item() const;

	Tensor reshaped(Shape shape) const;
	void fill(double v);
	bool all_finite() const;

	friend bool operator==(const Tensor&, const Tensor&) = default;

  private:
	Shape shape_;
	std::vector<double> data_;
};

} // namespace flowgrad
