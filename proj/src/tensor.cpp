#include "flowgrad/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fmt/format.h>
#include <functional>
#include <numeric>

namespace flowgrad {

namespace {
std::atomic<bool> g_checked{true};

std::string describe(std::string_view op, std::initializer_list<Shape> shapes, std::string_view detail)
{
	std::string msg = fmt::format("{}: incompatible shapes", op);
	for (const auto& s : shapes)
		msg += " " + to_string(s);
	if (!detail.empty())
		msg += fmt::format(" ({})", detail);
	return msg;
}
} // namespace

std::size_t numel(const Shape& shape)
{
	return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape)
{
	std::string out = "[";
	for (std::size_t i = 0; i < shape.size(); ++i)
		out += (i ? "," : "") + std::to_string(shape[i]);
	return out + "]";
}

ShapeError::ShapeError(std::string_view op, std::initializer_list<Shape> shapes, std::string_view detail)
    : std::invalid_argument(describe(op, shapes, detail))
{
}

void set_checked_mode(bool on) { g_checked = on; }
bool checked_mode() { return g_checked; }

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill)
{
	for (auto d : shape_)
		if (d == 0)
			throw ShapeError("Tensor", {shape_}, "dimensions must be positive");
	if (g_checked && !std::isfinite(fill))
		throw std::domain_error("Tensor: non-finite value in checked mode");
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
	for (auto d : shape_)
		if (d == 0)
			throw ShapeError("Tensor", {shape_}, "dimensions must be positive");
	if (numel(shape_) != data_.size())
		throw ShapeError("Tensor", {shape_}, fmt::format("{} values supplied", data_.size()));
	if (g_checked && !all_finite())
		throw std::domain_error("Tensor: non-finite value in checked mode");
}

double Tensor::item() const
{
	if (data_.size() != 1)
		throw ShapeError("item", {shape_}, "expected a single element");
	return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
	if (numel(shape) != data_.size())
		throw ShapeError("reshape", {shape_, shape});
	Tensor out;
	out.shape_ = std::move(shape);
	out.data_ = data_;
	return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const
{
	return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

} // namespace flowgrad
