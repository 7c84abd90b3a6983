#pragma once

// Minimal reverse-mode differentiation over Tensor values.
//
// Operations executed while a Tape is active (see TapeScope) and touching at
// least one gradient-carrying input are recorded in execution order. Calling
// backward() on a scalar result walks the tape in reverse and accumulates
// d(result)/d(parameter) into each Parameter::grad. Outside of an active
// tape, or inside a NoGradGuard, the same operations only compute values.

#include "flowgrad/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace flowgrad::ad {

/// Trainable tensor with its accumulated gradient. Copies receive a fresh id.
class Parameter {
  public:
	Parameter(std::string name, Tensor value);
	Parameter(const Parameter& other);
	Parameter& operator=(const Parameter& other);
	Parameter(Parameter&&) noexcept = default;
	Parameter& operator=(Parameter&&) noexcept = default;

	std::uint64_t id() const { return id_; }
	const std::string& name() const { return name_; }
	void zero_grad() { grad.fill(0.0); }

	Tensor value;
	Tensor grad;

  private:
	std::string name_;
	std::uint64_t id_;
};

class Tape;

namespace detail {
struct Node {
	Tensor value;
	Tensor grad; // empty until something flows into this node
	std::vector<std::shared_ptr<Node>> inputs;
	std::function<void(Node&)> backward;
	Parameter* param = nullptr;
	Tape* tape = nullptr;
	std::size_t index = 0;

	bool recorded() const { return tape != nullptr; }
	Tensor& grad_buffer();
};
} // namespace detail

/// Handle to a value in the computation. Either a detached constant or a
/// node recorded on a tape.
class Var {
  public:
	Var() = default;
	explicit Var(Tensor constant);
	explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

	const Tensor& value() const;
	const Shape& shape() const { return value().shape(); }
	bool requires_grad() const { return node_ && node_->recorded(); }
	bool valid() const { return node_ != nullptr; }
	const std::shared_ptr<detail::Node>& node() const { return node_; }

  private:
	std::shared_ptr<detail::Node> node_;
};

class Tape {
  public:
	Tape() = default;
	Tape(const Tape&) = delete;
	Tape& operator=(const Tape&) = delete;
	~Tape();

	/// Accumulates d(out)/d(parameter) into every parameter reachable from
	/// `out`. Calling it twice accumulates twice.
	void backward(const Var& out);

	std::size_t size() const { return nodes_.size(); }
	void clear();

	void record(const std::shared_ptr<detail::Node>& node);

  private:
	std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Makes `tape` the active tape of the calling thread for the scope lifetime.
class TapeScope {
  public:
	explicit TapeScope(Tape& tape);
	~TapeScope();
	TapeScope(const TapeScope&) = delete;
	TapeScope& operator=(const TapeScope&) = delete;

  private:
	Tape* previous_;
};

/// Suspends recording on the calling thread.
class NoGradGuard {
  public:
	NoGradGuard();
	~NoGradGuard();
	NoGradGuard(const NoGradGuard&) = delete;
	NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
	Tape* previous_;
};

Tape* active_tape();

/// Backward pass from a scalar recorded on a tape. Throws std::logic_error
/// if `out` was not recorded (no tape) and ShapeError if it is not scalar.
void backward(const Var& out);

Var param(Parameter& p);
Var constant(Tensor t);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var shift(const Var& a, double c);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.01);

/// Sum and mean over every element; the result has shape {}.
Var sum(const Var& a);
Var mean(const Var& a);

/// [N, ...] -> [N], summing everything but the leading axis.
Var sum_per_sample(const Var& a);

Var reshape(const Var& a, Shape shape);

/// [N, C, ...] -> [N, ...] picking channel c.
Var select_channel(const Var& a, std::size_t c);

/// Broadcasts a one-element tensor to `shape`.
Var expand(const Var& a, Shape shape);

/// 3x3 cross-correlation with periodic wrap in both spatial directions.
/// input [N, Cin, L, L] (or [Cin, L, L]), kernel [Cout, Cin, 3, 3],
/// bias [Cout]; output [N, Cout, L, L] (or [Cout, L, L]). Requires L >= 3.
Var conv2d_circular(const Var& input, const Var& kernel, const Var& bias);

/// Records an operation with a hand-written vector-Jacobian product.
/// `vjp(out_grad, in_grads)` must add its contribution into each non-null
/// entry of in_grads (null where the input carries no gradient).
using VjpFn = std::function<void(const Tensor& out_grad, const std::vector<Tensor*>& in_grads)>;
Var custom_op(Tensor value, const std::vector<Var>& inputs, VjpFn vjp);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

} // namespace flowgrad::ad
