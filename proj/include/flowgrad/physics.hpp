#pragma once

#include "flowgrad/autodiff.hpp"
#include "flowgrad/tensor.hpp"

#include <atomic>
#include <functional>
#include <string>
#include <vector>

namespace flowgrad {

/// Lattice phi^4 couplings. The action on an L x L periodic lattice is
///   S = sum_x phi_x (4 phi_x - sum_{nearest y} phi_y) + sum_x (m2 phi_x^2 + lambda phi_x^4).
struct Phi4Params {
	std::size_t L = 8;
	double m2 = -4.0;
	double lambda = 8.0;

	void validate() const;
};

/// Per-configuration action of a [N, L, L] batch; returns [N].
Tensor phi4_action(const Tensor& phi, const Phi4Params& params);

/// dS/dphi for a [N, L, L] batch.
Tensor phi4_action_gradient(const Tensor& phi, const Phi4Params& params);

/// The same action assembled from differentiable primitives (the kinetic
/// term as a circular convolution with the lattice Laplacian stencil).
/// Requires L >= 3.
ad::Var phi4_action_primitives(const ad::Var& phi, const Phi4Params& params);

/// Unnormalized target density log P(phi).
class Target {
  public:
	virtual ~Target() = default;

	virtual std::string name() const = 0;

	/// Per-sample log P for a [N, ...] batch, no gradient tracking.
	virtual std::vector<double> log_prob(const Tensor& phi) const = 0;

	/// Whether log P can be differentiated with respect to the field.
	virtual bool differentiable() const { return true; }

	/// Differentiable log P. Every call counts as one use of the field
	/// gradient path (see field_gradient_calls).
	ad::Var log_prob(const ad::Var& phi) const;

	/// Number of times the differentiable path was entered or its gradient
	/// evaluated.
	std::size_t field_gradient_calls() const { return probe_.load(); }
	void reset_probe() { probe_ = 0; }

  protected:
	virtual ad::Var differentiable_log_prob(const ad::Var& phi) const = 0;
	void count_gradient_use() const { ++probe_; }

  private:
	mutable std::atomic<std::size_t> probe_{0};
};

/// log P = -S(phi | m2, lambda).
class Phi4Target final : public Target {
  public:
	explicit Phi4Target(Phi4Params params);

	std::string name() const override { return "phi4"; }
	std::vector<double> log_prob(const Tensor& phi) const override;
	using Target::log_prob;
	const Phi4Params& params() const { return params_; }

  protected:
	ad::Var differentiable_log_prob(const ad::Var& phi) const override;

  private:
	Phi4Params params_;
};

/// Independent standard normal per component, scaled by Z:
/// log P = log Z - |phi|^2 / 2 - (D/2) log(2 pi).
class GaussianTarget final : public Target {
  public:
	explicit GaussianTarget(double log_z = 0.0) : log_z_(log_z) {}

	std::string name() const override { return "gaussian"; }
	std::vector<double> log_prob(const Tensor& phi) const override;
	using Target::log_prob;

  protected:
	ad::Var differentiable_log_prob(const ad::Var& phi) const override;

  private:
	double log_z_;
};

/// Wraps a black-box log P with no field gradient.
class OpaqueTarget final : public Target {
  public:
	using Fn = std::function<std::vector<double>(const Tensor&)>;
	OpaqueTarget(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}

	std::string name() const override { return name_; }
	std::vector<double> log_prob(const Tensor& phi) const override { return fn_(phi); }
	using Target::log_prob;
	bool differentiable() const override { return false; }

  protected:
	ad::Var differentiable_log_prob(const ad::Var& phi) const override;

  private:
	std::string name_;
	Fn fn_;
};

} // namespace flowgrad
