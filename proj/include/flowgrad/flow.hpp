#pragma once

#include "flowgrad/autodiff.hpp"
#include "flowgrad/rng.hpp"
#include "flowgrad/tensor.hpp"

#include <memory>
#include <string>
#include <vector>

namespace flowgrad {

/// A batch drawn from the prior: z is [N, ...], log_q_pr is [N].
struct PriorSample {
	Tensor z;
	Tensor log_q_pr;
	std::size_t batch_size() const { return z.dim(0); }
};

struct FlowResult {
	ad::Var phi;   // [N, ...]
	ad::Var log_q; // [N]
};

struct ReverseResult {
	ad::Var z;        // z' = flow^{-1}(phi)
	ad::Var log_jbar; // [N], log det of the inverse map
};

/// A normalizing flow: a prior density paired with a parameterized bijection.
class Flow {
  public:
	virtual ~Flow() = default;

	virtual std::string kind() const = 0;
	virtual Shape event_shape() const = 0;

	virtual PriorSample sample_prior(std::size_t batch_size, Rng& rng) const = 0;
	virtual ad::Var prior_log_prob(const ad::Var& z) const = 0;

	/// z -> phi with log q(phi) = log q_pr(z) - log J(z).
	virtual FlowResult apply(const ad::Var& z, const ad::Var& log_q_pr) = 0;

	/// phi -> z' running the layers in reverse order.
	virtual ReverseResult reverse(const ad::Var& phi) = 0;

	virtual std::vector<ad::Parameter*> parameters() = 0;
	virtual std::unique_ptr<Flow> clone() const = 0;

	std::size_t parameter_count();
	void zero_grad();
};

/// log q(phi) evaluated through the inverse map: log q_pr(z') + log Jbar.
/// Gradients reach the parameters through both terms.
ad::Var log_density(Flow& flow, const ad::Var& phi);

/// Forward pass from a prior sample.
FlowResult apply_flow(Flow& flow, const PriorSample& sample);

/// Per-sample log density of independent standard normals over all trailing axes.
Tensor standard_normal_log_prob(const Tensor& z);
ad::Var standard_normal_log_prob(const ad::Var& z);

// ------------------------------------------------------- affine coupling

enum class Parity { even, odd };

/// Hyperparameters of a coupling flow. Each coupling network has four 3x3
/// circular convolutions: 1 -> hidden -> hidden -> hidden -> 2 channels.
struct CouplingFlowConfig {
	std::size_t L = 8;
	std::size_t layers = 16;
	std::size_t hidden_channels = 16;
	double leaky_slope = 0.01;
	double init_scale = 0.1; // multiplies the initial last-convolution weights

	void validate() const;
};

/// Affine coupling layer with a checkerboard mask. Sites with parity `parity`
/// ((i + j) % 2 == 0 for even) are frozen and feed the network; the other
/// half is transformed as x * exp(s) + t.
class CouplingLayer {
  public:
	struct Output {
		ad::Var phi;
		ad::Var log_jac; // [N]
	};

	CouplingLayer(Parity parity, const CouplingFlowConfig& config, Rng& init_rng, std::size_t index = 0);

	Output forward(const ad::Var& phi);
	Output reverse(const ad::Var& phi);

	Parity parity() const { return parity_; }
	std::size_t lattice() const { return L_; }

	/// 1 on transformed sites, 0 on frozen ones; [L, L].
	const Tensor& active_mask() const { return active_; }

	std::vector<ad::Parameter>& parameters() { return params_; }
	const std::vector<ad::Parameter>& parameters() const { return params_; }

	/// Zeroes the last convolution so the layer is the identity map.
	void make_identity();

	/// Fixes the network output to s = tanh(s_pre), t = tanh(t_pre) everywhere.
	void force_constant_output(double s_pre, double t_pre);

  private:
	struct ScaleShift {
		ad::Var s, t;
	};
	ScaleShift network(const ad::Var& frozen);
	Tensor batch_mask(const Tensor& mask, std::size_t n) const;

	Parity parity_;
	std::size_t L_;
	double slope_;
	std::vector<ad::Parameter> params_; // conv1.w, conv1.b, ..., conv4.w, conv4.b
	Tensor active_;
	Tensor frozen_;
};

/// Stack of coupling layers with alternating parity (layer 0 even) on top of
/// a standard normal prior over an L x L lattice.
class CouplingFlow final : public Flow {
  public:
	CouplingFlow(const CouplingFlowConfig& config, Rng& init_rng);

	std::string kind() const override { return "coupling"; }
	Shape event_shape() const override { return {config_.L, config_.L}; }
	PriorSample sample_prior(std::size_t batch_size, Rng& rng) const override;
	ad::Var prior_log_prob(const ad::Var& z) const override;
	FlowResult apply(const ad::Var& z, const ad::Var& log_q_pr) override;
	ReverseResult reverse(const ad::Var& phi) override;
	std::vector<ad::Parameter*> parameters() override;
	std::unique_ptr<Flow> clone() const override;

	const CouplingFlowConfig& config() const { return config_; }
	std::vector<CouplingLayer>& layers() { return layers_; }
	const std::vector<CouplingLayer>& layers() const { return layers_; }

	void make_identity();

  private:
	CouplingFlowConfig config_;
	std::vector<CouplingLayer> layers_;
};

} // namespace flowgrad
