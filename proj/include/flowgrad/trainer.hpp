#pragma once

#include "flowgrad/estimators.hpp"
#include "flowgrad/flow.hpp"
#include "flowgrad/physics.hpp"

#include <cstdint>
#include <vector>

namespace flowgrad {

struct AdamOptions {
	double lr = 1e-3;
	double beta1 = 0.9;
	double beta2 = 0.999;
	double eps = 1e-8;
};

/// Adam with bias correction. step() consumes the parameters' accumulated
/// gradients and resets them to zero.
class Adam {
  public:
	Adam(std::vector<ad::Parameter*> params, AdamOptions options);

	/// Throws std::runtime_error, leaving parameters untouched, if any
	/// gradient is non-finite.
	void step();
	void zero_grad();

	std::size_t step_count() const { return steps_; }
	const AdamOptions& options() const { return options_; }
	const std::vector<Tensor>& first_moments() const { return m_; }
	const std::vector<Tensor>& second_moments() const { return v_; }

	/// Restores moments and step count, e.g. from a checkpoint.
	void restore(std::size_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

  private:
	std::vector<ad::Parameter*> params_;
	AdamOptions options_;
	std::vector<Tensor> m_, v_;
	std::size_t steps_ = 0;
};

struct StepMetrics {
	double loss = 0.0;
	double mean_log_q = 0.0;
	double mean_log_p = 0.0;
	double free_energy = 0.0;
	double ess = 0.0;
};

/// One loss construction, one backward pass and one Adam update.
StepMetrics train_step(Flow& flow, const Target& target, Estimator estimator, std::size_t batch_size, Adam& adam,
                       Rng& rng);

struct GradientVariance {
	double variance = 0.0; // component variance averaged over all parameters
	double std = 0.0;      // its square root
	std::size_t n_batches = 0;
};

/// Var[g] = (1/N_theta) sum_j (1/N_b) sum_i (g_j[batch i] - mean_j)^2.
GradientVariance gradient_variance(const Flow& flow, const Target& target, Estimator estimator, std::size_t n_batches,
                                   std::size_t batch_size, std::uint64_t seed);

/// Standard deviation of s - mean(s) over a fresh sample.
double signal_std(Flow& flow, const Target& target, std::size_t n_samples, Rng& rng);

} // namespace flowgrad
