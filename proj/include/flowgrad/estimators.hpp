#pragma once

// Loss constructions whose gradients are the three free-energy gradient
// estimators:
//
//   g1  score function:   mean_i  dlog q(phi_i)/dtheta * s_i
//   g2  with baseline:    mean_i  dlog q(phi_i)/dtheta * (s_i - mean_j s_j)
//   g3  reparameterized:  mean_i  d[log q(z_i) - log P(phi(z_i))]/dtheta
//
// with the signal s = log q - log P held constant. g1 and g2 sample phi
// without gradients and then recompute log q through the inverse flow, so
// they never touch the field gradient of log P.

#include "flowgrad/autodiff.hpp"
#include "flowgrad/flow.hpp"
#include "flowgrad/physics.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace flowgrad {

enum class Estimator { g1, g2, g3 };

Estimator parse_estimator(std::string_view key);
std::string_view to_string(Estimator e);

struct LossValue {
	ad::Var loss;
	Tensor phi;                // detached samples
	std::vector<double> log_q; // detached, per sample
	std::vector<double> log_p;

	double mean_log_q() const;
	double mean_log_p() const;
	/// Batch estimate of the variational free energy, mean(log q - log P).
	double free_energy() const;
};

/// Thrown when a training loss is not finite; carries the offending batch.
class NonFiniteLoss : public std::runtime_error {
  public:
	NonFiniteLoss(double loss, Tensor phi);
	double loss() const { return loss_; }
	const Tensor& batch() const { return phi_; }

  private:
	double loss_;
	Tensor phi_;
};

/// s_i = log q_i - log P_i.
std::vector<double> signal(std::span<const double> log_q, std::span<const double> log_p);

LossValue loss_g1(Flow& flow, const Target& target, const PriorSample& batch);
LossValue loss_g2(Flow& flow, const Target& target, const PriorSample& batch);
LossValue loss_g3(Flow& flow, const Target& target, const PriorSample& batch);
LossValue make_loss(Estimator e, Flow& flow, const Target& target, const PriorSample& batch);
LossValue make_loss(Estimator e, Flow& flow, const Target& target, std::size_t batch_size, Rng& rng);

/// Flat gradient over flow.parameters() in order.
using GradEstimate = std::vector<double>;

GradEstimate flatten_grads(Flow& flow);

/// Builds the loss on a fresh tape, runs backward and returns the estimate.
/// Parameter gradients are zeroed before and after.
GradEstimate estimate_gradient(Estimator e, Flow& flow, const Target& target, const PriorSample& batch);

/// (1/N) sum_i dlog q(phi_i)/dtheta with log q evaluated through the inverse flow.
GradEstimate mean_score(Flow& flow, const Tensor& phi);

/// Component-wise running mean and (population) variance.
class MomentAccumulator {
  public:
	explicit MomentAccumulator(std::size_t dim = 0) : mean_(dim, 0.0), m2_(dim, 0.0) {}

	void add(std::span<const double> x);
	void merge(const MomentAccumulator& other);

	std::size_t count() const { return count_; }
	std::size_t dim() const { return mean_.size(); }
	const std::vector<double>& mean() const { return mean_; }
	std::vector<double> variance() const; // divides by count
	std::vector<double> standard_error() const;

  private:
	std::size_t count_ = 0;
	std::vector<double> mean_;
	std::vector<double> m2_;
};

/// Draws n_batches independent batches of batch_size from a frozen copy of
/// `flow` and accumulates the estimator's moments. Batch k uses the generator
/// make_rng(seed, k), so results do not depend on the worker count.
MomentAccumulator gradient_moments(Estimator e, const Flow& flow, const Target& target, std::size_t batch_size,
                                   std::size_t n_batches, std::uint64_t seed);

struct MeanEstimate {
	std::vector<double> mean;
	std::vector<double> standard_error;
	std::size_t n_batches = 0;
};

MeanEstimate estimator_mean_check(Estimator e, const Flow& flow, const Target& target, std::size_t batch_size,
                                  std::size_t n_batches, std::uint64_t seed);

} // namespace flowgrad
