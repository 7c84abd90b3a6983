#pragma once

// One-parameter exponential flow: z ~ U[0,1), phi = -log(1 - z) / theta, so
// q(phi | theta) = theta exp(-theta phi). The target is P(phi) = Z lambda
// exp(-lambda phi). Everything about the three gradient estimators is known
// in closed form here, which makes this model the reference oracle.

#include "flowgrad/estimators.hpp"
#include "flowgrad/flow.hpp"
#include "flowgrad/physics.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace flowgrad::toy {

double forward(double z, double theta);   // z in [0, 1)
double inverse(double phi, double theta); // 1 - exp(-phi theta)
double density(double phi, double theta); // theta exp(-theta phi)

/// F_q = log theta - log lambda - log Z - (theta - lambda) / theta.
double free_energy(double theta, double lambda, double Z);

/// dF_q/dtheta = (theta - lambda) / theta^2.
double exact_grad(double theta, double lambda);

double var_g1(double theta, double lambda, double Z, std::size_t N);
/// Leading 1/N term only.
double var_g2(double theta, double lambda, std::size_t N);
double var_g3(double theta, double lambda, std::size_t N);

/// Per-batch estimator values written out by hand.
double g1_batch(double theta, double lambda, double Z, std::span<const double> phi);
double g2_batch(double theta, double lambda, std::span<const double> phi);
double g3_batch(double theta, double lambda, std::span<const double> z);

/// The exponential flow behind the generic Flow interface. Batches are [N].
class ToyFlow final : public Flow {
  public:
	explicit ToyFlow(double theta);

	std::string kind() const override { return "toy"; }
	Shape event_shape() const override { return {}; }
	PriorSample sample_prior(std::size_t batch_size, Rng& rng) const override;
	ad::Var prior_log_prob(const ad::Var& z) const override;
	FlowResult apply(const ad::Var& z, const ad::Var& log_q_pr) override;
	ReverseResult reverse(const ad::Var& phi) override;
	std::vector<ad::Parameter*> parameters() override { return {&theta_}; }
	std::unique_ptr<Flow> clone() const override { return std::make_unique<ToyFlow>(*this); }

	double theta() const { return theta_.value[0]; }
	void set_theta(double theta);

  private:
	ad::Parameter theta_;
};

class ToyTarget final : public Target {
  public:
	ToyTarget(double lambda, double Z);

	std::string name() const override { return "toy"; }
	std::vector<double> log_prob(const Tensor& phi) const override;
	using Target::log_prob;

	double lambda() const { return lambda_; }
	double Z() const { return Z_; }

  protected:
	ad::Var differentiable_log_prob(const ad::Var& phi) const override;

  private:
	double lambda_, Z_;
};

struct TrainOptions {
	std::size_t steps = 500;
	std::size_t batch_size = 100;
	double lr = 0.01;
	double theta0 = 1.0;
	double lambda = 1.0 / 3.0;
	double Z = 3.0;
	std::uint64_t seed = 0;
};

/// Adam training of theta; returns theta after every step. Throws if theta
/// leaves the positive half-line.
std::vector<double> train(Estimator estimator, const TrainOptions& options);

/// Empirical standard deviation of the scalar estimator at each theta.
std::vector<double> variance_sweep(Estimator estimator, std::span<const double> thetas, double lambda, double Z,
                                   std::size_t N, std::size_t n_batches, std::uint64_t seed);

} // namespace flowgrad::toy
