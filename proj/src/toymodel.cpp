#include "flowgrad/toymodel.hpp"
#include "flowgrad/trainer.hpp"

#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

namespace flowgrad::toy {

double forward(double z, double theta)
{
	if (!(z >= 0.0 && z < 1.0))
		throw std::domain_error(fmt::format("toy flow: z={} outside [0, 1)", z));
	return -std::log1p(-z) / theta;
}

double inverse(double phi, double theta) { return -std::expm1(-phi * theta); }

double density(double phi, double theta) { return phi < 0.0 ? 0.0 : theta * std::exp(-theta * phi); }

double free_energy(double theta, double lambda, double Z)
{
	return std::log(theta) - std::log(lambda) - std::log(Z) - (theta - lambda) / theta;
}

double exact_grad(double theta, double lambda) { return (theta - lambda) / (theta * theta); }

double var_g1(double theta, double lambda, double Z, std::size_t N)
{
	const double d = theta - lambda;
	const double l = std::log(theta) - std::log(lambda) - std::log(Z);
	const double t2 = theta * theta;
	return (13.0 * d * d / (t2 * t2) - 6.0 * d * l / (t2 * theta) + l * l / t2) / static_cast<double>(N);
}

double var_g2(double theta, double lambda, std::size_t N)
{
	const double d = theta - lambda;
	const double t2 = theta * theta;
	return 7.0 * d * d / (static_cast<double>(N) * t2 * t2);
}

double var_g3(double theta, double lambda, std::size_t N)
{
	const double t2 = theta * theta;
	return lambda * lambda / (static_cast<double>(N) * t2 * t2);
}

double g1_batch(double theta, double lambda, double Z, std::span<const double> phi)
{
	const double l = std::log(theta) - std::log(lambda) - std::log(Z);
	double acc = 0.0;
	for (double x : phi)
		acc += (1.0 / theta - x) * (l - x * (theta - lambda));
	return acc / static_cast<double>(phi.size());
}

double g2_batch(double theta, double lambda, std::span<const double> phi)
{
	double mean = 0.0;
	for (double x : phi)
		mean += x;
	mean /= static_cast<double>(phi.size());
	double acc = 0.0;
	for (double x : phi)
		acc += (x - 1.0 / theta) * (x - mean);
	return (theta - lambda) * acc / static_cast<double>(phi.size());
}

double g3_batch(double theta, double lambda, std::span<const double> z)
{
	double acc = 0.0;
	for (double v : z)
		acc += std::log1p(-v);
	return 1.0 / theta + lambda / (theta * theta) * acc / static_cast<double>(z.size());
}

// ------------------------------------------------------------------ ToyFlow

ToyFlow::ToyFlow(double theta) : theta_("theta", Tensor({1}, theta))
{
	if (!(theta > 0.0))
		throw std::invalid_argument(fmt::format("toy flow: theta={} must be positive", theta));
}

void ToyFlow::set_theta(double theta)
{
	if (!(theta > 0.0))
		throw std::invalid_argument(fmt::format("toy flow: theta={} must be positive", theta));
	theta_.value[0] = theta;
}

PriorSample ToyFlow::sample_prior(std::size_t batch_size, Rng& rng) const
{
	if (batch_size < 1)
		throw std::invalid_argument("sample_prior: batch_size must be at least 1");
	std::uniform_real_distribution<double> uni(0.0, 1.0);
	Tensor z({batch_size});
	for (double& v : z.data())
		v = uni(rng);
	return {std::move(z), Tensor({batch_size}, 0.0)};
}

ad::Var ToyFlow::prior_log_prob(const ad::Var& z) const { return ad::constant(Tensor(z.shape(), 0.0)); }

FlowResult ToyFlow::apply(const ad::Var& z, const ad::Var& log_q_pr)
{
	for (double v : z.value().data())
		if (!(v >= 0.0 && v < 1.0))
			throw std::domain_error(fmt::format("toy flow: z={} outside [0, 1)", v));
	const Shape shape = z.shape();
	auto theta = ad::expand(ad::param(theta_), shape);
	auto log_one_minus_z = ad::log(ad::shift(ad::neg(z), 1.0));
	auto phi = ad::div(ad::neg(log_one_minus_z), theta);
	// log J = -log theta - log(1 - z)
	auto log_q = ad::add(log_q_pr, ad::add(ad::log(theta), log_one_minus_z));
	return {phi, log_q};
}

ReverseResult ToyFlow::reverse(const ad::Var& phi)
{
	auto theta = ad::expand(ad::param(theta_), phi.shape());
	auto phi_theta = ad::mul(phi, theta);
	auto z = ad::shift(ad::neg(ad::exp(ad::neg(phi_theta))), 1.0);
	auto log_jbar = ad::sub(ad::log(theta), phi_theta);
	return {z, log_jbar};
}

// ---------------------------------------------------------------- ToyTarget

ToyTarget::ToyTarget(double lambda, double Z) : lambda_(lambda), Z_(Z)
{
	if (!(lambda > 0.0) || !(Z > 0.0))
		throw std::invalid_argument("toy target: lambda and Z must be positive");
}

std::vector<double> ToyTarget::log_prob(const Tensor& phi) const
{
	const double c = std::log(Z_) + std::log(lambda_);
	std::vector<double> out(phi.size());
	for (std::size_t i = 0; i < phi.size(); ++i)
		out[i] = c - lambda_ * phi[i];
	return out;
}

ad::Var ToyTarget::differentiable_log_prob(const ad::Var& phi) const
{
	return ad::shift(ad::scale(phi, -lambda_), std::log(Z_) + std::log(lambda_));
}

// ----------------------------------------------------------------- drivers

std::vector<double> train(Estimator estimator, const TrainOptions& o)
{
	ToyFlow flow(o.theta0);
	ToyTarget target(o.lambda, o.Z);
	Adam adam(flow.parameters(), AdamOptions{.lr = o.lr});
	Rng rng = make_rng(o.seed, 1);
	std::vector<double> theta;
	theta.reserve(o.steps);
	for (std::size_t k = 0; k < o.steps; ++k) {
		train_step(flow, target, estimator, o.batch_size, adam, rng);
		if (!(flow.theta() > 0.0))
			throw std::runtime_error(
			    fmt::format("toy training with {}: theta={} became non-positive at step {}", to_string(estimator),
			                flow.theta(), k + 1));
		theta.push_back(flow.theta());
	}
	return theta;
}

std::vector<double> variance_sweep(Estimator estimator, std::span<const double> thetas, double lambda, double Z,
                                   std::size_t N, std::size_t n_batches, std::uint64_t seed)
{
	ToyTarget target(lambda, Z);
	std::vector<double> out;
	out.reserve(thetas.size());
	for (std::size_t k = 0; k < thetas.size(); ++k) {
		ToyFlow flow(thetas[k]);
		auto acc = gradient_moments(estimator, flow, target, N, n_batches, seed + k);
		out.push_back(std::sqrt(acc.variance()[0]));
	}
	return out;
}

} // namespace flowgrad::toy
