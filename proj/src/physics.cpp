#include "flowgrad/physics.hpp"
#include "flowgrad/flow.hpp"

#include <fmt/format.h>
#include <stdexcept>

namespace flowgrad {

void Phi4Params::validate() const
{
	if (L < 2)
		throw std::invalid_argument(fmt::format("phi4: lattice extent L={} must be at least 2", L));
	if (!(lambda >= 0.0))
		throw std::invalid_argument("phi4: lambda must be non-negative");
}

namespace {
std::size_t check_field(std::string_view op, const Tensor& phi, const Phi4Params& p)
{
	if (phi.rank() != 3 || phi.dim(1) != p.L || phi.dim(2) != p.L)
		throw ShapeError(op, {phi.shape(), Shape{p.L, p.L}}, "expected [N,L,L]");
	return phi.dim(0);
}
} // namespace

Tensor phi4_action(const Tensor& phi, const Phi4Params& p)
{
	const std::size_t n = check_field("phi4_action", phi, p);
	const std::size_t L = p.L;
	Tensor out({n});
	for (std::size_t b = 0; b < n; ++b) {
		const double* f = phi.ptr() + b * L * L;
		double s = 0.0;
		for (std::size_t i = 0; i < L; ++i) {
			const std::size_t ip = (i + 1) % L, im = (i + L - 1) % L;
			for (std::size_t j = 0; j < L; ++j) {
				const std::size_t jp = (j + 1) % L, jm = (j + L - 1) % L;
				const double x = f[i * L + j];
				const double nb = f[im * L + j] + f[ip * L + j] + f[i * L + jm] + f[i * L + jp];
				const double x2 = x * x;
				s += x * (4.0 * x - nb) + p.m2 * x2 + p.lambda * x2 * x2;
			}
		}
		out[b] = s;
	}
	return out;
}

Tensor phi4_action_gradient(const Tensor& phi, const Phi4Params& p)
{
	check_field("phi4_action_gradient", phi, p);
	const std::size_t L = p.L;
	Tensor out(phi.shape());
	for (std::size_t b = 0; b < phi.dim(0); ++b) {
		const double* f = phi.ptr() + b * L * L;
		double* g = out.ptr() + b * L * L;
		for (std::size_t i = 0; i < L; ++i) {
			const std::size_t ip = (i + 1) % L, im = (i + L - 1) % L;
			for (std::size_t j = 0; j < L; ++j) {
				const std::size_t jp = (j + 1) % L, jm = (j + L - 1) % L;
				const double x = f[i * L + j];
				const double nb = f[im * L + j] + f[ip * L + j] + f[i * L + jm] + f[i * L + jp];
				g[i * L + j] = 8.0 * x - 2.0 * nb + 2.0 * p.m2 * x + 4.0 * p.lambda * x * x * x;
			}
		}
	}
	return out;
}

ad::Var phi4_action_primitives(const ad::Var& phi, const Phi4Params& p)
{
	check_field("phi4_action_primitives", phi.value(), p);
	const std::size_t n = phi.shape()[0], L = p.L;
	// 4 x - (sum of nearest neighbours) as a 3x3 stencil
	Tensor stencil({1, 1, 3, 3}, std::vector<double>{0, -1, 0, -1, 4, -1, 0, -1, 0});
	auto x = ad::reshape(phi, {n, 1, L, L});
	auto lap = ad::conv2d_circular(x, ad::constant(stencil), ad::constant(Tensor({1}, 0.0)));
	auto kinetic = ad::mul(x, lap);
	auto x2 = ad::mul(x, x);
	auto potential = ad::add(ad::scale(x2, p.m2), ad::scale(ad::mul(x2, x2), p.lambda));
	return ad::sum_per_sample(ad::add(kinetic, potential));
}

// ------------------------------------------------------------------ targets

ad::Var Target::log_prob(const ad::Var& phi) const
{
	if (!differentiable())
		throw std::logic_error(fmt::format("target '{}' has no differentiable log P", name()));
	count_gradient_use();
	return differentiable_log_prob(phi);
}

Phi4Target::Phi4Target(Phi4Params params) : params_(params) { params_.validate(); }

std::vector<double> Phi4Target::log_prob(const Tensor& phi) const
{
	Tensor s = phi4_action(phi, params_);
	std::vector<double> out(s.size());
	for (std::size_t i = 0; i < s.size(); ++i)
		out[i] = -s[i];
	return out;
}

ad::Var Phi4Target::differentiable_log_prob(const ad::Var& phi) const
{
	Tensor s = phi4_action(phi.value(), params_);
	for (double& v : s.data())
		v = -v;
	Tensor field = phi.value();
	return ad::custom_op(std::move(s), {phi},
	                     [this, field = std::move(field)](const Tensor& g, const std::vector<Tensor*>& grads) {
		                     if (grads[0] == nullptr)
			                     return;
		                     count_gradient_use();
		                     Tensor dS = phi4_action_gradient(field, params_);
		                     const std::size_t sites = params_.L * params_.L;
		                     double* out = grads[0]->ptr();
		                     for (std::size_t b = 0; b < g.size(); ++b)
			                     for (std::size_t k = 0; k < sites; ++k)
				                     out[b * sites + k] -= g[b] * dS[b * sites + k];
	                     });
}

std::vector<double> GaussianTarget::log_prob(const Tensor& phi) const
{
	Tensor lp = standard_normal_log_prob(phi);
	std::vector<double> out(lp.size());
	for (std::size_t i = 0; i < lp.size(); ++i)
		out[i] = lp[i] + log_z_;
	return out;
}

ad::Var GaussianTarget::differentiable_log_prob(const ad::Var& phi) const
{
	return ad::shift(standard_normal_log_prob(phi), log_z_);
}

ad::Var OpaqueTarget::differentiable_log_prob(const ad::Var&) const
{
	throw std::logic_error(fmt::format("target '{}' has no differentiable log P", name_));
}

} // namespace flowgrad
