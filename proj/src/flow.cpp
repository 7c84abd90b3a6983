#include "flowgrad/flow.hpp"

#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <stdexcept>

namespace flowgrad {

namespace {
constexpr double log_two_pi = 1.8378770664093454835606594728112; // log(2 pi)

Tensor checkerboard(std::size_t L, Parity frozen_parity, bool want_frozen)
{
	Tensor m({L, L});
	const std::size_t frozen_bit = frozen_parity == Parity::even ? 0 : 1;
	for (std::size_t i = 0; i < L; ++i)
		for (std::size_t j = 0; j < L; ++j) {
			bool frozen = (i + j) % 2 == frozen_bit;
			m[i * L + j] = frozen == want_frozen ? 1.0 : 0.0;
		}
	return m;
}
} // namespace

std::size_t Flow::parameter_count()
{
	std::size_t n = 0;
	for (auto* p : parameters())
		n += p->value.size();
	return n;
}

void Flow::zero_grad()
{
	for (auto* p : parameters())
		p->zero_grad();
}

ad::Var log_density(Flow& flow, const ad::Var& phi)
{
	auto rev = flow.reverse(phi);
	return ad::add(flow.prior_log_prob(rev.z), rev.log_jbar);
}

FlowResult apply_flow(Flow& flow, const PriorSample& sample)
{
	return flow.apply(ad::constant(sample.z), ad::constant(sample.log_q_pr));
}

Tensor standard_normal_log_prob(const Tensor& z)
{
	const std::size_t n = z.dim(0);
	const std::size_t d = z.size() / n;
	Tensor out({n});
	for (std::size_t b = 0; b < n; ++b) {
		double sq = 0.0;
		for (std::size_t k = 0; k < d; ++k) {
			double v = z[b * d + k];
			sq += v * v;
		}
		out[b] = -0.5 * static_cast<double>(d) * log_two_pi - 0.5 * sq;
	}
	return out;
}

ad::Var standard_normal_log_prob(const ad::Var& z)
{
	const std::size_t n = z.shape().at(0);
	const double d = static_cast<double>(z.value().size() / n);
	auto sq = ad::sum_per_sample(ad::mul(z, z));
	return ad::shift(ad::scale(sq, -0.5), -0.5 * d * log_two_pi);
}

// ------------------------------------------------------------ CouplingLayer

void CouplingFlowConfig::validate() const
{
	if (L < 3)
		throw std::invalid_argument(fmt::format("coupling flow: lattice extent L={} must be at least 3", L));
	if (hidden_channels < 1)
		throw std::invalid_argument("coupling flow: hidden_channels must be positive");
	if (!(leaky_slope >= 0.0))
		throw std::invalid_argument("coupling flow: leaky_slope must be non-negative");
	if (!(init_scale >= 0.0))
		throw std::invalid_argument("coupling flow: init_scale must be non-negative");
}

CouplingLayer::CouplingLayer(Parity parity, const CouplingFlowConfig& config, Rng& init_rng, std::size_t index)
    : parity_(parity), L_(config.L), slope_(config.leaky_slope), active_(checkerboard(config.L, parity, false)),
      frozen_(checkerboard(config.L, parity, true))
{
	const std::size_t h = config.hidden_channels;
	const std::size_t channels[5] = {1, h, h, h, 2};
	for (std::size_t c = 0; c < 4; ++c) {
		const std::size_t cin = channels[c], cout = channels[c + 1];
		const double bound = 1.0 / std::sqrt(static_cast<double>(cin * 9));
		const double scale = c == 3 ? config.init_scale : 1.0;
		std::uniform_real_distribution<double> uni(-bound, bound);
		Tensor w({cout, cin, 3, 3});
		for (double& v : w.data())
			v = scale * uni(init_rng);
		Tensor b({cout});
		for (double& v : b.data())
			v = scale * uni(init_rng);
		params_.emplace_back(fmt::format("layer{}.conv{}.weight", index, c + 1), std::move(w));
		params_.emplace_back(fmt::format("layer{}.conv{}.bias", index, c + 1), std::move(b));
	}
}

Tensor CouplingLayer::batch_mask(const Tensor& mask, std::size_t n) const
{
	Tensor out({n, L_, L_});
	const std::size_t sites = L_ * L_;
	for (std::size_t b = 0; b < n; ++b)
		std::copy(mask.ptr(), mask.ptr() + sites, out.ptr() + b * sites);
	return out;
}

CouplingLayer::ScaleShift CouplingLayer::network(const ad::Var& frozen)
{
	const std::size_t n = frozen.shape()[0];
	auto h = ad::reshape(frozen, {n, 1, L_, L_});
	for (std::size_t c = 0; c < 4; ++c) {
		h = ad::conv2d_circular(h, ad::param(params_[2 * c]), ad::param(params_[2 * c + 1]));
		h = c < 3 ? ad::leaky_relu(h, slope_) : ad::tanh(h);
	}
	auto active = ad::constant(batch_mask(active_, n));
	return {ad::mul(ad::select_channel(h, 0), active), ad::mul(ad::select_channel(h, 1), active)};
}

CouplingLayer::Output CouplingLayer::forward(const ad::Var& phi)
{
	const Shape& shape = phi.shape();
	if (shape.size() != 3 || shape[1] != L_ || shape[2] != L_)
		throw ShapeError("coupling_forward", {shape, Shape{L_, L_}}, "expected [N,L,L]");
	auto frozen = ad::mul(phi, ad::constant(batch_mask(frozen_, shape[0])));
	auto [s, t] = network(frozen);
	auto out = ad::add(ad::mul(phi, ad::exp(s)), t);
	return {out, ad::sum_per_sample(s)};
}

CouplingLayer::Output CouplingLayer::reverse(const ad::Var& phi)
{
	const Shape& shape = phi.shape();
	if (shape.size() != 3 || shape[1] != L_ || shape[2] != L_)
		throw ShapeError("coupling_reverse", {shape, Shape{L_, L_}}, "expected [N,L,L]");
	auto frozen = ad::mul(phi, ad::constant(batch_mask(frozen_, shape[0])));
	auto [s, t] = network(frozen);
	auto out = ad::mul(ad::sub(phi, t), ad::exp(ad::neg(s)));
	return {out, ad::neg(ad::sum_per_sample(s))};
}

void CouplingLayer::make_identity()
{
	params_[6].value.fill(0.0);
	params_[7].value.fill(0.0);
}

void CouplingLayer::force_constant_output(double s_pre, double t_pre)
{
	params_[6].value.fill(0.0);
	params_[7].value[0] = s_pre;
	params_[7].value[1] = t_pre;
}

// ------------------------------------------------------------- CouplingFlow

CouplingFlow::CouplingFlow(const CouplingFlowConfig& config, Rng& init_rng) : config_(config)
{
	config_.validate();
	layers_.reserve(config_.layers);
	for (std::size_t k = 0; k < config_.layers; ++k)
		layers_.emplace_back(k % 2 == 0 ? Parity::even : Parity::odd, config_, init_rng, k);
}

PriorSample CouplingFlow::sample_prior(std::size_t batch_size, Rng& rng) const
{
	if (batch_size < 1)
		throw std::invalid_argument("sample_prior: batch_size must be at least 1");
	std::normal_distribution<double> normal(0.0, 1.0);
	Tensor z({batch_size, config_.L, config_.L});
	for (double& v : z.data())
		v = normal(rng);
	Tensor log_q = standard_normal_log_prob(z);
	return {std::move(z), std::move(log_q)};
}

ad::Var CouplingFlow::prior_log_prob(const ad::Var& z) const { return standard_normal_log_prob(z); }

FlowResult CouplingFlow::apply(const ad::Var& z, const ad::Var& log_q_pr)
{
	ad::Var x = z;
	ad::Var log_q = log_q_pr;
	for (auto& layer : layers_) {
		auto out = layer.forward(x);
		x = out.phi;
		log_q = ad::sub(log_q, out.log_jac);
	}
	return {x, log_q};
}

ReverseResult CouplingFlow::reverse(const ad::Var& phi)
{
	ad::Var x = phi;
	ad::Var log_jbar = ad::constant(Tensor({phi.shape().at(0)}, 0.0));
	for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
		auto out = it->reverse(x);
		x = out.phi;
		log_jbar = ad::add(log_jbar, out.log_jac);
	}
	return {x, log_jbar};
}

std::vector<ad::Parameter*> CouplingFlow::parameters()
{
	std::vector<ad::Parameter*> out;
	for (auto& layer : layers_)
		for (auto& p : layer.parameters())
			out.push_back(&p);
	return out;
}

std::unique_ptr<Flow> CouplingFlow::clone() const { return std::make_unique<CouplingFlow>(*this); }

void CouplingFlow::make_identity()
{
	for (auto& layer : layers_)
		layer.make_identity();
}

} // namespace flowgrad
