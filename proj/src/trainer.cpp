#include "flowgrad/trainer.hpp"
#include "flowgrad/sampler.hpp"

#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <stdexcept>

namespace flowgrad {

Adam::Adam(std::vector<ad::Parameter*> params, AdamOptions options) : params_(std::move(params)), options_(options)
{
	if (!(options_.lr > 0.0) || !(options_.beta1 >= 0.0 && options_.beta1 < 1.0) ||
	    !(options_.beta2 >= 0.0 && options_.beta2 < 1.0) || !(options_.eps > 0.0))
		throw std::invalid_argument("Adam: invalid hyperparameters");
	for (auto* p : params_) {
		m_.emplace_back(p->value.shape(), 0.0);
		v_.emplace_back(p->value.shape(), 0.0);
	}
}

void Adam::zero_grad()
{
	for (auto* p : params_)
		p->zero_grad();
}

void Adam::step()
{
	for (auto* p : params_)
		if (!p->grad.all_finite())
			throw std::runtime_error(fmt::format("Adam: non-finite gradient in '{}' at step {}", p->name(), steps_ + 1));

	++steps_;
	const auto& o = options_;
	const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(steps_));
	const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(steps_));
	for (std::size_t k = 0; k < params_.size(); ++k) {
		double* w = params_[k]->value.ptr();
		const double* g = params_[k]->grad.ptr();
		double* m = m_[k].ptr();
		double* v = v_[k].ptr();
		for (std::size_t i = 0, n = m_[k].size(); i < n; ++i) {
			m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
			v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
			w[i] -= o.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.eps);
		}
	}
	zero_grad();
}

void Adam::restore(std::size_t steps, std::vector<Tensor> m, std::vector<Tensor> v)
{
	if (m.size() != params_.size() || v.size() != params_.size())
		throw std::invalid_argument("Adam::restore: moment count does not match parameters");
	for (std::size_t k = 0; k < params_.size(); ++k)
		if (m[k].shape() != params_[k]->value.shape() || v[k].shape() != params_[k]->value.shape())
			throw ShapeError("Adam::restore", {m[k].shape(), params_[k]->value.shape()});
	steps_ = steps;
	m_ = std::move(m);
	v_ = std::move(v);
}

StepMetrics train_step(Flow& flow, const Target& target, Estimator estimator, std::size_t batch_size, Adam& adam,
                       Rng& rng)
{
	adam.zero_grad();
	StepMetrics m;
	{
		ad::Tape tape;
		ad::TapeScope scope(tape);
		auto loss = make_loss(estimator, flow, target, batch_size, rng);
		m.loss = loss.loss.value().item();
		if (!std::isfinite(m.loss))
			throw NonFiniteLoss(m.loss, loss.phi);
		ad::backward(loss.loss);
		m.mean_log_q = loss.mean_log_q();
		m.mean_log_p = loss.mean_log_p();
		m.free_energy = loss.free_energy();
		m.ess = ess(loss.log_p, loss.log_q);
	}
	adam.step();
	return m;
}

GradientVariance gradient_variance(const Flow& flow, const Target& target, Estimator estimator, std::size_t n_batches,
                                   std::size_t batch_size, std::uint64_t seed)
{
	if (n_batches < 1)
		throw std::invalid_argument("gradient_variance: n_batches must be at least 1");
	auto acc = gradient_moments(estimator, flow, target, batch_size, n_batches, seed);
	auto var = acc.variance();
	GradientVariance out;
	out.variance = std::accumulate(var.begin(), var.end(), 0.0) / static_cast<double>(var.size());
	out.std = std::sqrt(out.variance);
	out.n_batches = acc.count();
	return out;
}

double signal_std(Flow& flow, const Target& target, std::size_t n_samples, Rng& rng)
{
	if (n_samples < 2)
		throw std::invalid_argument("signal_std: need at least 2 samples");
	auto draws = draw_from_flow(flow, target, n_samples, rng);
	auto s = signal(draws.log_q, draws.log_p);
	const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
	double ss = 0.0;
	for (double v : s)
		ss += (v - mean) * (v - mean);
	return std::sqrt(ss / static_cast<double>(s.size()));
}

} // namespace flowgrad
