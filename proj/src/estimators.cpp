#include "flowgrad/estimators.hpp"
#include "flowgrad/parallel.hpp"

#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <stdexcept>

namespace flowgrad {

Estimator parse_estimator(std::string_view key)
{
	if (key == "g1")
		return Estimator::g1;
	if (key == "g2")
		return Estimator::g2;
	if (key == "g3")
		return Estimator::g3;
	throw std::invalid_argument(fmt::format("unknown estimator '{}' (expected g1, g2 or g3)", key));
}

std::string_view to_string(Estimator e)
{
	switch (e) {
	case Estimator::g1:
		return "g1";
	case Estimator::g2:
		return "g2";
	case Estimator::g3:
		return "g3";
	}
	return "?";
}

namespace {
double average(const std::vector<double>& v)
{
	return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Shared by g1 and g2: sample without gradients, then recompute log q
// through the inverse flow with gradients on. `baseline` is subtracted
// from the detached signal.
LossValue score_function_loss(Flow& flow, const Target& target, const PriorSample& batch, bool subtract_mean)
{
	LossValue out;
	{
		ad::NoGradGuard no_grad;
		auto fwd = apply_flow(flow, batch);
		out.phi = fwd.phi.value();
		out.log_q = to_vector(fwd.log_q.value());
	}
	out.log_p = target.log_prob(out.phi);

	std::vector<double> s = signal(out.log_q, out.log_p);
	const double total = std::accumulate(s.begin(), s.end(), 0.0);
	if (!std::isfinite(total))
		throw NonFiniteLoss(total, out.phi);
	if (subtract_mean) {
		const double s_bar = average(s);
		for (double& v : s)
			v -= s_bar;
	}
	const std::size_t n = s.size();
	auto log_q = log_density(flow, ad::constant(out.phi));
	out.loss = ad::mean(ad::mul(log_q, ad::constant(Tensor({n}, std::move(s)))));
	return out;
}
} // namespace

NonFiniteLoss::NonFiniteLoss(double loss, Tensor phi)
    : std::runtime_error(fmt::format("non-finite training loss {}", loss)), loss_(loss), phi_(std::move(phi))
{
}

double LossValue::mean_log_q() const { return average(log_q); }
double LossValue::mean_log_p() const { return average(log_p); }
double LossValue::free_energy() const { return mean_log_q() - mean_log_p(); }

std::vector<double> signal(std::span<const double> log_q, std::span<const double> log_p)
{
	if (log_q.size() != log_p.size())
		throw std::invalid_argument("signal: log q and log P batches differ in size");
	std::vector<double> s(log_q.size());
	for (std::size_t i = 0; i < s.size(); ++i)
		s[i] = log_q[i] - log_p[i];
	return s;
}

LossValue loss_g1(Flow& flow, const Target& target, const PriorSample& batch)
{
	return score_function_loss(flow, target, batch, false);
}

LossValue loss_g2(Flow& flow, const Target& target, const PriorSample& batch)
{
	if (batch.batch_size() < 2)
		throw std::invalid_argument("g2 needs a batch of at least 2 samples for the mean baseline");
	return score_function_loss(flow, target, batch, true);
}

LossValue loss_g3(Flow& flow, const Target& target, const PriorSample& batch)
{
	if (!target.differentiable())
		throw std::invalid_argument(fmt::format("g3 requires a differentiable log P; target '{}' has none", target.name()));
	LossValue out;
	auto fwd = apply_flow(flow, batch);
	auto log_p = target.log_prob(fwd.phi);
	out.loss = ad::mean(ad::sub(fwd.log_q, log_p));
	out.phi = fwd.phi.value();
	out.log_q = to_vector(fwd.log_q.value());
	out.log_p = to_vector(log_p.value());
	return out;
}

LossValue make_loss(Estimator e, Flow& flow, const Target& target, const PriorSample& batch)
{
	switch (e) {
	case Estimator::g1:
		return loss_g1(flow, target, batch);
	case Estimator::g2:
		return loss_g2(flow, target, batch);
	case Estimator::g3:
		return loss_g3(flow, target, batch);
	}
	throw std::logic_error("unreachable estimator");
}

LossValue make_loss(Estimator e, Flow& flow, const Target& target, std::size_t batch_size, Rng& rng)
{
	return make_loss(e, flow, target, flow.sample_prior(batch_size, rng));
}

GradEstimate flatten_grads(Flow& flow)
{
	GradEstimate out;
	out.reserve(flow.parameter_count());
	for (auto* p : flow.parameters())
		out.insert(out.end(), p->grad.data().begin(), p->grad.data().end());
	return out;
}

GradEstimate estimate_gradient(Estimator e, Flow& flow, const Target& target, const PriorSample& batch)
{
	flow.zero_grad();
	ad::Tape tape;
	GradEstimate g;
	{
		ad::TapeScope scope(tape);
		auto loss = make_loss(e, flow, target, batch);
		ad::backward(loss.loss);
	}
	g = flatten_grads(flow);
	flow.zero_grad();
	return g;
}

GradEstimate mean_score(Flow& flow, const Tensor& phi)
{
	flow.zero_grad();
	ad::Tape tape;
	{
		ad::TapeScope scope(tape);
		ad::backward(ad::mean(log_density(flow, ad::constant(phi))));
	}
	GradEstimate g = flatten_grads(flow);
	flow.zero_grad();
	return g;
}

// ------------------------------------------------------------- moments

void MomentAccumulator::add(std::span<const double> x)
{
	if (mean_.empty() && count_ == 0) {
		mean_.assign(x.size(), 0.0);
		m2_.assign(x.size(), 0.0);
	}
	if (x.size() != mean_.size())
		throw std::invalid_argument("MomentAccumulator: dimension mismatch");
	++count_;
	const double inv = 1.0 / static_cast<double>(count_);
	for (std::size_t j = 0; j < x.size(); ++j) {
		const double d = x[j] - mean_[j];
		mean_[j] += d * inv;
		m2_[j] += d * (x[j] - mean_[j]);
	}
}

void MomentAccumulator::merge(const MomentAccumulator& other)
{
	if (other.count_ == 0)
		return;
	if (count_ == 0) {
		*this = other;
		return;
	}
	if (other.dim() != dim())
		throw std::invalid_argument("MomentAccumulator: dimension mismatch");
	const double na = static_cast<double>(count_), nb = static_cast<double>(other.count_);
	const double n = na + nb;
	for (std::size_t j = 0; j < mean_.size(); ++j) {
		const double d = other.mean_[j] - mean_[j];
		mean_[j] += d * nb / n;
		m2_[j] += other.m2_[j] + d * d * na * nb / n;
	}
	count_ += other.count_;
}

std::vector<double> MomentAccumulator::variance() const
{
	std::vector<double> v(m2_.size(), 0.0);
	if (count_ == 0)
		return v;
	for (std::size_t j = 0; j < v.size(); ++j)
		v[j] = m2_[j] / static_cast<double>(count_);
	return v;
}

std::vector<double> MomentAccumulator::standard_error() const
{
	std::vector<double> se(m2_.size(), 0.0);
	if (count_ < 2)
		return se;
	const double n = static_cast<double>(count_);
	for (std::size_t j = 0; j < se.size(); ++j)
		se[j] = std::sqrt(m2_[j] / (n - 1.0) / n);
	return se;
}

MomentAccumulator gradient_moments(Estimator e, const Flow& flow, const Target& target, std::size_t batch_size,
                                   std::size_t n_batches, std::uint64_t seed)
{
	constexpr std::size_t chunk = 8;
	const std::size_t n_chunks = (n_batches + chunk - 1) / chunk;
	std::vector<MomentAccumulator> partial(n_chunks);
	parallel_for(n_chunks, [&](std::size_t c) {
		auto local = flow.clone();
		MomentAccumulator acc;
		for (std::size_t k = c * chunk; k < std::min(n_batches, (c + 1) * chunk); ++k) {
			Rng rng = make_rng(seed, k);
			auto batch = local->sample_prior(batch_size, rng);
			acc.add(estimate_gradient(e, *local, target, batch));
		}
		partial[c] = std::move(acc);
	});
	MomentAccumulator total;
	for (const auto& p : partial)
		total.merge(p);
	return total;
}

MeanEstimate estimator_mean_check(Estimator e, const Flow& flow, const Target& target, std::size_t batch_size,
                                  std::size_t n_batches, std::uint64_t seed)
{
	auto acc = gradient_moments(e, flow, target, batch_size, n_batches, seed);
	return {acc.mean(), acc.standard_error(), acc.count()};
}

} // namespace flowgrad
