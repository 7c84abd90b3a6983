#include "flowgrad/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <stdexcept>

namespace flowgrad {

bool mis_accept(double log_p_trial, double log_q_trial, double log_p_cur, double log_q_cur, Rng& rng)
{
	if (std::isnan(log_p_trial) || std::isnan(log_q_trial) || std::isnan(log_p_cur) || std::isnan(log_q_cur))
		throw std::invalid_argument("mis_accept: NaN log density");
	const double log_ratio = (log_p_trial - log_q_trial) - (log_p_cur - log_q_cur);
	if (log_ratio >= 0.0)
		return true;
	std::uniform_real_distribution<double> uni(0.0, 1.0);
	return uni(rng) < std::exp(log_ratio);
}

double ChainRecord::acceptance() const
{
	return steps.empty() ? 0.0 : static_cast<double>(accepted) / static_cast<double>(steps.size());
}

std::vector<double> ChainRecord::series(std::string_view observable) const
{
	std::vector<double> out;
	out.reserve(steps.size());
	for (const auto& s : steps) {
		if (observable == "signal")
			out.push_back(s.signal());
		else if (observable == "magnetization")
			out.push_back(s.magnetization);
		else if (observable == "phi2")
			out.push_back(s.phi2);
		else if (observable == "log_p")
			out.push_back(s.log_p);
		else if (observable == "log_q")
			out.push_back(s.log_q);
		else
			throw std::invalid_argument(fmt::format("unknown chain observable '{}'", observable));
	}
	return out;
}

ChainRecord run_mis(const std::function<Proposal()>& propose, std::size_t chain_length, Rng& rng)
{
	if (chain_length < 1)
		throw std::invalid_argument("run_mis: chain_length must be at least 1");
	ChainRecord rec;
	rec.steps.reserve(chain_length);
	Proposal cur = propose();
	for (std::size_t k = 0; k < chain_length; ++k) {
		Proposal trial = propose();
		const bool acc = mis_accept(trial.log_p, trial.log_q, cur.log_p, cur.log_q, rng);
		if (acc) {
			cur = trial;
			++rec.accepted;
		}
		rec.steps.push_back({k, acc, cur.log_p, cur.log_q, cur.magnetization, cur.phi2});
	}
	return rec;
}

FlowDraws draw_from_flow(Flow& flow, const Target& target, std::size_t n, Rng& rng, std::size_t chunk)
{
	ad::NoGradGuard no_grad;
	FlowDraws out;
	out.log_q.reserve(n);
	out.log_p.reserve(n);
	out.magnetization.reserve(n);
	out.phi2.reserve(n);
	for (std::size_t done = 0; done < n;) {
		const std::size_t m = std::min(chunk, n - done);
		auto fwd = apply_flow(flow, flow.sample_prior(m, rng));
		const Tensor& phi = fwd.phi.value();
		auto lp = target.log_prob(phi);
		const std::size_t d = phi.size() / m;
		for (std::size_t i = 0; i < m; ++i) {
			double acc = 0.0, acc2 = 0.0;
			for (std::size_t k = 0; k < d; ++k) {
				const double v = phi[i * d + k];
				acc += v;
				acc2 += v * v;
			}
			out.magnetization.push_back(acc / static_cast<double>(d));
			out.phi2.push_back(acc2 / static_cast<double>(d));
			out.log_q.push_back(fwd.log_q.value()[i]);
			out.log_p.push_back(lp[i]);
		}
		done += m;
	}
	return out;
}

ChainRecord run_nmcmc(Flow& flow, const Target& target, std::size_t chain_length, Rng& rng,
                      std::size_t proposal_chunk)
{
	// Proposals are independent of the chain state, so they are drawn in
	// chunks ahead of the accept/reject loop from a separate stream.
	Rng proposal_rng(rng());
	FlowDraws pool;
	std::size_t next = 0;
	auto propose = [&]() {
		if (next == pool.log_q.size()) {
			pool = draw_from_flow(flow, target, proposal_chunk, proposal_rng, proposal_chunk);
			next = 0;
		}
		Proposal p{pool.log_p[next], pool.log_q[next], pool.magnetization[next], pool.phi2[next]};
		++next;
		return p;
	};
	return run_mis(propose, chain_length, rng);
}

double ess(std::span<const double> log_p, std::span<const double> log_q)
{
	if (log_p.size() != log_q.size() || log_p.empty())
		throw std::invalid_argument("ess: log P and log q must be non-empty and of equal length");
	std::vector<double> lw(log_p.size());
	for (std::size_t i = 0; i < lw.size(); ++i)
		lw[i] = log_p[i] - log_q[i];
	const double top = *std::max_element(lw.begin(), lw.end());
	double s1 = 0.0, s2 = 0.0;
	for (double v : lw) {
		const double w = std::exp(v - top);
		s1 += w;
		s2 += w * w;
	}
	return s1 * s1 / (static_cast<double>(lw.size()) * s2);
}

Autocorrelation autocorrelation(std::span<const double> x, double c)
{
	const std::size_t n = x.size();
	if (n < 100)
		throw std::invalid_argument(fmt::format("autocorrelation: series of length {} is shorter than 100", n));
	double mean = 0.0;
	for (double v : x)
		mean += v;
	mean /= static_cast<double>(n);
	std::vector<double> d(n);
	for (std::size_t i = 0; i < n; ++i)
		d[i] = x[i] - mean;

	auto autocov = [&](std::size_t t) {
		double acc = 0.0;
		for (std::size_t i = 0; i + t < n; ++i)
			acc += d[i] * d[i + t];
		return acc / static_cast<double>(n);
	};
	const double c0 = autocov(0);
	if (!(c0 > 0.0))
		throw std::domain_error("undefined autocorrelation: series has zero variance");

	Autocorrelation out;
	double tau = 1.0;
	for (std::size_t w = 1; w < n / 2; ++w) {
		tau += 2.0 * autocov(w) / c0;
		if (static_cast<double>(w) >= c * tau) {
			out.tau = tau;
			out.window = w;
			return out;
		}
	}
	out.tau = tau;
	out.window = n / 2 - 1;
	return out;
}

double integrated_autocorrelation(std::span<const double> series, double c)
{
	return autocorrelation(series, c).tau;
}

} // namespace flowgrad
