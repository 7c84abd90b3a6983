#pragma once

#include "flowgrad/flow.hpp"
#include "flowgrad/physics.hpp"
#include "flowgrad/rng.hpp"

#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace flowgrad {

/// Metropolis-Hastings acceptance for independent proposals: accept with
/// probability min{1, exp[(log_p_trial - log_q_trial) - (log_p_cur - log_q_cur)]}.
/// Throws std::invalid_argument on NaN input.
bool mis_accept(double log_p_trial, double log_q_trial, double log_p_cur, double log_q_cur, Rng& rng);

/// One independent proposal with its densities and observables.
struct Proposal {
	double log_p = 0.0;
	double log_q = 0.0;
	double magnetization = 0.0;
	double phi2 = 0.0;
};

struct ChainStep {
	std::size_t step = 0;
	bool accepted = false;
	double log_p = 0.0; // of the state held after this step
	double log_q = 0.0;
	double magnetization = 0.0;
	double phi2 = 0.0;
	double signal() const { return log_q - log_p; }
};

struct ChainRecord {
	std::vector<ChainStep> steps;
	std::size_t accepted = 0;

	double acceptance() const;

	/// "signal", "magnetization", "phi2", "log_p" or "log_q" per step.
	std::vector<double> series(std::string_view observable) const;
};

/// Metropolized independent sampling. The chain starts from one extra
/// proposal and then performs chain_length accept/reject steps; rejected
/// steps repeat the previous state.
ChainRecord run_mis(const std::function<Proposal()>& propose, std::size_t chain_length, Rng& rng);

/// Independent draws from a flow, generated in chunks without gradients.
struct FlowDraws {
	std::vector<double> log_q;
	std::vector<double> log_p;
	std::vector<double> magnetization; // mean field value per configuration
	std::vector<double> phi2;          // mean squared field value per configuration
};

FlowDraws draw_from_flow(Flow& flow, const Target& target, std::size_t n, Rng& rng, std::size_t chunk = 1024);

/// Neural MCMC: MIS with the flow as the proposal distribution.
ChainRecord run_nmcmc(Flow& flow, const Target& target, std::size_t chain_length, Rng& rng,
                      std::size_t proposal_chunk = 1024);

/// (sum w)^2 / (N sum w^2) with w = exp(log_p - log_q), evaluated with a
/// max-log shift. Unnormalized log_p is fine.
double ess(std::span<const double> log_p, std::span<const double> log_q);

struct Autocorrelation {
	double tau = 1.0;       // 1 + 2 sum_{t=1}^{W} rho(t)
	std::size_t window = 0; // W
};

/// Integrated autocorrelation time with automatic windowing: the smallest W
/// with W >= c * tau(W). Throws std::invalid_argument for series shorter
/// than 100 and std::domain_error for constant series.
Autocorrelation autocorrelation(std::span<const double> series, double c = 6.0);
double integrated_autocorrelation(std::span<const double> series, double c = 6.0);

} // namespace flowgrad
