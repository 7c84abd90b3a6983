// Qualitative properties of the desk-scale phi^4 runs. Reads the runs that
// `acceptance train-desk` leaves in $DESK_RUNS.

#include "flowgrad/checkpoint.hpp"
#include "flowgrad/config.hpp"
#include "flowgrad/run.hpp"
#include "flowgrad/sampler.hpp"
#include "flowgrad/trainer.hpp"

#include <doctest.h>
#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace flowgrad;
namespace fs = std::filesystem;

namespace {

const std::vector<std::uint64_t> seeds{1, 2, 3};
constexpr std::size_t warm_up = 20;

fs::path runs()
{
	const char* dir = std::getenv("DESK_RUNS");
	REQUIRE_MESSAGE(dir != nullptr, "DESK_RUNS is not set");
	return dir;
}

fs::path run_dir(const char* estimator, std::uint64_t seed)
{
	return runs() / fmt::format("{}_seed{}", estimator, seed);
}

std::vector<EpochRecord> metrics(const char* estimator, std::uint64_t seed)
{
	return read_metrics(run_dir(estimator, seed) / "metrics.jsonl");
}

Checkpoint at_epoch(const char* estimator, std::uint64_t seed, std::size_t epoch)
{
	return load_checkpoint(run_dir(estimator, seed) / "checkpoints" / fmt::format("epoch_{:04d}.json", epoch));
}

const Phi4Target& target()
{
	static Phi4Target t(preset("phi4-desk").target.phi4);
	return t;
}

double mean_ess(const std::vector<EpochRecord>& r, std::size_t from, std::size_t to)
{
	double s = 0.0;
	for (std::size_t k = from; k < to; ++k)
		s += r[k].ess;
	return s / static_cast<double>(to - from);
}

} // namespace

TEST_CASE("every desk run has 200 epoch records")
{
	for (const char* e : {"g1", "g2", "g3"})
		for (auto seed : seeds) {
			CAPTURE(e);
			CAPTURE(seed);
			auto r = metrics(e, seed);
			REQUIRE(r.size() == 200);
			for (std::size_t k = 0; k < r.size(); ++k) {
				CHECK(r[k].epoch == k + 1);
				CHECK(r[k].estimator == e);
				CHECK(r[k].seed == seed);
				CHECK(std::isfinite(r[k].f_q));
				if (k > 0)
					CHECK(r[k].wall_s > r[k - 1].wall_s);
			}
		}
}

TEST_CASE("F_q decreases over the first 50 epochs for g2 and g3")
{
	// Ten-epoch block means smooth out the step noise.
	for (const char* e : {"g2", "g3"})
		for (auto seed : seeds) {
			CAPTURE(e);
			CAPTURE(seed);
			auto r = metrics(e, seed);
			std::vector<double> blocks;
			for (std::size_t b = 0; b < 5; ++b) {
				double s = 0.0;
				for (std::size_t k = 10 * b; k < 10 * b + 10; ++k)
					s += r[k].f_q;
				blocks.push_back(s / 10.0);
			}
			for (std::size_t b = 1; b < blocks.size(); ++b)
				CHECK(blocks[b] < blocks[b - 1]);
		}
}

TEST_CASE("g1 trails g2 and g3 in ESS after equal epochs")
{
	for (auto seed : seeds) {
		CAPTURE(seed);
		auto g1 = metrics("g1", seed), g2 = metrics("g2", seed), g3 = metrics("g3", seed);
		for (std::size_t end : {100, 200}) {
			CAPTURE(end);
			const double e1 = mean_ess(g1, end - 10, end);
			CHECK(e1 < mean_ess(g2, end - 10, end));
			CHECK(e1 < mean_ess(g3, end - 10, end));
		}
	}
}

TEST_CASE("g2 ESS is at least g3's in most epochs after warm-up")
{
	std::size_t wins = 0, total = 0;
	for (auto seed : seeds) {
		auto g2 = metrics("g2", seed), g3 = metrics("g3", seed);
		std::size_t w = 0;
		for (std::size_t k = warm_up; k < g2.size(); ++k)
			w += g2[k].ess >= g3[k].ess;
		MESSAGE(fmt::format("seed {}: g2 ESS >= g3 ESS in {} of {} epochs", seed, w, g2.size() - warm_up));
		wins += w;
		total += g2.size() - warm_up;
	}
	CHECK(static_cast<double>(wins) > 0.6 * static_cast<double>(total));
}

TEST_CASE("acceptance and autocorrelation time are anti-correlated across trained checkpoints")
{
	std::vector<double> acc, tau;
	std::vector<std::string> names;
	for (std::size_t epoch : {50, 100, 150, 200}) {
		auto ck = at_epoch("g2", 1, epoch);
		Rng rng = make_rng(4242);
		auto chain = run_nmcmc(*ck.flow, target(), 200000, rng);
		acc.push_back(chain.acceptance());
		tau.push_back(integrated_autocorrelation(chain.series("signal")));
		names.push_back(fmt::format("epoch {}", epoch));
		MESSAGE(fmt::format("{}: acceptance {:.4f}, tau {:.2f}", names.back(), acc.back(), tau.back()));
	}

	// Higher acceptance must come with lower tau for every pair.
	for (std::size_t i = 0; i < acc.size(); ++i)
		for (std::size_t j = 0; j < acc.size(); ++j)
			if (acc[i] > acc[j]) {
				CAPTURE(names[i]);
				CAPTURE(names[j]);
				CHECK(tau[i] < tau[j]);
			}
}

TEST_CASE("the untrained flow is rarely accepted")
{
	// Its tau is not resolvable from a chain of this length, so only acceptance is compared.
	RunConfig c = preset("phi4-desk");
	Rng init = make_rng(1, 0);
	auto untrained = make_flow(c, init);
	Rng a = make_rng(4242), b = make_rng(4242);
	const double before = run_nmcmc(*untrained, target(), 50000, a).acceptance();
	const double after = run_nmcmc(*at_epoch("g2", 1, 200).flow, target(), 50000, b).acceptance();
	MESSAGE(fmt::format("acceptance {:.4f} untrained, {:.4f} at epoch 200", before, after));
	CHECK(before < 0.5 * after);
}

TEST_CASE("signal std shrinks as training proceeds")
{
	for (const char* e : {"g2", "g3"})
		for (auto seed : seeds) {
			CAPTURE(e);
			CAPTURE(seed);
			auto early = at_epoch(e, seed, 20), late = at_epoch(e, seed, 200);
			Rng a = make_rng(77, seed), b = make_rng(77, seed);
			const double s_early = signal_std(*early.flow, target(), 20000, a);
			const double s_late = signal_std(*late.flow, target(), 20000, b);
			MESSAGE(fmt::format("{} seed {}: signal std {:.4f} at epoch 20, {:.4f} at epoch 200", e, seed, s_early,
			                    s_late));
			CHECK(s_late < s_early);
		}
}

TEST_CASE("g1 variance exceeds g2 and g3 by an order of magnitude on one checkpoint")
{
	for (auto seed : seeds) {
		CAPTURE(seed);
		auto ck = at_epoch("g2", seed, 100);
		const double v1 = gradient_variance(*ck.flow, target(), Estimator::g1, 100, 256, 900 + seed).variance;
		const double v2 = gradient_variance(*ck.flow, target(), Estimator::g2, 100, 256, 900 + seed).variance;
		const double v3 = gradient_variance(*ck.flow, target(), Estimator::g3, 100, 256, 900 + seed).variance;
		MESSAGE(fmt::format("seed {}: Var g1 {:.3e}, g2 {:.3e}, g3 {:.3e}", seed, v1, v2, v3));
		CHECK(v1 >= 10.0 * v2);
		CHECK(v1 >= 10.0 * v3);
	}
}

TEST_CASE("sampling a trained desk checkpoint gives a finite summary")
{
	const fs::path out = runs() / "sample_g2_seed1";
	const std::string cmd =
	    fmt::format("'{}' sample --checkpoint '{}' --seed 1 --chain-length 20000 --n-eval 20000 --out '{}' > /dev/null",
	                FLOWGRAD_CLI, (run_dir("g2", 1) / "best.json").string(), out.string());
	const int status = std::system(cmd.c_str());
	REQUIRE(WIFEXITED(status));
	REQUIRE(WEXITSTATUS(status) == 0);
	std::ifstream in(out / "summary.json");
	auto summary = nlohmann::json::parse(in);
	for (const char* key : {"f_q", "signal_std", "acceptance", "tau"}) {
		CAPTURE(key);
		REQUIRE(summary[key].is_number());
		CHECK(std::isfinite(summary[key].get<double>()));
	}
	CHECK(summary["acceptance"].get<double>() > 0.0);
}
