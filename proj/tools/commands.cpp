#include "commands.hpp"

#include "flowgrad/checkpoint.hpp"
#include "flowgrad/config.hpp"
#include "flowgrad/run.hpp"
#include "flowgrad/sampler.hpp"
#include "flowgrad/toymodel.hpp"
#include "flowgrad/trainer.hpp"

#include <fmt/format.h>
#include <fmt/os.h>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace flowgrad;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json nullable(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::optional<Checkpoint> open_checkpoint(const std::string& path, int& code)
{
	try {
		return load_checkpoint(path);
	}
	catch (const CheckpointError& e) {
		fmt::print(stderr, "error: {}\n", e.what());
		code = exit_checkpoint;
		return std::nullopt;
	}
}

} // namespace

int cmd_train(const TrainArgs& a)
{
	RunConfig cfg;
	try {
		cfg = a.config.empty() ? preset(a.preset) : load_config(a.config);
		if (a.seed)
			cfg.training.seed = *a.seed;
		if (a.estimator) {
			try {
				cfg.training.estimator = parse_estimator(*a.estimator);
			}
			catch (const std::invalid_argument&) {
				throw ConfigError("training.estimator", fmt::format("unknown estimator '{}'", *a.estimator));
			}
		}
		if (a.epochs)
			cfg.training.epochs = *a.epochs;
		if (!a.out.empty())
			cfg.output.dir = a.out;
		cfg.validate();
	}
	catch (const ConfigError& e) {
		fmt::print(stderr, "invalid config: {}\n", e.what());
		return exit_invalid;
	}

	auto est = runtime_estimate(cfg);
	if (est.full_scale)
		fmt::print(stderr, "warning: {}\n", est.message);

	RunOptions opts;
	opts.resume = a.resume;
	const std::size_t total = cfg.training.epochs;
	opts.on_epoch = [total](const EpochRecord& r) {
		fmt::print(stderr, "epoch {}/{}  F_q {:.5f}  ESS {:.4f}  {:.1f} s\n", r.epoch, total, r.f_q, r.ess, r.wall_s);
	};
	try {
		auto result = train_run(cfg, opts);
		fmt::print("{}\n", (result.dir / "manifest.json").string());
	}
	catch (const CheckpointError& e) {
		fmt::print(stderr, "error: {}\n", e.what());
		return exit_checkpoint;
	}
	catch (const std::exception& e) {
		fmt::print(stderr, "error: {}\n", e.what());
		return exit_failure;
	}
	return exit_ok;
}

int cmd_sample(const SampleArgs& a)
{
	int code = exit_ok;
	auto ck = open_checkpoint(a.checkpoint, code);
	if (!ck)
		return code;
	try {
		auto target = make_target(ck->target);
		Flow& flow = *ck->flow;

		Rng chain_rng = make_rng(a.seed, 0);
		auto chain = run_nmcmc(flow, *target, a.chain_length, chain_rng);

		fs::create_directories(a.out);
		{
			auto out = fmt::output_file((fs::path(a.out) / "chain.jsonl").string());
			for (const auto& st : chain.steps)
				out.print("{}\n", json{{"step", st.step},
				                       {"accepted", st.accepted},
				                       {"log_p", st.log_p},
				                       {"log_q", st.log_q},
				                       {"signal", st.signal()},
				                       {"magnetization", st.magnetization},
				                       {"phi2", st.phi2}}
				                      .dump());
		}

		json tau = nullptr, window = nullptr, tau_note = nullptr;
		try {
			auto ac = autocorrelation(chain.series(a.observable), a.window_c);
			tau = ac.tau;
			window = ac.window;
		}
		catch (const std::exception& e) {
			tau_note = e.what();
		}

		Rng eval_rng = make_rng(a.seed, 1);
		auto draws = draw_from_flow(flow, *target, a.n_eval, eval_rng);
		auto s = signal(draws.log_q, draws.log_p);
		double mean = 0.0;
		for (double v : s)
			mean += v;
		mean /= static_cast<double>(s.size());
		double ss = 0.0;
		for (double v : s)
			ss += (v - mean) * (v - mean);

		json summary = {
		    {"format", "flowgrad-sample-summary"},
		    {"format_version", 1},
		    {"checkpoint", a.checkpoint},
		    {"seed", a.seed},
		    {"chain_length", a.chain_length},
		    {"acceptance", chain.acceptance()},
		    {"observable", a.observable},
		    {"tau", tau},
		    {"tau_window", window},
		    {"tau_note", tau_note},
		    {"n_eval", a.n_eval},
		    {"f_q", nullable(mean)},
		    {"ess", nullable(ess(draws.log_p, draws.log_q))},
		    {"signal_std", nullable(std::sqrt(ss / static_cast<double>(s.size())))},
		};
		write_file_atomic(fs::path(a.out) / "summary.json", summary.dump(1, '\t') + "\n");
		fmt::print("{}\n", summary.dump(1, '\t'));
	}
	catch (const std::exception& e) {
		fmt::print(stderr, "error: {}\n", e.what());
		return exit_failure;
	}
	return exit_ok;
}

int cmd_variance(const VarianceArgs& a)
{
	if (a.n_batches < 2) {
		fmt::print(stderr, "invalid arguments: --n-batches must be at least 2 (got {})\n", a.n_batches);
		return exit_invalid;
	}
	if (a.batch_size < 2) {
		fmt::print(stderr, "invalid arguments: --batch-size must be at least 2 (got {})\n", a.batch_size);
		return exit_invalid;
	}
	std::vector<Estimator> which;
	try {
		for (const auto& key : a.estimators)
			which.push_back(parse_estimator(key));
	}
	catch (const std::invalid_argument& e) {
		fmt::print(stderr, "invalid arguments: {}\n", e.what());
		return exit_invalid;
	}
	if (which.empty())
		which = {Estimator::g1, Estimator::g2, Estimator::g3};

	int code = exit_ok;
	auto ck = open_checkpoint(a.checkpoint, code);
	if (!ck)
		return code;
	try {
		auto target = make_target(ck->target);
		json report = {
		    {"format", "flowgrad-variance-report"},
		    {"format_version", 1},
		    {"checkpoint", a.checkpoint},
		    {"n_batches", a.n_batches},
		    {"batch_size", a.batch_size},
		    {"seed", a.seed},
		    {"parameters", ck->flow->parameter_count()},
		    {"estimators", json::object()},
		};
		for (auto e : which) {
			auto gv = gradient_variance(*ck->flow, *target, e, a.n_batches, a.batch_size, a.seed);
			report["estimators"][std::string(to_string(e))] = {{"variance", gv.variance}, {"std", gv.std}};
		}
		write_file_atomic(a.out, report.dump(1, '\t') + "\n");
		fmt::print("{}\n", report.dump(1, '\t'));
	}
	catch (const std::exception& e) {
		fmt::print(stderr, "error: {}\n", e.what());
		return exit_failure;
	}
	return exit_ok;
}

int cmd_toy(const ToyArgs& a)
{
	if (!(a.theta_min < a.theta_max)) {
		fmt::print(stderr, "invalid arguments: --theta-min must be below --theta-max\n");
		return exit_invalid;
	}
	try {
		fs::create_directories(a.out);
		const Estimator all[] = {Estimator::g1, Estimator::g2, Estimator::g3};

		for (auto e : all) {
			toy::TrainOptions o;
			o.steps = a.steps;
			o.batch_size = a.batch_size;
			o.lr = a.lr;
			o.theta0 = a.theta0;
			o.lambda = a.lambda;
			o.Z = a.Z;
			o.seed = a.seed;
			auto theta = toy::train(e, o);
			auto out = fmt::output_file((fs::path(a.out) / fmt::format("trajectory_{}.csv", to_string(e))).string());
			out.print("step,theta\n");
			for (std::size_t k = 0; k < theta.size(); ++k)
				out.print("{},{}\n", k + 1, theta[k]);
		}

		std::vector<double> grid(a.grid_points);
		for (std::size_t k = 0; k < a.grid_points; ++k)
			grid[k] = a.theta_min + (a.theta_max - a.theta_min) * static_cast<double>(k) /
			                            static_cast<double>(a.grid_points - 1);
		std::vector<std::vector<double>> stds;
		for (auto e : all)
			stds.push_back(toy::variance_sweep(e, grid, a.lambda, a.Z, a.batch_size, a.n_batches, a.seed));
		auto out = fmt::output_file((fs::path(a.out) / "variance.csv").string());
		out.print("theta,std_g1,std_g2,std_g3\n");
		for (std::size_t k = 0; k < grid.size(); ++k)
			out.print("{},{},{},{}\n", grid[k], stds[0][k], stds[1][k], stds[2][k]);
	}
	catch (const std::exception& e) {
		fmt::print(stderr, "error: {}\n", e.what());
		return exit_failure;
	}
	return exit_ok;
}
