#include "flowgrad/run.hpp"
#include "flowgrad/sampler.hpp"
#include "flowgrad/toymodel.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace flowgrad {

using nlohmann::json;
namespace fs = std::filesystem;

json to_json(const EpochRecord& r)
{
	return {{"epoch", r.epoch}, {"f_q", r.f_q},     {"ess", r.ess},
	        {"wall_s", r.wall_s}, {"estimator", r.estimator}, {"seed", r.seed}};
}

EpochRecord epoch_record_from_json(const json& doc)
{
	EpochRecord r;
	r.epoch = doc.at("epoch").get<std::size_t>();
	r.f_q = doc.at("f_q").get<double>();
	r.ess = doc.at("ess").get<double>();
	r.wall_s = doc.at("wall_s").get<double>();
	r.estimator = doc.at("estimator").get<std::string>();
	r.seed = doc.at("seed").get<std::uint64_t>();
	return r;
}

std::vector<EpochRecord> read_metrics(const fs::path& file)
{
	std::ifstream in(file);
	if (!in)
		throw std::runtime_error(fmt::format("cannot read metrics file '{}'", file.string()));
	std::vector<EpochRecord> out;
	std::string line;
	while (std::getline(in, line))
		if (!line.empty())
			out.push_back(epoch_record_from_json(json::parse(line)));
	return out;
}

double evaluate_free_energy(Flow& flow, const Target& target, std::size_t n, std::uint64_t seed)
{
	Rng rng = make_rng(seed, 7);
	auto draws = draw_from_flow(flow, target, n, rng);
	double acc = 0.0;
	for (std::size_t i = 0; i < n; ++i)
		acc += draws.log_q[i] - draws.log_p[i];
	return acc / static_cast<double>(n);
}

namespace {

std::string utc_now()
{
	return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}",
	                   std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()));
}

std::string read_text(const fs::path& path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw std::runtime_error(fmt::format("cannot read '{}'", path.string()));
	std::stringstream buf;
	buf << in.rdbuf();
	return buf.str();
}

void rewrite_lines(const fs::path& path, const std::vector<std::string>& lines)
{
	std::string text;
	for (const auto& l : lines)
		text += l + "\n";
	write_file_atomic(path, text);
}

std::vector<std::string> head_lines(const fs::path& path, std::size_t n)
{
	std::vector<std::string> out;
	std::ifstream in(path);
	std::string line;
	while (out.size() < n && std::getline(in, line))
		out.push_back(line);
	if (out.size() < n)
		throw std::runtime_error(fmt::format("'{}' has fewer than {} lines; cannot resume", path.string(), n));
	return out;
}

void append_line(const fs::path& path, const std::string& line)
{
	std::ofstream out(path, std::ios::app);
	out << line << '\n';
	if (!out)
		throw std::runtime_error(fmt::format("write to '{}' failed", path.string()));
}

} // namespace

RunResult train_run(const RunConfig& config, const RunOptions& options)
{
	config.validate();
	const auto& tc = config.training;
	const fs::path dir = config.output.dir;
	fs::create_directories(dir / "checkpoints");
	const fs::path manifest_path = dir / "manifest.json";
	const fs::path metrics_path = dir / "metrics.jsonl";
	const fs::path theta_path = dir / "theta.csv";
	const bool toy_run = config.target.kind == TargetKind::toy;
	const std::string hash = config_hash(config);

	std::shared_ptr<const Target> target = options.target;
	if (!target)
		target = make_target(config.target);
	Rng init_rng = make_rng(tc.seed, 0);
	auto flow = make_flow(config, init_rng);
	auto params = flow->parameters();
	Adam adam(params, AdamOptions{tc.lr, tc.beta1, tc.beta2, 1e-8});
	Rng rng = make_rng(tc.seed, 1);

	TrainingState state;
	RunResult result;
	result.dir = dir;
	json manifest;

	if (options.resume) {
		manifest = json::parse(read_text(manifest_path));
		if (manifest.at("config_hash").get<std::string>() != hash)
			throw std::runtime_error("resume: configuration differs from the one recorded in the manifest");
		const fs::path latest = manifest.at("artifacts").at("latest_checkpoint").get<std::string>();
		auto ck = load_checkpoint(latest);
		if (!ck.training)
			throw std::runtime_error(fmt::format("resume: '{}' has no training state", latest.string()));
		auto stored = ck.flow->parameters();
		for (std::size_t k = 0; k < params.size(); ++k)
			params[k]->value = stored[k]->value;
		state = *ck.training;
		adam.restore(state.adam_steps, state.adam_m, state.adam_v);
		rng = deserialize_rng(state.rng);

		rewrite_lines(metrics_path, head_lines(metrics_path, state.epoch));
		result.records = read_metrics(metrics_path);
		if (toy_run)
			rewrite_lines(theta_path, head_lines(theta_path, 1 + state.epoch * tc.steps_per_epoch));
		manifest["status"] = "running";
		manifest["resumed_at"].push_back(utc_now());
	}
	else {
		for (const auto& p : {metrics_path, theta_path, dir / "best.json", dir / "final.json"})
			fs::remove(p);
		std::ofstream(metrics_path, std::ios::trunc);
		if (toy_run)
			rewrite_lines(theta_path, {"step,theta"});
		manifest = {
		    {"format", "flowgrad-manifest"},
		    {"format_version", 1},
		    {"code_version", code_version},
		    {"config_hash", hash},
		    {"config", to_json(config)},
		    {"started_at", utc_now()},
		    {"finished_at", nullptr},
		    {"status", "running"},
		    {"resumed_at", json::array()},
		    {"artifacts",
		     {{"metrics", metrics_path.string()},
		      {"checkpoints", json::array()},
		      {"latest_checkpoint", nullptr},
		      {"best", nullptr},
		      {"final", nullptr},
		      {"theta", toy_run ? json(theta_path.string()) : json(nullptr)}}},
		};
		auto est = runtime_estimate(config);
		if (est.full_scale)
			manifest["runtime_estimate"] = {{"total_steps", est.total_steps},
			                                {"reference_hours", {est.reference_hours_low, est.reference_hours_high}},
			                                {"note", est.message}};
	}
	auto write_manifest = [&] { write_file_atomic(manifest_path, manifest.dump(1, '\t') + "\n"); };
	write_manifest();

	const auto clock_start = std::chrono::steady_clock::now();
	const double wall_offset = state.wall_s;
	auto wall = [&] {
		return wall_offset +
		       std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
	};
	auto snapshot = [&] {
		state.adam_steps = adam.step_count();
		state.adam_m = adam.first_moments();
		state.adam_v = adam.second_moments();
		state.rng = serialize_rng(rng);
		state.wall_s = wall();
		return state;
	};

	const std::size_t best_from = tc.epochs > 10 ? tc.epochs - 9 : 1;
	std::size_t epoch = state.epoch;
	while (epoch < tc.epochs && !(options.stop_after && epoch >= *options.stop_after)) {
		++epoch;
		double sum_f = 0.0, sum_ess = 0.0;
		std::vector<std::string> theta_rows;
		for (std::size_t step = 0; step < tc.steps_per_epoch; ++step) {
			StepMetrics m;
			try {
				m = train_step(*flow, *target, tc.estimator, tc.batch_size, adam, rng);
			}
			catch (const NonFiniteLoss& e) {
				const fs::path dump = dir / "nonfinite_batch.json";
				json doc = {{"epoch", epoch},
				            {"step", step + 1},
				            {"loss", std::isnan(e.loss()) ? "nan" : (e.loss() > 0 ? "inf" : "-inf")},
				            {"phi", {{"shape", e.batch().shape()}, {"data", encode_f64(e.batch().data())}}}};
				write_file_atomic(dump, doc.dump(1, '\t') + "\n");
				manifest["status"] = "failed";
				manifest["finished_at"] = utc_now();
				manifest["artifacts"]["nonfinite_batch"] = dump.string();
				write_manifest();
				throw std::runtime_error(fmt::format("epoch {} step {}: {}; batch saved to '{}'", epoch, step + 1,
				                                     e.what(), dump.string()));
			}
			sum_f += m.free_energy;
			sum_ess += m.ess;
			if (toy_run)
				theta_rows.push_back(
				    fmt::format("{},{}", (epoch - 1) * tc.steps_per_epoch + step + 1,
				                static_cast<const toy::ToyFlow&>(*flow).theta()));
		}
		const double n = static_cast<double>(tc.steps_per_epoch);
		EpochRecord rec{epoch, sum_f / n, sum_ess / n, wall(), std::string(to_string(tc.estimator)), tc.seed};
		append_line(metrics_path, to_json(rec).dump());
		for (const auto& row : theta_rows)
			append_line(theta_path, row);
		result.records.push_back(rec);
		state.epoch = epoch;

		if (epoch >= best_from && (state.best_epoch < best_from || rec.f_q < state.best_f_q)) {
			state.best_f_q = rec.f_q;
			state.best_epoch = epoch;
			save_checkpoint(dir / "best.json", *flow, config.target);
			manifest["artifacts"]["best"] = (dir / "best.json").string();
			manifest["best"] = {{"epoch", epoch}, {"f_q", rec.f_q}};
		}

		const bool stopping = epoch == tc.epochs || (options.stop_after && epoch >= *options.stop_after);
		if (epoch % config.output.checkpoint_every == 0 || stopping) {
			const fs::path ck = dir / "checkpoints" / fmt::format("epoch_{:04d}.json", epoch);
			auto s = snapshot();
			save_checkpoint(ck, *flow, config.target, &s);
			auto& list = manifest["artifacts"]["checkpoints"];
			if (std::find(list.begin(), list.end(), json(ck.string())) == list.end())
				list.push_back(ck.string());
			manifest["artifacts"]["latest_checkpoint"] = ck.string();
			write_manifest();
		}
		if (options.on_epoch)
			options.on_epoch(rec);
	}

	if (epoch == tc.epochs) {
		auto s = snapshot();
		save_checkpoint(dir / "final.json", *flow, config.target, &s);
		manifest["artifacts"]["final"] = (dir / "final.json").string();
		manifest["status"] = "completed";
		manifest["finished_at"] = utc_now();
		result.completed = true;
	}
	else {
		manifest["status"] = "stopped";
	}
	write_manifest();
	return result;
}

} // namespace flowgrad
