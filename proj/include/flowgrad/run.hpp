#pragma once

#include "flowgrad/checkpoint.hpp"
#include "flowgrad/config.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace flowgrad {

/// One line of metrics.jsonl. f_q and ess are averages over the epoch's steps.
struct EpochRecord {
	std::size_t epoch = 0; // 1-based
	double f_q = 0.0;
	double ess = 0.0;
	double wall_s = 0.0;
	std::string estimator;
	std::uint64_t seed = 0;
};

nlohmann::json to_json(const EpochRecord& r);
EpochRecord epoch_record_from_json(const nlohmann::json& doc);

struct RunOptions {
	bool resume = false;
	/// Stop cleanly after this many completed epochs (total, not additional).
	std::optional<std::size_t> stop_after;
	std::function<void(const EpochRecord&)> on_epoch;
	/// Used instead of the target described by config.target when set.
	std::shared_ptr<const Target> target;
};

struct RunResult {
	std::filesystem::path dir;
	std::vector<EpochRecord> records; // all epochs so far, including resumed ones
	bool completed = false;
};

/// Trains according to `config`, writing into config.output.dir:
///   manifest.json, metrics.jsonl, checkpoints/epoch_NNNN.json, best.json,
///   final.json and, for the toy target, theta.csv.
/// best.json is the lowest-F_q model among the last 10 epochs of the run.
/// A non-finite loss aborts the run after writing nonfinite_batch.json.
RunResult train_run(const RunConfig& config, const RunOptions& options = {});

std::vector<EpochRecord> read_metrics(const std::filesystem::path& file);

/// Mean F_q = mean(log q - log P) over `n` fresh samples from make_rng(seed, stream 7).
double evaluate_free_energy(Flow& flow, const Target& target, std::size_t n, std::uint64_t seed);

} // namespace flowgrad
