#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

// Exit codes shared by all subcommands.
enum ExitCode : int {
	exit_ok = 0,
	exit_failure = 1,
	exit_invalid = 2,    // bad config, flags or arguments
	exit_checkpoint = 3, // unreadable or incompatible checkpoint
};

struct TrainArgs {
	std::string config;
	std::string preset;
	std::optional<std::uint64_t> seed;
	std::optional<std::string> estimator;
	std::optional<std::size_t> epochs;
	std::string out;
	bool resume = false;
};

struct SampleArgs {
	std::string checkpoint;
	std::uint64_t seed = 0;
	std::string out = "sample";
	std::size_t chain_length = 100000;
	std::size_t n_eval = 100000;
	std::string observable = "signal";
	double window_c = 6.0;
};

struct VarianceArgs {
	std::string checkpoint;
	std::vector<std::string> estimators;
	std::size_t n_batches = 1000;
	std::size_t batch_size = 1024;
	std::uint64_t seed = 0;
	std::string out = "variance.json";
};

struct ToyArgs {
	std::string out = "toy";
	std::uint64_t seed = 0;
	std::size_t steps = 500;
	std::size_t batch_size = 100;
	double lr = 0.01;
	double theta0 = 1.0;
	double lambda = 1.0 / 3.0;
	double Z = 3.0;
	std::size_t n_batches = 1000;
	std::size_t grid_points = 16;
	double theta_min = 0.25;
	double theta_max = 1.0;
};

int cmd_train(const TrainArgs& args);
int cmd_sample(const SampleArgs& args);
int cmd_variance(const VarianceArgs& args);
int cmd_toy(const ToyArgs& args);
