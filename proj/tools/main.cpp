#include "commands.hpp"

#include <CLI11.hpp>

#include <cstdio>

int main(int argc, char** argv)
{
	CLI::App app{"Normalizing-flow training with three free-energy gradient estimators"};
	app.require_subcommand(1);

	TrainArgs train;
	auto* t = app.add_subcommand("train", "Train a flow from a config file or preset");
	auto* t_config = t->add_option("--config", train.config, "JSON run configuration")->check(CLI::ExistingFile);
	auto* t_preset = t->add_option("--preset", train.preset, "Named configuration")
	                     ->check(CLI::IsMember({"toy", "phi4-desk", "phi4-paper"}));
	t_config->excludes(t_preset);
	t->add_option("--seed", train.seed, "Override training.seed");
	t->add_option("--estimator", train.estimator, "Override training.estimator (g1, g2, g3)");
	t->add_option("--epochs", train.epochs, "Override training.epochs");
	t->add_option("--out", train.out, "Override output.dir");
	t->add_flag("--resume", train.resume, "Continue from the latest checkpoint in the output directory");

	SampleArgs sample;
	auto* s = app.add_subcommand("sample", "Run a neural MCMC chain from a checkpoint");
	s->add_option("--checkpoint", sample.checkpoint, "Checkpoint file")->required();
	s->add_option("--seed", sample.seed, "Chain seed");
	s->add_option("--out", sample.out, "Output directory for chain.jsonl and summary.json");
	s->add_option("--chain-length", sample.chain_length, "Number of accept/reject steps")
	    ->check(CLI::PositiveNumber);
	s->add_option("--n-eval", sample.n_eval, "Independent samples for F_q, ESS and signal std")
	    ->check(CLI::Range(std::size_t{2}, std::size_t{1} << 40));
	s->add_option("--observable", sample.observable, "Series for tau")
	    ->check(CLI::IsMember({"signal", "magnetization", "phi2"}));
	s->add_option("--window-c", sample.window_c, "Automatic windowing constant")->check(CLI::PositiveNumber);

	VarianceArgs variance;
	auto* v = app.add_subcommand("variance", "Gradient-estimator variance at a frozen checkpoint");
	v->add_option("--checkpoint", variance.checkpoint, "Checkpoint file")->required();
	v->add_option("--estimator", variance.estimators, "g1, g2 or g3; repeatable (default: all three)");
	v->add_option("--n-batches", variance.n_batches, "Independent batches");
	v->add_option("--batch-size", variance.batch_size, "Samples per batch");
	v->add_option("--seed", variance.seed, "Seed of the batch streams");
	v->add_option("--out", variance.out, "JSON report path");

	ToyArgs toy;
	auto* y = app.add_subcommand("toy", "Exponential toy model: training trajectories and variance sweep");
	y->add_option("--out", toy.out, "Output directory");
	y->add_option("--seed", toy.seed, "Seed");
	y->add_option("--steps", toy.steps, "Adam steps")->check(CLI::PositiveNumber);
	y->add_option("--batch-size", toy.batch_size, "Samples per step")->check(CLI::Range(2, 1 << 30));
	y->add_option("--lr", toy.lr, "Learning rate")->check(CLI::PositiveNumber);
	y->add_option("--theta0", toy.theta0, "Initial theta")->check(CLI::PositiveNumber);
	y->add_option("--lambda", toy.lambda, "Target rate")->check(CLI::PositiveNumber);
	y->add_option("--Z", toy.Z, "Target normalization")->check(CLI::PositiveNumber);
	y->add_option("--n-batches", toy.n_batches, "Batches per variance point")->check(CLI::Range(2, 1 << 30));
	y->add_option("--grid-points", toy.grid_points, "Theta grid size")->check(CLI::Range(2, 100000));
	y->add_option("--theta-min", toy.theta_min, "Smallest theta of the grid")->check(CLI::PositiveNumber);
	y->add_option("--theta-max", toy.theta_max, "Largest theta of the grid")->check(CLI::PositiveNumber);

	try {
		app.parse(argc, argv);
	}
	catch (const CLI::CallForHelp& e) {
		return app.exit(e);
	}
	catch (const CLI::ParseError& e) {
		app.exit(e);
		return exit_invalid;
	}

	if (t->parsed()) {
		if (train.config.empty() && train.preset.empty()) {
			std::fprintf(stderr, "train: one of --config or --preset is required\n");
			return exit_invalid;
		}
		return cmd_train(train);
	}
	if (s->parsed())
		return cmd_sample(sample);
	if (v->parsed())
		return cmd_variance(variance);
	return cmd_toy(toy);
}
