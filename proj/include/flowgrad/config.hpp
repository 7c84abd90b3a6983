#pragma once

// Run configuration: JSON with strict validation. Every field is checked
// before any compute starts, and unknown keys are rejected.

#include "flowgrad/estimators.hpp"
#include "flowgrad/flow.hpp"
#include "flowgrad/physics.hpp"
#include "flowgrad/sampler.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

namespace flowgrad {

inline constexpr const char* code_version = "0.3.0";

/// Validation failure; field() is the dotted path, e.g. "training.lr".
class ConfigError : public std::runtime_error {
  public:
	ConfigError(std::string field, const std::string& message);
	const std::string& field() const { return field_; }

  private:
	std::string field_;
};

enum class TargetKind { phi4, toy, gaussian };

struct TargetConfig {
	TargetKind kind = TargetKind::phi4;
	Phi4Params phi4;         // phi4; gaussian uses phi4.L only
	double lambda = 1.0 / 3; // toy
	double Z = 3.0;          // toy
	double log_z = 0.0;      // gaussian

	std::size_t lattice() const { return phi4.L; }
};

struct ModelConfig {
	std::size_t layers = 16;
	std::size_t channels = 16;
	double init_scale = 0.1;
	double leaky_slope = 0.01;
	double theta0 = 1.0; // toy flow only
};

struct TrainingConfig {
	Estimator estimator = Estimator::g2;
	std::size_t epochs = 200;
	std::size_t steps_per_epoch = 100;
	std::size_t batch_size = 256;
	double lr = 1e-3;
	double beta1 = 0.9;
	double beta2 = 0.999;
	std::uint64_t seed = 0;
};

struct OutputConfig {
	std::filesystem::path dir = "runs/default";
	std::size_t checkpoint_every = 10;
};

struct SamplerConfig {
	std::size_t chain_length = 100000;
	double window_c = 6.0;
	std::string observable = "signal";
};

struct RunConfig {
	TargetConfig target;
	ModelConfig model;
	TrainingConfig training;
	OutputConfig output;
	SamplerConfig sampler;

	void validate() const;
};

/// Throws ConfigError naming the first offending field.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);
nlohmann::json to_json(const TargetConfig& target);
TargetConfig parse_target(const nlohmann::json& doc, const std::string& where = "target");

/// "toy", "phi4-desk" or "phi4-paper".
RunConfig preset(std::string_view name);

/// Hex SHA-256 of the canonical JSON serialization.
std::string config_hash(const RunConfig& config);

/// Set for configurations too large to finish on a desk machine.
struct RuntimeEstimate {
	std::size_t total_steps = 0;
	double reference_hours_low = 0.0;  // at the reference 0.15 s/step
	double reference_hours_high = 0.0; // at the reference 0.17 s/step
	bool full_scale = false;
	std::string message;
};
RuntimeEstimate runtime_estimate(const RunConfig& config);

std::unique_ptr<Target> make_target(const TargetConfig& target);
std::unique_ptr<Flow> make_flow(const RunConfig& config, Rng& init_rng);
CouplingFlowConfig coupling_config(const RunConfig& config);

} // namespace flowgrad
