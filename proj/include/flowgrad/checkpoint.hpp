#pragma once

// Checkpoints are JSON documents. Parameter arrays are stored as base64 of
// their little-endian f64 bytes so that save/load is bit exact.

#include "flowgrad/config.hpp"
#include "flowgrad/flow.hpp"
#include "flowgrad/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

namespace flowgrad {

inline constexpr const char* checkpoint_format = "flowgrad-checkpoint";
inline constexpr int checkpoint_format_version = 1;

class CheckpointError : public std::runtime_error {
  public:
	using std::runtime_error::runtime_error;
};

std::string encode_f64(std::span<const double> values);
std::vector<double> decode_f64(const std::string& text, std::size_t expected_count);

/// Optimizer and bookkeeping needed to resume training at an epoch boundary.
struct TrainingState {
	std::size_t epoch = 0; // completed epochs
	std::size_t adam_steps = 0;
	std::vector<Tensor> adam_m;
	std::vector<Tensor> adam_v;
	std::string rng;
	double best_f_q = 0.0;
	std::size_t best_epoch = 0; // 0 when none yet
	double wall_s = 0.0;
};

struct Checkpoint {
	std::unique_ptr<Flow> flow;
	TargetConfig target;
	std::optional<TrainingState> training;
};

nlohmann::json flow_to_json(Flow& flow);
std::unique_ptr<Flow> flow_from_json(const nlohmann::json& doc);

nlohmann::json checkpoint_to_json(Flow& flow, const TargetConfig& target, const TrainingState* training = nullptr);
Checkpoint checkpoint_from_json(const nlohmann::json& doc);

/// Writes to a temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, Flow& flow, const TargetConfig& target,
                     const TrainingState* training = nullptr);

/// Throws CheckpointError with a diagnostic naming the format and version
/// found when the file is corrupt or of another version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Atomic text write (temporary file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

} // namespace flowgrad
