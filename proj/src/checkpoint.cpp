#include "flowgrad/checkpoint.hpp"
#include "flowgrad/toymodel.hpp"

#include <fmt/format.h>
#include <sodium.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace flowgrad {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {

void ensure_sodium()
{
	if (sodium_init() < 0)
		throw std::runtime_error("libsodium initialization failed");
}

json tensor_to_json(const std::string& name, const Tensor& t)
{
	return {{"name", name}, {"shape", t.shape()}, {"data", encode_f64(t.data())}};
}

Tensor tensor_from_json(const json& doc, const std::string& where)
{
	if (!doc.is_object() || !doc.contains("shape") || !doc.contains("data"))
		throw CheckpointError(fmt::format("checkpoint: malformed tensor entry at {}", where));
	auto shape = doc.at("shape").get<Shape>();
	auto data = decode_f64(doc.at("data").get<std::string>(), numel(shape));
	return Tensor(std::move(shape), std::move(data));
}

json tensors_to_json(const std::vector<Tensor>& ts)
{
	json out = json::array();
	for (std::size_t k = 0; k < ts.size(); ++k)
		out.push_back(tensor_to_json(std::to_string(k), ts[k]));
	return out;
}

std::vector<Tensor> tensors_from_json(const json& doc, const std::string& where)
{
	std::vector<Tensor> out;
	for (std::size_t k = 0; k < doc.size(); ++k)
		out.push_back(tensor_from_json(doc[k], fmt::format("{}[{}]", where, k)));
	return out;
}

} // namespace

std::string encode_f64(std::span<const double> values)
{
	ensure_sodium();
	const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
	const std::size_t n = values.size_bytes();
	std::string out(sodium_base64_encoded_len(n, sodium_base64_VARIANT_ORIGINAL), '\0');
	sodium_bin2base64(out.data(), out.size(), bytes, n, sodium_base64_VARIANT_ORIGINAL);
	out.pop_back(); // trailing NUL
	return out;
}

std::vector<double> decode_f64(const std::string& text, std::size_t expected_count)
{
	ensure_sodium();
	std::vector<double> out(expected_count);
	std::size_t written = 0;
	const char* end = nullptr;
	const int rc = sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), expected_count * sizeof(double),
	                                 text.data(), text.size(), nullptr, &written, &end,
	                                 sodium_base64_VARIANT_ORIGINAL);
	if (rc != 0 || end != text.data() + text.size() || written != expected_count * sizeof(double))
		throw CheckpointError(
		    fmt::format("checkpoint: base64 block does not decode to {} f64 values", expected_count));
	return out;
}

json flow_to_json(Flow& flow)
{
	json doc;
	doc["kind"] = flow.kind();
	if (auto* cf = dynamic_cast<CouplingFlow*>(&flow)) {
		const auto& c = cf->config();
		doc["L"] = c.L;
		doc["layers"] = c.layers;
		doc["hidden_channels"] = c.hidden_channels;
		doc["leaky_slope"] = c.leaky_slope;
		doc["init_scale"] = c.init_scale;
		doc["parity"] = "layer0_even_frozen";
		doc["prior"] = "standard_normal";
	}
	else if (dynamic_cast<toy::ToyFlow*>(&flow)) {
		doc["prior"] = "uniform_unit";
	}
	else {
		throw CheckpointError(fmt::format("checkpoint: cannot serialize flow kind '{}'", flow.kind()));
	}
	json params = json::array();
	for (auto* p : flow.parameters())
		params.push_back(tensor_to_json(p->name(), p->value));
	doc["parameters"] = std::move(params);
	return doc;
}

std::unique_ptr<Flow> flow_from_json(const json& doc)
{
	const std::string kind = doc.at("kind").get<std::string>();
	std::unique_ptr<Flow> flow;
	if (kind == "coupling") {
		if (doc.value("parity", "") != "layer0_even_frozen")
			throw CheckpointError("checkpoint: unsupported parity convention");
		CouplingFlowConfig c;
		c.L = doc.at("L").get<std::size_t>();
		c.layers = doc.at("layers").get<std::size_t>();
		c.hidden_channels = doc.at("hidden_channels").get<std::size_t>();
		c.leaky_slope = doc.at("leaky_slope").get<double>();
		c.init_scale = doc.at("init_scale").get<double>();
		Rng scratch = make_rng(0);
		flow = std::make_unique<CouplingFlow>(c, scratch);
	}
	else if (kind == "toy") {
		flow = std::make_unique<toy::ToyFlow>(1.0);
	}
	else {
		throw CheckpointError(fmt::format("checkpoint: unknown flow kind '{}'", kind));
	}

	const json& stored = doc.at("parameters");
	auto params = flow->parameters();
	if (!stored.is_array() || stored.size() != params.size())
		throw CheckpointError(fmt::format("checkpoint: expected {} parameter blocks, found {}", params.size(),
		                                  stored.is_array() ? stored.size() : 0));
	for (std::size_t k = 0; k < params.size(); ++k) {
		const std::string name = stored[k].at("name").get<std::string>();
		if (name != params[k]->name())
			throw CheckpointError(
			    fmt::format("checkpoint: parameter {} is '{}', expected '{}'", k, name, params[k]->name()));
		Tensor t = tensor_from_json(stored[k], name);
		if (t.shape() != params[k]->value.shape())
			throw CheckpointError(fmt::format("checkpoint: parameter '{}' has shape {}, expected {}", name,
			                                  to_string(t.shape()), to_string(params[k]->value.shape())));
		params[k]->value = std::move(t);
	}
	return flow;
}

json checkpoint_to_json(Flow& flow, const TargetConfig& target, const TrainingState* training)
{
	json doc;
	doc["format"] = checkpoint_format;
	doc["format_version"] = checkpoint_format_version;
	doc["flow"] = flow_to_json(flow);
	doc["target"] = to_json(target);
	if (training) {
		doc["training"] = {
		    {"epoch", training->epoch},
		    {"adam_steps", training->adam_steps},
		    {"adam_m", tensors_to_json(training->adam_m)},
		    {"adam_v", tensors_to_json(training->adam_v)},
		    {"rng", training->rng},
		    {"best_f_q", encode_f64(std::span(&training->best_f_q, 1))},
		    {"best_epoch", training->best_epoch},
		    {"wall_s", training->wall_s},
		};
	}
	return doc;
}

Checkpoint checkpoint_from_json(const json& doc)
{
	if (!doc.is_object() || doc.value("format", "") != checkpoint_format)
		throw CheckpointError(fmt::format("checkpoint: not a {} document (format version {} expected)",
		                                  checkpoint_format, checkpoint_format_version));
	const json& version = doc.contains("format_version") ? doc.at("format_version") : json();
	if (!version.is_number_integer() || version.get<int>() != checkpoint_format_version)
		throw CheckpointError(fmt::format("checkpoint: format_version {} is not supported (expected {})",
		                                  version.dump(), checkpoint_format_version));
	Checkpoint out;
	try {
		out.flow = flow_from_json(doc.at("flow"));
		out.target = parse_target(doc.at("target"));
		if (doc.contains("training")) {
			const json& t = doc.at("training");
			TrainingState s;
			s.epoch = t.at("epoch").get<std::size_t>();
			s.adam_steps = t.at("adam_steps").get<std::size_t>();
			s.adam_m = tensors_from_json(t.at("adam_m"), "training.adam_m");
			s.adam_v = tensors_from_json(t.at("adam_v"), "training.adam_v");
			s.rng = t.at("rng").get<std::string>();
			s.best_f_q = decode_f64(t.at("best_f_q").get<std::string>(), 1)[0];
			s.best_epoch = t.at("best_epoch").get<std::size_t>();
			s.wall_s = t.at("wall_s").get<double>();
			out.training = std::move(s);
		}
	}
	catch (const json::exception& e) {
		throw CheckpointError(fmt::format("checkpoint (format {} version {}): {}", checkpoint_format,
		                                  checkpoint_format_version, e.what()));
	}
	catch (const ConfigError& e) {
		throw CheckpointError(fmt::format("checkpoint: bad target block: {}", e.what()));
	}
	return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content)
{
	if (path.has_parent_path())
		std::filesystem::create_directories(path.parent_path());
	auto tmp = path;
	tmp += ".tmp";
	{
		std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
		if (!out)
			throw std::runtime_error(fmt::format("cannot open '{}' for writing", tmp.string()));
		out << content;
		out.flush();
		if (!out)
			throw std::runtime_error(fmt::format("write to '{}' failed", tmp.string()));
	}
	std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, Flow& flow, const TargetConfig& target,
                     const TrainingState* training)
{
	write_file_atomic(path, checkpoint_to_json(flow, target, training).dump(1, '\t') + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw CheckpointError(fmt::format("cannot read checkpoint '{}'", path.string()));
	std::stringstream buf;
	buf << in.rdbuf();
	json doc;
	try {
		doc = json::parse(buf.str());
	}
	catch (const json::parse_error& e) {
		throw CheckpointError(fmt::format("checkpoint '{}' is corrupt (expected {} format version {}): {}",
		                                  path.string(), checkpoint_format, checkpoint_format_version, e.what()));
	}
	try {
		return checkpoint_from_json(doc);
	}
	catch (const CheckpointError& e) {
		throw CheckpointError(fmt::format("'{}' (reader expects {} format version {}): {}", path.string(),
		                                  checkpoint_format, checkpoint_format_version, e.what()));
	}
}

} // namespace flowgrad
