#include "flowgrad/config.hpp"
#include "flowgrad/toymodel.hpp"

#include <fmt/format.h>
#include <sodium.h>

#include <cmath>
#include <fstream>
#include <set>

namespace flowgrad {

using nlohmann::json;

ConfigError::ConfigError(std::string field, const std::string& message)
    : std::runtime_error(field.empty() ? message : fmt::format("{}: {}", field, message)), field_(std::move(field))
{
}

namespace {

std::string join(const std::string& where, const std::string& key) { return where.empty() ? key : where + "." + key; }

// Reads fields out of one JSON object and rejects whatever is left over.
class Section {
  public:
	Section(const json& doc, std::string where) : doc_(doc), where_(std::move(where))
	{
		if (!doc_.is_object())
			throw ConfigError(where_, "expected an object");
	}

	bool has(const std::string& key) const { return doc_.contains(key); }

	const json& raw(const std::string& key)
	{
		seen_.insert(key);
		return doc_.at(key);
	}

	double number(const std::string& key, double fallback)
	{
		if (!has(key))
			return fallback;
		const json& v = raw(key);
		if (!v.is_number())
			throw ConfigError(join(where_, key), "expected a number");
		return v.get<double>();
	}

	std::uint64_t integer(const std::string& key, std::uint64_t fallback)
	{
		if (!has(key))
			return fallback;
		const json& v = raw(key);
		if (v.is_number_unsigned())
			return v.get<std::uint64_t>();
		if (v.is_number_integer()) {
			if (v.get<std::int64_t>() < 0)
				throw ConfigError(join(where_, key), "must be non-negative");
			return static_cast<std::uint64_t>(v.get<std::int64_t>());
		}
		throw ConfigError(join(where_, key), "expected an integer");
	}

	std::string string(const std::string& key, const std::string& fallback)
	{
		if (!has(key))
			return fallback;
		const json& v = raw(key);
		if (!v.is_string())
			throw ConfigError(join(where_, key), "expected a string");
		return v.get<std::string>();
	}

	Section child(const std::string& key)
	{
		return Section(raw(key), join(where_, key));
	}

	std::string path(const std::string& key) const { return join(where_, key); }

	void finish() const
	{
		for (const auto& [key, value] : doc_.items())
			if (!seen_.contains(key))
				throw ConfigError(join(where_, key), "unknown key");
	}

  private:
	const json& doc_;
	std::string where_;
	std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& message)
{
	if (!ok)
		throw ConfigError(field, message);
}

} // namespace

TargetConfig parse_target(const json& doc, const std::string& where)
{
	Section sec(doc, where);
	TargetConfig t;
	int kinds = 0;
	if (sec.has("phi4")) {
		++kinds;
		t.kind = TargetKind::phi4;
		auto p = sec.child("phi4");
		t.phi4.L = p.integer("L", t.phi4.L);
		t.phi4.m2 = p.number("m2", t.phi4.m2);
		t.phi4.lambda = p.number("lambda", t.phi4.lambda);
		p.finish();
	}
	if (sec.has("toy")) {
		++kinds;
		t.kind = TargetKind::toy;
		auto p = sec.child("toy");
		t.lambda = p.number("lambda", t.lambda);
		t.Z = p.number("Z", t.Z);
		p.finish();
	}
	if (sec.has("gaussian")) {
		++kinds;
		t.kind = TargetKind::gaussian;
		auto p = sec.child("gaussian");
		t.phi4.L = p.integer("L", t.phi4.L);
		t.log_z = p.number("log_z", t.log_z);
		p.finish();
	}
	sec.finish();
	require(kinds == 1, where, "exactly one of phi4, toy or gaussian is required");
	return t;
}

RunConfig parse_config(const json& doc)
{
	Section root(doc, "");
	RunConfig c;

	require(root.has("target"), "target", "required");
	c.target = parse_target(root.raw("target"), "target");

	if (root.has("model")) {
		auto m = root.child("model");
		c.model.layers = m.integer("layers", c.model.layers);
		c.model.channels = m.integer("channels", c.model.channels);
		c.model.init_scale = m.number("init_scale", c.model.init_scale);
		c.model.leaky_slope = m.number("leaky_slope", c.model.leaky_slope);
		c.model.theta0 = m.number("theta0", c.model.theta0);
		m.finish();
	}

	require(root.has("training"), "training", "required");
	{
		auto t = root.child("training");
		if (!t.has("estimator"))
			throw ConfigError("training.estimator", "training.estimator required");
		const std::string key = t.string("estimator", "");
		try {
			c.training.estimator = parse_estimator(key);
		}
		catch (const std::invalid_argument&) {
			throw ConfigError("training.estimator", fmt::format("unknown estimator '{}' (expected g1, g2 or g3)", key));
		}
		c.training.epochs = t.integer("epochs", c.training.epochs);
		c.training.steps_per_epoch = t.integer("steps_per_epoch", c.training.steps_per_epoch);
		c.training.batch_size = t.integer("batch_size", c.training.batch_size);
		c.training.lr = t.number("lr", c.training.lr);
		c.training.seed = t.integer("seed", c.training.seed);
		if (t.has("betas")) {
			const json& b = t.raw("betas");
			require(b.is_array() && b.size() == 2 && b[0].is_number() && b[1].is_number(), "training.betas",
			        "expected [beta1, beta2]");
			c.training.beta1 = b[0].get<double>();
			c.training.beta2 = b[1].get<double>();
		}
		t.finish();
	}

	if (root.has("output")) {
		auto o = root.child("output");
		c.output.dir = o.string("dir", c.output.dir.string());
		c.output.checkpoint_every = o.integer("checkpoint_every", c.output.checkpoint_every);
		o.finish();
	}

	if (root.has("sampler")) {
		auto s = root.child("sampler");
		c.sampler.chain_length = s.integer("chain_length", c.sampler.chain_length);
		c.sampler.window_c = s.number("window_c", c.sampler.window_c);
		c.sampler.observable = s.string("observable", c.sampler.observable);
		s.finish();
	}

	root.finish();
	c.validate();
	return c;
}

void RunConfig::validate() const
{
	switch (target.kind) {
	case TargetKind::phi4:
		require(target.phi4.L >= 3, "target.phi4.L", "must be at least 3");
		require(std::isfinite(target.phi4.m2), "target.phi4.m2", "must be finite");
		require(target.phi4.lambda >= 0.0 && std::isfinite(target.phi4.lambda), "target.phi4.lambda",
		        "must be finite and non-negative");
		break;
	case TargetKind::gaussian:
		require(target.phi4.L >= 3, "target.gaussian.L", "must be at least 3");
		require(std::isfinite(target.log_z), "target.gaussian.log_z", "must be finite");
		break;
	case TargetKind::toy:
		require(target.lambda > 0.0 && std::isfinite(target.lambda), "target.toy.lambda", "must be positive");
		require(target.Z > 0.0 && std::isfinite(target.Z), "target.toy.Z", "must be positive");
		break;
	}
	if (target.kind == TargetKind::toy) {
		require(model.theta0 > 0.0 && std::isfinite(model.theta0), "model.theta0", "must be positive");
	}
	else {
		require(model.layers >= 1, "model.layers", "must be at least 1");
		require(model.channels >= 1, "model.channels", "must be at least 1");
		require(model.init_scale >= 0.0 && std::isfinite(model.init_scale), "model.init_scale",
		        "must be finite and non-negative");
		require(model.leaky_slope >= 0.0 && model.leaky_slope < 1.0, "model.leaky_slope", "must lie in [0, 1)");
	}
	require(training.epochs >= 1, "training.epochs", "must be at least 1");
	require(training.steps_per_epoch >= 1, "training.steps_per_epoch", "must be at least 1");
	require(training.batch_size >= 1, "training.batch_size", "must be at least 1");
	require(training.estimator != Estimator::g2 || training.batch_size >= 2, "training.batch_size",
	        "g2 needs at least 2 samples per batch");
	require(training.lr > 0.0 && std::isfinite(training.lr), "training.lr", "must be positive");
	require(training.beta1 >= 0.0 && training.beta1 < 1.0, "training.betas", "beta1 must lie in [0, 1)");
	require(training.beta2 >= 0.0 && training.beta2 < 1.0, "training.betas", "beta2 must lie in [0, 1)");
	require(!output.dir.empty(), "output.dir", "must not be empty");
	require(output.checkpoint_every >= 1, "output.checkpoint_every", "must be at least 1");
	require(sampler.chain_length >= 1, "sampler.chain_length", "must be at least 1");
	require(sampler.window_c > 0.0, "sampler.window_c", "must be positive");
	require(sampler.observable == "signal" || sampler.observable == "magnetization" || sampler.observable == "phi2",
	        "sampler.observable", "expected 'signal', 'magnetization' or 'phi2'");
}

RunConfig load_config(const std::filesystem::path& path)
{
	std::ifstream in(path);
	if (!in)
		throw ConfigError("", fmt::format("cannot read config file '{}'", path.string()));
	json doc;
	try {
		doc = json::parse(in);
	}
	catch (const json::parse_error& e) {
		throw ConfigError("", fmt::format("config '{}' is not valid JSON: {}", path.string(), e.what()));
	}
	return parse_config(doc);
}

json to_json(const TargetConfig& t)
{
	switch (t.kind) {
	case TargetKind::phi4:
		return {{"phi4", {{"L", t.phi4.L}, {"m2", t.phi4.m2}, {"lambda", t.phi4.lambda}}}};
	case TargetKind::toy:
		return {{"toy", {{"lambda", t.lambda}, {"Z", t.Z}}}};
	case TargetKind::gaussian:
		return {{"gaussian", {{"L", t.phi4.L}, {"log_z", t.log_z}}}};
	}
	return {};
}

json to_json(const RunConfig& c)
{
	json model;
	if (c.target.kind == TargetKind::toy)
		model = {{"theta0", c.model.theta0}};
	else
		model = {{"layers", c.model.layers},
		         {"channels", c.model.channels},
		         {"init_scale", c.model.init_scale},
		         {"leaky_slope", c.model.leaky_slope}};
	return {
	    {"target", to_json(c.target)},
	    {"model", model},
	    {"training",
	     {{"estimator", std::string(to_string(c.training.estimator))},
	      {"epochs", c.training.epochs},
	      {"steps_per_epoch", c.training.steps_per_epoch},
	      {"batch_size", c.training.batch_size},
	      {"lr", c.training.lr},
	      {"betas", {c.training.beta1, c.training.beta2}},
	      {"seed", c.training.seed}}},
	    {"output", {{"dir", c.output.dir.string()}, {"checkpoint_every", c.output.checkpoint_every}}},
	    {"sampler",
	     {{"chain_length", c.sampler.chain_length},
	      {"window_c", c.sampler.window_c},
	      {"observable", c.sampler.observable}}},
	};
}

RunConfig preset(std::string_view name)
{
	RunConfig c;
	if (name == "toy") {
		c.target.kind = TargetKind::toy;
		c.target.lambda = 1.0 / 3.0;
		c.target.Z = 3.0;
		c.model.theta0 = 1.0;
		c.training.epochs = 5;
		c.training.steps_per_epoch = 100;
		c.training.batch_size = 100;
		c.training.lr = 0.01;
		c.output.dir = "runs/toy";
		c.output.checkpoint_every = 1;
	}
	else if (name == "phi4-desk") {
		c.target.phi4 = {8, -4.0, 8.0};
		c.model.layers = 4;
		c.model.channels = 4;
		c.training.epochs = 200;
		c.training.steps_per_epoch = 100;
		c.training.batch_size = 256;
		c.training.lr = 1e-3;
		c.output.dir = "runs/phi4-desk";
		c.output.checkpoint_every = 10;
	}
	else if (name == "phi4-paper") {
		c.target.phi4 = {16, -4.0, 8.0};
		c.model.layers = 16;
		c.model.channels = 16;
		c.training.epochs = 4000;
		c.training.steps_per_epoch = 100;
		c.training.batch_size = 1024;
		c.training.lr = 1e-3;
		c.output.dir = "runs/phi4-paper";
		c.output.checkpoint_every = 100;
	}
	else {
		throw ConfigError("preset", fmt::format("unknown preset '{}' (expected toy, phi4-desk or phi4-paper)", name));
	}
	return c;
}

std::string config_hash(const RunConfig& config)
{
	if (sodium_init() < 0)
		throw std::runtime_error("libsodium initialization failed");
	const std::string text = to_json(config).dump();
	unsigned char digest[crypto_hash_sha256_BYTES];
	crypto_hash_sha256(digest, reinterpret_cast<const unsigned char*>(text.data()), text.size());
	char hex[2 * crypto_hash_sha256_BYTES + 1];
	sodium_bin2hex(hex, sizeof hex, digest, sizeof digest);
	return hex;
}

RuntimeEstimate runtime_estimate(const RunConfig& c)
{
	RuntimeEstimate r;
	r.total_steps = c.training.epochs * c.training.steps_per_epoch;
	r.reference_hours_low = 0.15 * static_cast<double>(r.total_steps) / 3600.0;
	r.reference_hours_high = 0.17 * static_cast<double>(r.total_steps) / 3600.0;
	r.full_scale = c.target.kind == TargetKind::phi4 && c.target.phi4.L >= 16 && c.training.batch_size >= 1024 &&
	                r.total_steps >= 100000;
	if (r.full_scale)
		r.message = fmt::format("full-scale run: {} steps at batch {}; the reference timing of 0.15-0.17 s/step on "
		                        "a V100 GPU gives {:.1f}-{:.1f} h, and a CPU is far slower",
		                        r.total_steps, c.training.batch_size, r.reference_hours_low, r.reference_hours_high);
	return r;
}

std::unique_ptr<Target> make_target(const TargetConfig& t)
{
	switch (t.kind) {
	case TargetKind::phi4:
		return std::make_unique<Phi4Target>(t.phi4);
	case TargetKind::toy:
		return std::make_unique<toy::ToyTarget>(t.lambda, t.Z);
	case TargetKind::gaussian:
		return std::make_unique<GaussianTarget>(t.log_z);
	}
	throw std::logic_error("make_target: bad kind");
}

CouplingFlowConfig coupling_config(const RunConfig& c)
{
	CouplingFlowConfig f;
	f.L = c.target.lattice();
	f.layers = c.model.layers;
	f.hidden_channels = c.model.channels;
	f.leaky_slope = c.model.leaky_slope;
	f.init_scale = c.model.init_scale;
	return f;
}

std::unique_ptr<Flow> make_flow(const RunConfig& c, Rng& init_rng)
{
	if (c.target.kind == TargetKind::toy)
		return std::make_unique<toy::ToyFlow>(c.model.theta0);
	return std::make_unique<CouplingFlow>(coupling_config(c), init_rng);
}

} // namespace flowgrad
