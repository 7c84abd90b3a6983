#include "support.hpp"

#include "flowgrad/flow.hpp"
#include "flowgrad/toymodel.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace flowgrad;
using namespace flowgrad::ad;
using testing::normal_tensor;
using testing::random_tensor;

namespace {

CouplingFlow random_flow(std::size_t L, std::size_t layers, std::size_t channels, std::uint64_t seed,
                         double init_scale = 1.0)
{
	CouplingFlowConfig cfg;
	cfg.L = L;
	cfg.layers = layers;
	cfg.hidden_channels = channels;
	cfg.init_scale = init_scale;
	Rng rng = make_rng(seed);
	return CouplingFlow(cfg, rng);
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
	double m = 0.0;
	for (std::size_t i = 0; i < a.size(); ++i)
		m = std::max(m, std::abs(a[i] - b[i]));
	return m;
}

} // namespace

TEST_CASE("prior log density at the origin")
{
	Tensor z({1, 2, 2}, 0.0);
	CHECK(standard_normal_log_prob(z)[0] == doctest::Approx(-2.0 * std::log(2.0 * M_PI)).epsilon(1e-15));
	CHECK(standard_normal_log_prob(z)[0] == doctest::Approx(-3.67575).epsilon(1e-6));
}

TEST_CASE("prior samples have unit variance and the origin is the mode")
{
	auto flow = random_flow(8, 2, 2, 1);
	Rng rng = make_rng(4);
	auto s = flow.sample_prior(2000, rng);
	const auto& v = s.z.values();
	const double var = testing::variance(v);
	const double sigma = std::sqrt(2.0 / static_cast<double>(v.size()));
	CHECK(std::abs(var - 1.0) < 3.0 * sigma);

	const double at_zero = standard_normal_log_prob(Tensor({1, 8, 8}, 0.0))[0];
	for (double lq : s.log_q_pr.data())
		CHECK(lq < at_zero);
	for (std::size_t n = 0; n < 5; ++n) {
		double ss = 0.0;
		for (std::size_t i = 0; i < 64; ++i)
			ss += v[n * 64 + i] * v[n * 64 + i];
		CHECK(s.log_q_pr[n] == doctest::Approx(-32.0 * std::log(2.0 * M_PI) - 0.5 * ss).epsilon(1e-13));
	}
}

TEST_CASE("constant s=0.5 coupling layer")
{
	CouplingFlowConfig cfg;
	cfg.L = 4;
	cfg.layers = 1;
	cfg.hidden_channels = 3;
	Rng rng = make_rng(9);
	CouplingLayer layer(Parity::even, cfg, rng);
	layer.force_constant_output(std::atanh(0.5), 0.0);

	Rng data = make_rng(10);
	Tensor phi = normal_tensor({2, 4, 4}, data);
	auto fwd = layer.forward(constant(phi));
	for (std::size_t n = 0; n < 2; ++n)
		CHECK(fwd.log_jac.value()[n] == doctest::Approx(4.0).epsilon(1e-14));
	const Tensor& active = layer.active_mask();
	for (std::size_t n = 0; n < 2; ++n)
		for (std::size_t i = 0; i < 16; ++i) {
			const double expect = active[i] == 1.0 ? phi[n * 16 + i] * std::exp(0.5) : phi[n * 16 + i];
			CHECK(fwd.phi.value()[n * 16 + i] == doctest::Approx(expect).epsilon(1e-14));
		}

	auto rev = layer.reverse(constant(phi));
	for (std::size_t n = 0; n < 2; ++n)
		CHECK(rev.log_jac.value()[n] == doctest::Approx(-4.0).epsilon(1e-14));
	for (std::size_t i = 0; i < 32; ++i) {
		const double expect = active[i % 16] == 1.0 ? phi[i] / std::exp(0.5) : phi[i];
		CHECK(rev.phi.value()[i] == doctest::Approx(expect).epsilon(1e-14));
	}

	CouplingFlow flow(cfg, rng);
	flow.layers()[0].force_constant_output(std::atanh(0.5), 0.0);
	auto sample = flow.sample_prior(3, data);
	auto out = apply_flow(flow, sample);
	for (std::size_t n = 0; n < 3; ++n)
		CHECK(out.log_q.value()[n] == doctest::Approx(sample.log_q_pr[n] - 4.0).epsilon(1e-14));
}

TEST_CASE("identity layers leave fields and densities unchanged")
{
	auto flow = random_flow(5, 4, 3, 2);
	flow.make_identity();
	Rng rng = make_rng(3);
	auto s = flow.sample_prior(4, rng);
	auto out = apply_flow(flow, s);
	CHECK(out.phi.value() == s.z);
	CHECK(out.log_q.value() == s.log_q_pr);
	auto rev = flow.reverse(constant(s.z));
	CHECK(rev.z.value() == s.z);
	for (double v : rev.log_jbar.value().data())
		CHECK(v == 0.0);

	CouplingLayer& layer = flow.layers()[1];
	auto f = layer.forward(constant(s.z));
	CHECK(f.phi.value() == s.z);
	for (double v : f.log_jac.value().data())
		CHECK(v == 0.0);
}

TEST_CASE("frozen half passes through each layer unchanged")
{
	auto flow = random_flow(6, 2, 4, 8);
	Rng rng = make_rng(1);
	Tensor phi = normal_tensor({3, 6, 6}, rng);
	for (auto& layer : flow.layers()) {
		auto out = layer.forward(constant(phi));
		const Tensor& active = layer.active_mask();
		for (std::size_t i = 0; i < phi.size(); ++i)
			if (active[i % 36] == 0.0)
				CHECK(out.phi.value()[i] == phi[i]);
	}
}

TEST_CASE("layer round trip on random networks")
{
	Rng rng = make_rng(77);
	for (int trial = 0; trial < 20; ++trial) {
		CouplingFlowConfig cfg;
		cfg.L = testing::random_size(rng, 3, 6);
		cfg.hidden_channels = testing::random_size(rng, 1, 4);
		cfg.init_scale = 1.0;
		CouplingLayer layer(trial % 2 ? Parity::odd : Parity::even, cfg, rng);
		Tensor phi = normal_tensor({2, cfg.L, cfg.L}, rng);
		auto fwd = layer.forward(constant(phi));
		auto back = layer.reverse(fwd.phi);
		CHECK(max_abs_diff(back.phi.value(), phi) < 1e-10);
		for (std::size_t n = 0; n < 2; ++n)
			CHECK(std::abs(fwd.log_jac.value()[n] + back.log_jac.value()[n]) < 1e-10);
	}
}

TEST_CASE("flow bijection over random parameter draws")
{
	Rng rng = make_rng(2024);
	for (std::uint64_t model = 0; model < 100; ++model) {
		CAPTURE(model);
		const std::size_t L = testing::random_size(rng, 3, 6);
		const std::size_t layers = testing::random_size(rng, 1, 6);
		auto flow = random_flow(L, layers, testing::random_size(rng, 1, 4), 1000 + model);
		auto s = flow.sample_prior(4, rng);
		auto fwd = apply_flow(flow, s);
		auto rev = flow.reverse(fwd.phi);
		CHECK(max_abs_diff(rev.z.value(), s.z) < 1e-10);
		Tensor reverse_log_q = log_density(flow, fwd.phi).value();
		CHECK(max_abs_diff(reverse_log_q, fwd.log_q.value()) < 1e-8);
	}
}

TEST_CASE("checkerboard covers every site in half the layers")
{
	for (std::size_t layers : {2, 4, 6}) {
		auto flow = random_flow(5, layers, 1, 0);
		std::vector<int> count(25, 0);
		for (auto& layer : flow.layers())
			for (std::size_t i = 0; i < 25; ++i)
				count[i] += layer.active_mask()[i] == 1.0;
		for (int c : count)
			CHECK(c == static_cast<int>(layers / 2));
		CHECK(flow.layers()[0].parity() == Parity::even);
		CHECK(flow.layers()[0].active_mask()[0] == 0.0); // (0,0) is even, frozen in layer 0
		CHECK(flow.layers()[1].parity() == Parity::odd);
	}
}

TEST_CASE("total log J is the sum of per-layer contributions")
{
	auto flow = random_flow(4, 5, 3, 12);
	Rng rng = make_rng(5);
	auto s = flow.sample_prior(3, rng);
	Var x = constant(s.z);
	std::vector<double> total(3, 0.0);
	for (auto& layer : flow.layers()) {
		auto out = layer.forward(x);
		x = out.phi;
		for (std::size_t n = 0; n < 3; ++n)
			total[n] += out.log_jac.value()[n];
	}
	auto fwd = apply_flow(flow, s);
	for (std::size_t n = 0; n < 3; ++n)
		CHECK(s.log_q_pr[n] - fwd.log_q.value()[n] == doctest::Approx(total[n]).epsilon(1e-12));
}

TEST_CASE("coupling stack gradients match central differences")
{
	auto flow = random_flow(4, 2, 3, 31);
	Rng rng = make_rng(32);
	auto s = flow.sample_prior(2, rng);
	Tensor w_phi = random_tensor({2, 4, 4}, rng);
	Tensor w_q = random_tensor({2}, rng);
	auto objective = [&](Flow& f) {
		auto out = apply_flow(f, s);
		return add(sum(mul(out.phi, constant(w_phi))), sum(mul(out.log_q, constant(w_q))));
	};
	{
		Tape tape;
		TapeScope scope(tape);
		backward(objective(flow));
	}
	auto params = flow.parameters();
	for (std::size_t k = 0; k < params.size(); ++k) {
		CAPTURE(params[k]->name());
		auto numeric = testing::numeric_gradient(
		    [&](const Tensor& t) {
			    auto copy = flow.clone();
			    copy->parameters()[k]->value = t;
			    NoGradGuard ng;
			    return objective(*copy).value().item();
		    },
		    params[k]->value);
		CHECK(testing::max_relative_error(params[k]->grad.values(), numeric) < 1e-5);
	}
}

TEST_CASE("layer shape errors")
{
	auto flow = random_flow(4, 1, 1, 0);
	CHECK_THROWS_AS(flow.layers()[0].forward(constant(Tensor({2, 5, 5}))), ShapeError);
	CHECK_THROWS_AS(flow.layers()[0].reverse(constant(Tensor({4, 4}))), ShapeError);
	CouplingFlowConfig bad;
	bad.L = 2;
	Rng rng = make_rng(0);
	CHECK_THROWS_AS(CouplingFlow(bad, rng), std::invalid_argument);
}

TEST_CASE("generated one-site samples follow the reverse-path density")
{
	// Kolmogorov-Smirnov against the CDF obtained by integrating
	// exp(log_density) numerically on a fine grid.
	toy::ToyFlow flow(0.7);
	Rng rng = make_rng(61);
	const std::size_t n = 100000;
	std::vector<double> phi;
	{
		NoGradGuard ng;
		auto s = flow.sample_prior(n, rng);
		phi = apply_flow(flow, s).phi.value().values();
	}
	std::sort(phi.begin(), phi.end());

	const double top = phi.back() * 1.01;
	const std::size_t grid = 200001;
	Tensor x({grid});
	for (std::size_t i = 0; i < grid; ++i)
		x[i] = top * static_cast<double>(i) / static_cast<double>(grid - 1);
	Tensor dens = log_density(flow, constant(x)).value();
	std::vector<double> cdf(grid, 0.0);
	const double h = top / static_cast<double>(grid - 1);
	for (std::size_t i = 1; i < grid; ++i)
		cdf[i] = cdf[i - 1] + 0.5 * h * (std::exp(dens[i - 1]) + std::exp(dens[i]));

	double d = 0.0;
	for (std::size_t k = 0; k < n; ++k) {
		const double pos = phi[k] / h;
		const std::size_t i = std::min(static_cast<std::size_t>(pos), grid - 2);
		const double F = cdf[i] + (cdf[i + 1] - cdf[i]) * (pos - static_cast<double>(i));
		d = std::max({d, std::abs(F - static_cast<double>(k) / n), std::abs(F - static_cast<double>(k + 1) / n)});
	}
	const double critical = 1.628 / std::sqrt(static_cast<double>(n)); // 1% level
	CHECK(cdf.back() == doctest::Approx(1.0).epsilon(1e-6));
	CHECK(d < critical);
}
