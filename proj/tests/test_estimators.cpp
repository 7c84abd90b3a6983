#include "support.hpp"

#include "flowgrad/estimators.hpp"
#include "flowgrad/flow.hpp"
#include "flowgrad/physics.hpp"
#include "flowgrad/toymodel.hpp"

#include <doctest.h>

#include <cmath>

using namespace flowgrad;

namespace {

PriorSample toy_batch(std::vector<double> z) { return {Tensor({z.size()}, z), Tensor({z.size()}, 0.0)}; }

CouplingFlow small_flow(std::size_t L, std::uint64_t seed, double init_scale = 1.0)
{
	CouplingFlowConfig cfg;
	cfg.L = L;
	cfg.layers = 2;
	cfg.hidden_channels = 3;
	cfg.init_scale = init_scale;
	Rng rng = make_rng(seed);
	return CouplingFlow(cfg, rng);
}

double max_abs(const std::vector<double>& v)
{
	double m = 0.0;
	for (double x : v)
		m = std::max(m, std::abs(x));
	return m;
}

} // namespace

TEST_CASE("estimator keys")
{
	CHECK(parse_estimator("g1") == Estimator::g1);
	CHECK(parse_estimator("g2") == Estimator::g2);
	CHECK(parse_estimator("g3") == Estimator::g3);
	CHECK(to_string(Estimator::g2) == "g2");
	CHECK_THROWS_AS(parse_estimator("g4"), std::invalid_argument);
}

TEST_CASE("toy g3 vanishes at theta=lambda=1 for z=1-1/e")
{
	toy::ToyFlow flow(1.0);
	toy::ToyTarget target(1.0, 1.0);
	const double z = 1.0 - std::exp(-1.0);
	auto g = estimate_gradient(Estimator::g3, flow, target, toy_batch({z}));
	CHECK(std::abs(g[0]) < 1e-15);
	CHECK(std::abs(toy::g3_batch(1.0, 1.0, std::vector<double>{z})) < 1e-15);
}

TEST_CASE("toy g1 single-sample hand value")
{
	// theta=2, lambda=1, Z=1 and phi=1: score -0.5, signal log 2 - 1.
	toy::ToyFlow flow(2.0);
	toy::ToyTarget target(1.0, 1.0);
	const double z = 1.0 - std::exp(-2.0);
	auto loss = loss_g1(flow, target, toy_batch({z}));
	CHECK(loss.phi[0] == doctest::Approx(1.0).epsilon(1e-14));
	CHECK(loss.log_q[0] - loss.log_p[0] == doctest::Approx(std::log(2.0) - 1.0).epsilon(1e-14));
	auto g = estimate_gradient(Estimator::g1, flow, target, toy_batch({z}));
	CHECK(g[0] == doctest::Approx(-0.5 * (std::log(2.0) - 1.0)).epsilon(1e-13));
	CHECK(g[0] == doctest::Approx(0.15343).epsilon(1e-4));
}

TEST_CASE("zero signal gives zero g1 and g2")
{
	auto flow = small_flow(4, 1);
	flow.make_identity();
	GaussianTarget target(0.0);
	Rng rng = make_rng(2);
	auto batch = flow.sample_prior(16, rng);
	for (auto e : {Estimator::g1, Estimator::g2})
		for (double v : estimate_gradient(e, flow, target, batch))
			CHECK(v == 0.0);
}

TEST_CASE("g3 does not vanish at q=p")
{
	auto flow = small_flow(4, 1);
	flow.make_identity();
	GaussianTarget target(0.0);
	Rng rng = make_rng(3);
	auto batch = flow.sample_prior(16, rng);
	CHECK(max_abs(estimate_gradient(Estimator::g3, flow, target, batch)) > 1e-3);
}

TEST_CASE("g2 rejects a single-sample batch")
{
	toy::ToyFlow flow(1.0);
	toy::ToyTarget target(1.0 / 3.0, 3.0);
	CHECK_THROWS_AS(loss_g2(flow, target, toy_batch({0.5})), std::invalid_argument);
	CHECK(estimate_gradient(Estimator::g2, flow, target, toy_batch({0.3, 0.3}))[0] == 0.0);
	// The mean of three equal values can differ from them in the last bit.
	CHECK(std::abs(estimate_gradient(Estimator::g2, flow, target, toy_batch({0.3, 0.3, 0.3}))[0]) < 1e-15);
}

TEST_CASE("g3 requires a differentiable target")
{
	auto flow = small_flow(3, 1);
	OpaqueTarget opaque("opaque", [](const Tensor& t) { return std::vector<double>(t.dim(0), 0.0); });
	Rng rng = make_rng(1);
	auto batch = flow.sample_prior(2, rng);
	CHECK_THROWS_AS(loss_g3(flow, opaque, batch), std::invalid_argument);
	CHECK_NOTHROW(estimate_gradient(Estimator::g2, flow, opaque, batch));
}

TEST_CASE("generic machinery reproduces the toy closed forms per batch")
{
	Rng rng = make_rng(8);
	for (int trial = 0; trial < 50; ++trial) {
		const double theta = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
		const double lambda = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
		const double Z = std::uniform_real_distribution<double>(0.5, 5.0)(rng);
		toy::ToyFlow flow(theta);
		toy::ToyTarget target(lambda, Z);
		auto batch = flow.sample_prior(testing::random_size(rng, 2, 50), rng);
		std::vector<double> z = batch.z.values(), phi;
		for (double v : z)
			phi.push_back(toy::forward(v, theta));
		CAPTURE(theta);
		CAPTURE(lambda);
		auto tol = [](double x) { return 1e-10 * std::max(1.0, std::abs(x)); };
		const double g1 = toy::g1_batch(theta, lambda, Z, phi);
		const double g2 = toy::g2_batch(theta, lambda, phi);
		const double g3 = toy::g3_batch(theta, lambda, z);
		CHECK(std::abs(estimate_gradient(Estimator::g1, flow, target, batch)[0] - g1) < tol(g1));
		CHECK(std::abs(estimate_gradient(Estimator::g2, flow, target, batch)[0] - g2) < tol(g2));
		CHECK(std::abs(estimate_gradient(Estimator::g3, flow, target, batch)[0] - g3) < tol(g3));
	}
}

TEST_CASE("g2 equals g1 minus mean score times mean signal")
{
	Phi4Params p;
	p.L = 4;
	Phi4Target target(p);
	Rng rng = make_rng(12);
	for (int trial = 0; trial < 10; ++trial) {
		auto flow = small_flow(4, 100 + trial);
		auto batch = flow.sample_prior(testing::random_size(rng, 2, 32), rng);
		auto g1 = estimate_gradient(Estimator::g1, flow, target, batch);
		auto g2 = estimate_gradient(Estimator::g2, flow, target, batch);
		LossValue lv = loss_g1(flow, target, batch);
		const double s_bar = lv.free_energy();
		auto delta = mean_score(flow, lv.phi);
		const double scale = std::max(1.0, max_abs(g1));
		for (std::size_t j = 0; j < g1.size(); ++j)
			CHECK(std::abs(g2[j] - (g1[j] - delta[j] * s_bar)) < 1e-10 * scale);
	}
}

TEST_CASE("g2 does not depend on the normalization of P")
{
	auto flow = small_flow(4, 5);
	GaussianTarget a(0.0), b(7.3);
	Rng rng = make_rng(6);
	for (int trial = 0; trial < 5; ++trial) {
		auto batch = flow.sample_prior(32, rng);
		auto ga = estimate_gradient(Estimator::g2, flow, a, batch);
		auto gb = estimate_gradient(Estimator::g2, flow, b, batch);
		const double scale = std::max(1.0, max_abs(ga));
		for (std::size_t j = 0; j < ga.size(); ++j)
			CHECK(std::abs(ga[j] - gb[j]) <= 1e-12 * scale);
	}
}

TEST_CASE("score-function estimators never touch the field gradient")
{
	Phi4Params p;
	p.L = 4;
	Phi4Target target(p);
	auto flow = small_flow(4, 9);
	Rng rng = make_rng(10);
	auto batch = flow.sample_prior(8, rng);
	estimate_gradient(Estimator::g1, flow, target, batch);
	estimate_gradient(Estimator::g2, flow, target, batch);
	CHECK(target.field_gradient_calls() == 0);
	estimate_gradient(Estimator::g3, flow, target, batch);
	CHECK(target.field_gradient_calls() > 0);
}

TEST_CASE("toy estimator means agree with the exact gradient")
{
	const double lambda = 1.0 / 3.0, Z = 3.0;
	toy::ToyTarget target(lambda, Z);
	for (double theta : {1.0, 0.5, lambda}) {
		CAPTURE(theta);
		toy::ToyFlow flow(theta);
		const double exact = toy::exact_grad(theta, lambda);
		for (auto e : {Estimator::g1, Estimator::g3}) {
			auto m = estimator_mean_check(e, flow, target, 100, 2000, 41);
			CHECK(std::abs(m.mean[0] - exact) < 3.0 * m.standard_error[0]);
		}
		auto m2 = estimator_mean_check(Estimator::g2, flow, target, 100, 2000, 41);
		CHECK(std::abs(m2.mean[0] - 0.99 * exact) < 3.0 * m2.standard_error[0] + 1e-15);
	}
}

TEST_CASE("g2 mean carries the (N-1)/N factor")
{
	toy::ToyFlow flow(1.0);
	toy::ToyTarget target(1.0 / 3.0, 3.0);
	MomentAccumulator diff(1);
	for (std::size_t k = 0; k < 100000; ++k) {
		Rng rng = make_rng(77, k);
		auto batch = flow.sample_prior(2, rng);
		const double g1 = estimate_gradient(Estimator::g1, flow, target, batch)[0];
		const double g2 = estimate_gradient(Estimator::g2, flow, target, batch)[0];
		const double d = g2 - 0.5 * g1;
		diff.add(std::span<const double>(&d, 1));
	}
	CHECK(std::abs(diff.mean()[0]) < 3.0 * diff.standard_error()[0]);
}

TEST_CASE("the three estimators share their mean on a coupling flow")
{
	// g2 is rescaled by N/(N-1). Independent seeds keep the comparisons unpaired.
	Phi4Params p;
	p.L = 4;
	p.m2 = -1.0;
	p.lambda = 1.0;
	Phi4Target target(p);
	auto flow = small_flow(4, 31, 0.5);
	const std::size_t n = 16, batches = 4000;
	auto m1 = gradient_moments(Estimator::g1, flow, target, n, batches, 101);
	auto m2 = gradient_moments(Estimator::g2, flow, target, n, batches, 102);
	auto m3 = gradient_moments(Estimator::g3, flow, target, n, batches, 103);
	const double scale = static_cast<double>(n) / static_cast<double>(n - 1);
	double worst = 0.0;
	for (std::size_t j = 0; j < flow.parameter_count(); ++j) {
		const double a = m1.mean()[j], b = scale * m2.mean()[j], c = m3.mean()[j];
		const double sa = m1.standard_error()[j], sb = scale * m2.standard_error()[j], sc = m3.standard_error()[j];
		worst = std::max(worst, std::abs(b - c) / std::hypot(sb, sc));
		worst = std::max(worst, std::abs(a - c) / std::hypot(sa, sc));
	}
	MESSAGE("largest z-score ", worst);
	CHECK(worst < 5.0);
}

TEST_CASE("variance ordering at the toy optimum")
{
	const double lambda = 1.0 / 3.0;
	toy::ToyFlow flow(lambda);
	toy::ToyTarget target(lambda, 1.0 / lambda);
	auto v1 = gradient_moments(Estimator::g1, flow, target, 100, 1000, 3).variance()[0];
	auto v2 = gradient_moments(Estimator::g2, flow, target, 100, 1000, 3).variance()[0];
	auto v3 = gradient_moments(Estimator::g3, flow, target, 100, 1000, 3).variance()[0];
	CHECK(v2 < v3);
	CHECK(v3 < v1);
}

TEST_CASE("moment accumulator merge equals sequential accumulation")
{
	Rng rng = make_rng(4);
	MomentAccumulator all(3), left(3), right(3);
	for (int i = 0; i < 200; ++i) {
		auto x = testing::normal_tensor({3}, rng).values();
		all.add(x);
		(i < 70 ? left : right).add(x);
	}
	left.merge(right);
	CHECK(left.count() == 200);
	for (std::size_t j = 0; j < 3; ++j) {
		CHECK(left.mean()[j] == doctest::Approx(all.mean()[j]).epsilon(1e-12));
		CHECK(left.variance()[j] == doctest::Approx(all.variance()[j]).epsilon(1e-12));
	}
}

TEST_CASE("gradient moments do not depend on the worker count")
{
	toy::ToyFlow flow(0.8);
	toy::ToyTarget target(1.0 / 3.0, 3.0);
	auto a = gradient_moments(Estimator::g2, flow, target, 10, 37, 5);
	setenv("FLOWGRAD_THREADS", "1", 1);
	auto b = gradient_moments(Estimator::g2, flow, target, 10, 37, 5);
	unsetenv("FLOWGRAD_THREADS");
	CHECK(a.mean() == b.mean());
	CHECK(a.variance() == b.variance());
}
