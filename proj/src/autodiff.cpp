#include "flowgrad/autodiff.hpp"

#include <atomic>
#include <cblas.h>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace flowgrad::ad {

namespace {

std::atomic<std::uint64_t> g_next_param_id{1};
thread_local Tape* g_active_tape = nullptr;

using BackwardFn = std::function<void(detail::Node&)>;

Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn)
{
	Tape* tape = g_active_tape;
	bool needs_grad = false;
	for (const auto& in : inputs)
		if (in.requires_grad()) {
			if (in.node()->tape != tape && tape != nullptr)
				throw std::logic_error("autodiff: operands recorded on a different tape");
			needs_grad = true;
		}
	if (tape == nullptr || !needs_grad)
		return Var(std::move(value));

	auto node = std::make_shared<detail::Node>();
	node->value = std::move(value);
	node->inputs.reserve(inputs.size());
	for (const auto& in : inputs)
		node->inputs.push_back(in.node());
	node->backward = std::move(fn);
	tape->record(node);
	return Var(std::move(node));
}

bool wants_grad(const detail::Node& n, std::size_t i) { return n.inputs[i]->recorded(); }

void require_same_shape(std::string_view op, const Var& a, const Var& b)
{
	if (a.shape() != b.shape())
		throw ShapeError(op, {a.shape(), b.shape()});
}

template <class F>
Tensor map_unary(const Tensor& a, F f)
{
	Tensor out(a.shape());
	const double* x = a.ptr();
	double* y = out.ptr();
	for (std::size_t i = 0, n = a.size(); i < n; ++i)
		y[i] = f(x[i]);
	return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f)
{
	Tensor out(a.shape());
	const double* x = a.ptr();
	const double* z = b.ptr();
	double* y = out.ptr();
	for (std::size_t i = 0, n = a.size(); i < n; ++i)
		y[i] = f(x[i], z[i]);
	return out;
}

// Adds f(i) to input k's gradient for every element i.
template <class F>
void accumulate(detail::Node& self, std::size_t k, F f)
{
	if (!wants_grad(self, k))
		return;
	double* g = self.inputs[k]->grad_buffer().ptr();
	for (std::size_t i = 0, n = self.grad.size(); i < n; ++i)
		g[i] += f(i);
}

} // namespace

// ---------------------------------------------------------------- Parameter

Parameter::Parameter(std::string name, Tensor v)
    : value(std::move(v)), grad(value.shape()), name_(std::move(name)), id_(g_next_param_id++)
{
}

Parameter::Parameter(const Parameter& other)
    : value(other.value), grad(other.grad), name_(other.name_), id_(g_next_param_id++)
{
}

Parameter& Parameter::operator=(const Parameter& other)
{
	value = other.value;
	grad = other.grad;
	name_ = other.name_;
	id_ = g_next_param_id++;
	return *this;
}

// -------------------------------------------------------------- Node / Var

Tensor& detail::Node::grad_buffer()
{
	if (grad.empty())
		grad = Tensor(value.shape(), 0.0);
	return grad;
}

Var::Var(Tensor constant)
{
	node_ = std::make_shared<detail::Node>();
	node_->value = std::move(constant);
}

const Tensor& Var::value() const
{
	if (!node_)
		throw std::logic_error("autodiff: empty Var");
	return node_->value;
}

// -------------------------------------------------------------------- Tape

Tape::~Tape() { clear(); }

void Tape::clear()
{
	for (auto& n : nodes_) {
		n->tape = nullptr;
		n->backward = nullptr;
		n->inputs.clear();
	}
	nodes_.clear();
}

void Tape::record(const std::shared_ptr<detail::Node>& node)
{
	node->tape = this;
	node->index = nodes_.size();
	nodes_.push_back(node);
}

void Tape::backward(const Var& out)
{
	if (!out.requires_grad() || out.node()->tape != this)
		throw std::logic_error("backward: output was not recorded on this tape");
	if (out.value().size() != 1)
		throw ShapeError("backward", {out.shape()}, "output must be a scalar");

	for (auto& n : nodes_)
		n->grad = Tensor();
	out.node()->grad_buffer().fill(1.0);

	for (std::size_t i = out.node()->index + 1; i-- > 0;) {
		detail::Node& n = *nodes_[i];
		if (n.grad.empty())
			continue;
		if (n.param != nullptr) {
			double* g = n.param->grad.ptr();
			const double* d = n.grad.ptr();
			for (std::size_t k = 0, m = n.grad.size(); k < m; ++k)
				g[k] += d[k];
		} else if (n.backward) {
			n.backward(n);
		}
	}
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Var& out)
{
	if (!out.valid() || !out.requires_grad())
		throw std::logic_error("backward: no tape recorded this value");
	out.node()->tape->backward(out);
}

// ---------------------------------------------------------------- leaves

Var param(Parameter& p)
{
	Tape* tape = g_active_tape;
	if (tape == nullptr)
		return Var(p.value);
	auto node = std::make_shared<detail::Node>();
	node->value = p.value;
	node->param = &p;
	tape->record(node);
	return Var(std::move(node));
}

Var constant(Tensor t) { return Var(std::move(t)); }

// ------------------------------------------------------------ elementwise

Var add(const Var& a, const Var& b)
{
	require_same_shape("add", a, b);
	return record(map_binary(a.value(), b.value(), [](double x, double y) { return x + y; }), {a, b},
	              [](detail::Node& s) {
		              const double* g = s.grad.ptr();
		              accumulate(s, 0, [g](std::size_t i) { return g[i]; });
		              accumulate(s, 1, [g](std::size_t i) { return g[i]; });
	              });
}

Var sub(const Var& a, const Var& b)
{
	require_same_shape("sub", a, b);
	return record(map_binary(a.value(), b.value(), [](double x, double y) { return x - y; }), {a, b},
	              [](detail::Node& s) {
		              const double* g = s.grad.ptr();
		              accumulate(s, 0, [g](std::size_t i) { return g[i]; });
		              accumulate(s, 1, [g](std::size_t i) { return -g[i]; });
	              });
}

Var mul(const Var& a, const Var& b)
{
	require_same_shape("mul", a, b);
	return record(map_binary(a.value(), b.value(), [](double x, double y) { return x * y; }), {a, b},
	              [](detail::Node& s) {
		              const double* g = s.grad.ptr();
		              const double* x = s.inputs[0]->value.ptr();
		              const double* y = s.inputs[1]->value.ptr();
		              accumulate(s, 0, [g, y](std::size_t i) { return g[i] * y[i]; });
		              accumulate(s, 1, [g, x](std::size_t i) { return g[i] * x[i]; });
	              });
}

Var div(const Var& a, const Var& b)
{
	require_same_shape("div", a, b);
	return record(map_binary(a.value(), b.value(), [](double x, double y) { return x / y; }), {a, b},
	              [](detail::Node& s) {
		              const double* g = s.grad.ptr();
		              const double* x = s.inputs[0]->value.ptr();
		              const double* y = s.inputs[1]->value.ptr();
		              accumulate(s, 0, [g, y](std::size_t i) { return g[i] / y[i]; });
		              accumulate(s, 1, [g, x, y](std::size_t i) { return -g[i] * x[i] / (y[i] * y[i]); });
	              });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c)
{
	return record(map_unary(a.value(), [c](double x) { return c * x; }), {a}, [c](detail::Node& s) {
		const double* g = s.grad.ptr();
		accumulate(s, 0, [g, c](std::size_t i) { return c * g[i]; });
	});
}

Var shift(const Var& a, double c)
{
	return record(map_unary(a.value(), [c](double x) { return x + c; }), {a}, [](detail::Node& s) {
		const double* g = s.grad.ptr();
		accumulate(s, 0, [g](std::size_t i) { return g[i]; });
	});
}

Var exp(const Var& a)
{
	return record(map_unary(a.value(), [](double x) { return std::exp(x); }), {a}, [](detail::Node& s) {
		const double* g = s.grad.ptr();
		const double* y = s.value.ptr();
		accumulate(s, 0, [g, y](std::size_t i) { return g[i] * y[i]; });
	});
}

Var log(const Var& a)
{
	return record(map_unary(a.value(), [](double x) { return std::log(x); }), {a}, [](detail::Node& s) {
		const double* g = s.grad.ptr();
		const double* x = s.inputs[0]->value.ptr();
		accumulate(s, 0, [g, x](std::size_t i) { return g[i] / x[i]; });
	});
}

Var tanh(const Var& a)
{
	return record(map_unary(a.value(), [](double x) { return std::tanh(x); }), {a}, [](detail::Node& s) {
		const double* g = s.grad.ptr();
		const double* y = s.value.ptr();
		accumulate(s, 0, [g, y](std::size_t i) { return g[i] * (1.0 - y[i] * y[i]); });
	});
}

Var leaky_relu(const Var& a, double slope)
{
	return record(map_unary(a.value(), [slope](double x) { return x > 0.0 ? x : slope * x; }), {a},
	              [slope](detail::Node& s) {
		              const double* g = s.grad.ptr();
		              const double* x = s.inputs[0]->value.ptr();
		              accumulate(s, 0, [g, x, slope](std::size_t i) { return x[i] > 0.0 ? g[i] : slope * g[i]; });
	              });
}

Var custom_op(Tensor value, const std::vector<Var>& inputs, VjpFn vjp)
{
	Tape* tape = g_active_tape;
	bool needs_grad = false;
	for (const auto& in : inputs)
		if (in.requires_grad()) {
			if (tape != nullptr && in.node()->tape != tape)
				throw std::logic_error("autodiff: operands recorded on a different tape");
			needs_grad = true;
		}
	if (tape == nullptr || !needs_grad)
		return Var(std::move(value));
	auto node = std::make_shared<detail::Node>();
	node->value = std::move(value);
	for (const auto& in : inputs)
		node->inputs.push_back(in.node());
	node->backward = [vjp = std::move(vjp)](detail::Node& s) {
		std::vector<Tensor*> grads;
		for (auto& in : s.inputs)
			grads.push_back(in->recorded() ? &in->grad_buffer() : nullptr);
		vjp(s.grad, grads);
	};
	tape->record(node);
	return Var(std::move(node));
}

// ------------------------------------------------------------- reductions

Var sum(const Var& a)
{
	double total = 0.0;
	for (double x : a.value().data())
		total += x;
	return record(Tensor::scalar(total), {a}, [](detail::Node& s) {
		const double g = s.grad[0];
		if (!wants_grad(s, 0))
			return;
		for (double& d : s.inputs[0]->grad_buffer().data())
			d += g;
	});
}

Var mean(const Var& a)
{
	const double n = static_cast<double>(a.value().size());
	return scale(sum(a), 1.0 / n);
}

Var sum_per_sample(const Var& a)
{
	const Tensor& x = a.value();
	if (x.rank() < 1)
		throw ShapeError("sum_per_sample", {x.shape()}, "needs a leading batch axis");
	const std::size_t n = x.dim(0);
	const std::size_t inner = x.size() / n;
	Tensor out(Shape{n});
	for (std::size_t b = 0; b < n; ++b) {
		double acc = 0.0;
		const double* row = x.ptr() + b * inner;
		for (std::size_t k = 0; k < inner; ++k)
			acc += row[k];
		out[b] = acc;
	}
	return record(std::move(out), {a}, [n, inner](detail::Node& s) {
		if (!wants_grad(s, 0))
			return;
		double* g = s.inputs[0]->grad_buffer().ptr();
		for (std::size_t b = 0; b < n; ++b)
			for (std::size_t k = 0; k < inner; ++k)
				g[b * inner + k] += s.grad[b];
	});
}

// ---------------------------------------------------------------- layout

Var reshape(const Var& a, Shape shape)
{
	if (numel(shape) != a.value().size())
		throw ShapeError("reshape", {a.shape(), shape});
	return record(a.value().reshaped(std::move(shape)), {a}, [](detail::Node& s) {
		const double* g = s.grad.ptr();
		accumulate(s, 0, [g](std::size_t i) { return g[i]; });
	});
}

Var select_channel(const Var& a, std::size_t c)
{
	const Tensor& x = a.value();
	if (x.rank() < 2 || c >= x.dim(1))
		throw ShapeError("select_channel", {x.shape()}, "channel " + std::to_string(c) + " out of range");
	const std::size_t n = x.dim(0), channels = x.dim(1);
	const std::size_t inner = x.size() / (n * channels);
	Shape out_shape{n};
	for (std::size_t i = 2; i < x.rank(); ++i)
		out_shape.push_back(x.dim(i));
	Tensor out(out_shape);
	for (std::size_t b = 0; b < n; ++b)
		for (std::size_t k = 0; k < inner; ++k)
			out[b * inner + k] = x[(b * channels + c) * inner + k];
	return record(std::move(out), {a}, [n, channels, inner, c](detail::Node& s) {
		if (!wants_grad(s, 0))
			return;
		double* g = s.inputs[0]->grad_buffer().ptr();
		for (std::size_t b = 0; b < n; ++b)
			for (std::size_t k = 0; k < inner; ++k)
				g[(b * channels + c) * inner + k] += s.grad[b * inner + k];
	});
}

Var expand(const Var& a, Shape shape)
{
	if (a.value().size() != 1)
		throw ShapeError("expand", {a.shape(), shape}, "source must hold one element");
	return record(Tensor(shape, a.value()[0]), {a}, [](detail::Node& s) {
		if (!wants_grad(s, 0))
			return;
		double total = 0.0;
		for (double g : s.grad.data())
			total += g;
		s.inputs[0]->grad_buffer()[0] += total;
	});
}

// ------------------------------------------------------------ convolution

namespace {

struct ConvGeometry {
	std::size_t batch, cin, cout, L, sites;
	bool batched;
};

ConvGeometry conv_geometry(const Shape& in, const Shape& k, const Shape& b)
{
	const bool batched = in.size() == 4;
	if (in.size() != 3 && in.size() != 4)
		throw ShapeError("conv2d_circular", {in, k, b}, "input must be [N,C,L,L] or [C,L,L]");
	const std::size_t off = batched ? 1 : 0;
	const std::size_t cin = in[off], L = in[off + 1];
	if (in[off + 2] != L)
		throw ShapeError("conv2d_circular", {in, k, b}, "lattice must be square");
	if (L < 3)
		throw ShapeError("conv2d_circular", {in, k, b}, "lattice extent must be at least 3");
	if (k.size() != 4 || k[1] != cin || k[2] != 3 || k[3] != 3)
		throw ShapeError("conv2d_circular", {in, k, b}, "kernel must be [Cout,Cin,3,3]");
	if (b.size() != 1 || b[0] != k[0])
		throw ShapeError("conv2d_circular", {in, k, b}, "bias must be [Cout]");
	ConvGeometry g{};
	g.batch = batched ? in[0] : 1;
	g.cin = cin;
	g.cout = k[0];
	g.L = L;
	g.sites = L * L;
	g.batched = batched;
	return g;
}

// dst[i, j] = plane[(i + dy) mod L, (j + dx) mod L] for dy, dx in {-1, 0, 1}.
inline void gather_shifted(const double* plane, double* dst, std::size_t L, std::size_t ky, std::size_t kx)
{
	for (std::size_t i = 0; i < L; ++i) {
		const double* src = plane + ((i + L + ky - 1) % L) * L;
		double* out = dst + i * L;
		if (kx == 1) {
			std::memcpy(out, src, L * sizeof(double));
		}
		else if (kx == 0) {
			out[0] = src[L - 1];
			std::memcpy(out + 1, src, (L - 1) * sizeof(double));
		}
		else {
			std::memcpy(out, src + 1, (L - 1) * sizeof(double));
			out[L - 1] = src[0];
		}
	}
}

// Adjoint of gather_shifted: plane[(i + dy) mod L, (j + dx) mod L] += from[i, j].
inline void scatter_shifted_add(const double* from, double* plane, std::size_t L, std::size_t ky, std::size_t kx)
{
	for (std::size_t i = 0; i < L; ++i) {
		double* dst = plane + ((i + L + ky - 1) % L) * L;
		const double* in = from + i * L;
		if (kx == 1) {
			for (std::size_t j = 0; j < L; ++j)
				dst[j] += in[j];
		}
		else if (kx == 0) {
			dst[L - 1] += in[0];
			for (std::size_t j = 1; j < L; ++j)
				dst[j - 1] += in[j];
		}
		else {
			for (std::size_t j = 0; j + 1 < L; ++j)
				dst[j + 1] += in[j];
			dst[0] += in[L - 1];
		}
	}
}

// cols[(ci*9 + tap), s*sites + p] = x[n0+s, ci] shifted by tap
void im2col(const ConvGeometry& g, const double* x, std::size_t n0, std::size_t ns, std::vector<double>& cols)
{
	const std::size_t ncol = ns * g.sites;
	cols.resize(g.cin * 9 * ncol);
	for (std::size_t ci = 0; ci < g.cin; ++ci)
		for (std::size_t tap = 0; tap < 9; ++tap) {
			double* row = cols.data() + (ci * 9 + tap) * ncol;
			for (std::size_t s = 0; s < ns; ++s)
				gather_shifted(x + ((n0 + s) * g.cin + ci) * g.sites, row + s * g.sites, g.L, tap / 3, tap % 3);
		}
}

void col2im_add(const ConvGeometry& g, const std::vector<double>& cols, std::size_t n0, std::size_t ns, double* dx)
{
	const std::size_t ncol = ns * g.sites;
	for (std::size_t ci = 0; ci < g.cin; ++ci)
		for (std::size_t tap = 0; tap < 9; ++tap) {
			const double* row = cols.data() + (ci * 9 + tap) * ncol;
			for (std::size_t s = 0; s < ns; ++s)
				scatter_shifted_add(row + s * g.sites, dx + ((n0 + s) * g.cin + ci) * g.sites, g.L, tap / 3,
				                    tap % 3);
		}
}

} // namespace

Var conv2d_circular(const Var& input, const Var& kernel, const Var& bias)
{
	// One GEMM per sample: [Cout, Cin*9] x [Cin*9, L*L] lands directly in the
	// [Cout, L, L] output plane.
	const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), bias.shape());
	const int K = static_cast<int>(g.cin * 9);
	const int M = static_cast<int>(g.cout);
	const int S = static_cast<int>(g.sites);

	Shape out_shape = g.batched ? Shape{g.batch, g.cout, g.L, g.L} : Shape{g.cout, g.L, g.L};
	Tensor out(out_shape);
	{
		std::vector<double> cols;
		const double* x = input.value().ptr();
		const double* w = kernel.value().ptr();
		const double* b = bias.value().ptr();
		for (std::size_t n = 0; n < g.batch; ++n) {
			double* y = out.ptr() + n * g.cout * g.sites;
			for (std::size_t co = 0; co < g.cout; ++co)
				std::fill(y + co * g.sites, y + (co + 1) * g.sites, b[co]);
			im2col(g, x, n, 1, cols);
			cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, M, S, K, 1.0, w, K, cols.data(), S, 1.0, y, S);
		}
	}

	return record(std::move(out), {input, kernel, bias}, [g, K, M, S](detail::Node& s) {
		const double* x = s.inputs[0]->value.ptr();
		const double* w = s.inputs[1]->value.ptr();
		const bool need_x = wants_grad(s, 0), need_w = wants_grad(s, 1), need_b = wants_grad(s, 2);
		double* dx = need_x ? s.inputs[0]->grad_buffer().ptr() : nullptr;
		double* dw = need_w ? s.inputs[1]->grad_buffer().ptr() : nullptr;
		double* db = need_b ? s.inputs[2]->grad_buffer().ptr() : nullptr;

		std::vector<double> cols, dcols(static_cast<std::size_t>(K) * S);
		for (std::size_t n = 0; n < g.batch; ++n) {
			const double* dy = s.grad.ptr() + n * g.cout * g.sites;
			if (db)
				for (std::size_t co = 0; co < g.cout; ++co) {
					double acc = 0.0;
					for (std::size_t p = 0; p < g.sites; ++p)
						acc += dy[co * g.sites + p];
					db[co] += acc;
				}
			if (dw) {
				im2col(g, x, n, 1, cols);
				cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, M, K, S, 1.0, dy, S, cols.data(), S, 1.0, dw, K);
			}
			if (dx) {
				cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, S, M, 1.0, w, K, dy, S, 0.0, dcols.data(), S);
				col2im_add(g, dcols, n, 1, dx);
			}
		}
	});
}

} // namespace flowgrad::ad
