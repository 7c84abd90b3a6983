#include "flowgrad/parallel.hpp"
#include "flowgrad/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace flowgrad {

std::size_t worker_count()
{
	std::size_t n = std::max(1u, std::thread::hardware_concurrency());
	if (const char* env = std::getenv("FLOWGRAD_THREADS")) {
		try {
			long cap = std::stol(env);
			if (cap >= 1)
				n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
		} catch (const std::exception&) {
		}
	}
	return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& task)
{
	const std::size_t workers = std::min(worker_count(), n);
	if (workers <= 1) {
		for (std::size_t i = 0; i < n; ++i)
			task(i);
		return;
	}
	std::atomic<std::size_t> next{0};
	std::exception_ptr error;
	std::mutex error_mtx;
	std::vector<std::thread> pool;
	for (std::size_t w = 0; w < workers; ++w)
		pool.emplace_back([&] {
			for (std::size_t i; (i = next++) < n;) {
				try {
					task(i);
				} catch (...) {
					std::lock_guard lock(error_mtx);
					if (!error)
						error = std::current_exception();
					next = n;
				}
			}
		});
	for (auto& t : pool)
		t.join();
	if (error)
		std::rethrow_exception(error);
}

std::string serialize_rng(const Rng& rng)
{
	std::ostringstream os;
	os << rng;
	return os.str();
}

Rng deserialize_rng(const std::string& text)
{
	Rng rng;
	std::istringstream is(text);
	is >> rng;
	if (!is)
		throw std::runtime_error("corrupt generator state");
	return rng;
}

} // namespace flowgrad
