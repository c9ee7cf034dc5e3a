#pragma once

#include <cstddef>
#include <functional>
#include <stop_token>

namespace forensic {

// Bounded-parallelism executor handed to pipelines by their owner (the CLI or
// a test). Indices are claimed in increasing order, so width 1 is sequential.
class TaskPool {
public:
    explicit TaskPool(std::size_t width) : width_(width == 0 ? 1 : width) {}

    std::size_t width() const { return width_; }

    // Calls fn(i) for i in [0, n). Once `stop` is requested no further index
    // is claimed. The first exception thrown by fn is rethrown after every
    // worker has finished.
    void run(std::size_t n, const std::function<void(std::size_t)>& fn, std::stop_token stop = {}) const;

private:
    std::size_t width_;
};

}  // namespace forensic
