/*
 * Copyright 2026 The FedMR Simulator Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Fixed-size fan-out over an index range. Results are written by index, so
// output never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace fedmr {

namespace detail {

struct ParallelJob {
  std::size_t n = 0;
  const std::function<void(std::size_t)>* fn = nullptr;
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_index = 0;
  std::exception_ptr failure;

  static void work(ParallelJob* job) {
    while (true) {
      const std::size_t i = job->next.fetch_add(1);
      if (i >= job->n) return;
      try {
        (*job->fn)(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(job->mu);
        if (i < job->failed_index) {
          job->failed_index = i;
          job->failure = std::current_exception();
        }
      }
    }
  }
};

}  // namespace detail

// Calls fn(i) for every i in [0, n) on up to `workers` threads. If any call
// throws, the exception from the lowest failing index is rethrown after all
// threads join.
inline void parallel_for(std::size_t n, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  detail::ParallelJob job;
  job.n = n;
  job.fn = &fn;
  job.failed_index = n;
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t)
    threads.emplace_back(&detail::ParallelJob::work, &job);
  detail::ParallelJob::work(&job);
  for (auto& t : threads) t.join();
  if (job.failure) std::rethrow_exception(job.failure);
}

}  // namespace fedmr
