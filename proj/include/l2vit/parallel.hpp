// Copyright 2026 The l2vit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>

namespace l2vit {

/// Worker count used by parallel loops. Every parallel loop in the library
/// assigns each output element to exactly one iteration and keeps the
/// per-element reduction order fixed, so results do not depend on this value.
void set_num_threads(int n);
int num_threads();

/// Restores the previous thread count on scope exit.
class ThreadCountGuard {
 public:
  explicit ThreadCountGuard(int n) : saved_(num_threads()) { set_num_threads(n); }
  ~ThreadCountGuard() { set_num_threads(saved_); }
  ThreadCountGuard(const ThreadCountGuard&) = delete;
  ThreadCountGuard& operator=(const ThreadCountGuard&) = delete;

 private:
  int saved_;
};

template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const auto n = static_cast<long long>(count);
#if defined(_OPENMP)
  if (num_threads() > 1 && count > 1) {
#pragma omp parallel for schedule(static) num_threads(num_threads())
    for (long long i = 0; i < n; ++i) fn(static_cast<std::size_t>(i));
    return;
  }
#endif
  for (long long i = 0; i < n; ++i) fn(static_cast<std::size_t>(i));
}

}  // namespace l2vit
