/* Copyright 2026 The ffwd Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <random>

#include "ffwd/tensor.hpp"

namespace ffwd {

// Mixes a base seed with a stream id so per-layer / per-purpose generators
// are independent and reproducible.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

void fill_normal(Matrix& m, std::mt19937_64& rng, float stddev);
Matrix random_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng, float stddev);
Matrix random_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng, float lo, float hi);

}  // namespace ffwd
