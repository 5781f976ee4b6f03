/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>

namespace uniformer::detail {

// c[m,n] += sum_k a[m,k] * b[k,n]; a and b addressed through row/column
// strides so transposed operands need no copy. c is dense row-major M x N.
inline void gemm_acc(std::size_t M, std::size_t K, std::size_t N, const double* a,
                     std::size_t a_rs, std::size_t a_cs, const double* b, std::size_t b_rs,
                     std::size_t b_cs, double* c) {
  for (std::size_t m = 0; m < M; ++m) {
    double* crow = c + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[m * a_rs + k * a_cs];
      if (av == 0.0) continue;
      const double* bk = b + k * b_rs;
      if (b_cs == 1) {
        for (std::size_t n = 0; n < N; ++n) crow[n] += av * bk[n];
      } else {
        for (std::size_t n = 0; n < N; ++n) crow[n] += av * bk[n * b_cs];
      }
    }
  }
}

}  // namespace uniformer::detail
