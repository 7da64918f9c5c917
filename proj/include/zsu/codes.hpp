// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <vector>

namespace zsu {

// Per-frame discrete unit indices emitted by a quantizer or clustering model.
struct CodeSequence {
  std::vector<std::int64_t> indices;  // each in [0, codebook_size)
  std::int64_t reduction_factor = 1;  // input frames per emitted code
  std::int64_t codebook_size = 0;
};

}  // namespace zsu
