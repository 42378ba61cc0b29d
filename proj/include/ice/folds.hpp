// Copyright 2026 The ICE Localizer Authors
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

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ice {

struct FoldSpec {
  int fold_index = 0;
  std::vector<std::string> test_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> train_ids;

  bool operator==(const FoldSpec&) const = default;
};

/// Circular sliding-window split over a fixed patient ordering. Fold r places ordering
/// positions [w*r, w*r + w) (mod N) in test, the next w positions in validation and the
/// rest, in ordering order, in training.
std::vector<FoldSpec> make_folds(std::span<const std::string> ordering, int n_folds = 10,
                                 int window = 4);

/// True iff the three subsets are pairwise disjoint and together cover `all_ids` exactly.
bool check_disjoint(const FoldSpec& fold, std::span<const std::string> all_ids);

/// JSON audit table: [{"fold": r, "test": [...], "val": [...], "train": [...]}, ...].
std::string folds_to_json(std::span<const FoldSpec> folds);

}  // namespace ice
