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

#include "ice/folds.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

namespace ice {

std::vector<FoldSpec> make_folds(std::span<const std::string> ordering, int n_folds, int window) {
  const auto n = static_cast<std::int64_t>(ordering.size());
  if (window < 1) throw std::invalid_argument("make_folds: window must be >= 1");
  if (n_folds < 1) throw std::invalid_argument("make_folds: n_folds must be >= 1");
  if (n < 2 * static_cast<std::int64_t>(window)) {
    throw std::invalid_argument("make_folds: need at least 2*window patients, have " +
                                std::to_string(n));
  }
  std::vector<FoldSpec> folds;
  folds.reserve(static_cast<std::size_t>(n_folds));
  for (int r = 0; r < n_folds; ++r) {
    FoldSpec f;
    f.fold_index = r;
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    const std::int64_t base = static_cast<std::int64_t>(window) * r;
    for (int j = 0; j < window; ++j) {
      const auto ti = static_cast<std::size_t>((base + j) % n);
      const auto vi = static_cast<std::size_t>((base + window + j) % n);
      f.test_ids.push_back(ordering[ti]);
      f.val_ids.push_back(ordering[vi]);
      used[ti] = used[vi] = 1;
    }
    for (std::int64_t i = 0; i < n; ++i) {
      if (!used[static_cast<std::size_t>(i)]) f.train_ids.push_back(ordering[static_cast<std::size_t>(i)]);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

bool check_disjoint(const FoldSpec& fold, std::span<const std::string> all_ids) {
  std::multiset<std::string> seen;
  for (const auto* part : {&fold.test_ids, &fold.val_ids, &fold.train_ids}) {
    seen.insert(part->begin(), part->end());
  }
  std::multiset<std::string> expected(all_ids.begin(), all_ids.end());
  return seen == expected && std::set<std::string>(all_ids.begin(), all_ids.end()).size() == all_ids.size();
}

std::string folds_to_json(std::span<const FoldSpec> folds) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& f : folds) {
    doc.push_back({{"fold", f.fold_index}, {"test", f.test_ids}, {"val", f.val_ids}, {"train", f.train_ids}});
  }
  return doc.dump(2) + "\n";
}

}  // namespace ice
