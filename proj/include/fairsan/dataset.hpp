#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fairsan/error.hpp"
#include "fairsan/vecmath.hpp"

namespace fairsan {

/// One labeled observation: features x, class label y, sensitive attribute z.
struct Sample {
  Vec x;
  int y = 0;
  int z = 0;
};

/// Immutable collection of samples with a declared label set Y and group set Z.
/// All mutation happens by building a new Dataset (append/subset), so sharing
/// across threads for reads is safe. Sample order is significant: defenses
/// report removals as index sets against this ordering.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<Sample> samples, std::size_t dim,
          std::vector<int> labels, std::vector<int> groups)
      : samples_(std::move(samples)),
        dim_(dim),
        labels_(std::move(labels)),
        groups_(std::move(groups)) {
    std::sort(labels_.begin(), labels_.end());
    labels_.erase(std::unique(labels_.begin(), labels_.end()), labels_.end());
    std::sort(groups_.begin(), groups_.end());
    groups_.erase(std::unique(groups_.begin(), groups_.end()), groups_.end());
    validate();
  }

  /// Builds a dataset inferring Y and Z from the samples present.
  static Dataset infer(std::vector<Sample> samples, std::size_t dim) {
    if (samples.empty())
      throw EmptyInputError("Dataset::infer: no samples to infer labels from");
    std::set<int> ys, zs;
    for (const Sample& s : samples) {
      ys.insert(s.y);
      zs.insert(s.z);
    }
    return Dataset(std::move(samples),
                   dim,
                   std::vector<int>(ys.begin(), ys.end()),
                   std::vector<int>(zs.begin(), zs.end()));
  }

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  std::size_t dim() const { return dim_; }
  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& sample(std::size_t i) const { return samples_[i]; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<int>& groups() const { return groups_; }

  bool has_label(int y) const {
    return std::find(labels_.begin(), labels_.end(), y) != labels_.end();
  }
  bool has_group(int z) const {
    return std::find(groups_.begin(), groups_.end(), z) != groups_.end();
  }

  /// New dataset with `extra` rows appended; existing rows are untouched.
  Dataset appended(const std::vector<Sample>& extra) const {
    std::vector<Sample> merged = samples_;
    merged.insert(merged.end(), extra.begin(), extra.end());
    return Dataset(std::move(merged), dim_, labels_, groups_);
  }

  /// New dataset keeping only the rows at `keep` (ascending), original order.
  Dataset subset(const std::vector<std::size_t>& keep) const {
    std::vector<Sample> out;
    out.reserve(keep.size());
    for (std::size_t i : keep) out.push_back(samples_[i]);
    return Dataset(std::move(out), dim_, labels_, groups_);
  }

 private:
  void validate() const {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const Sample& s = samples_[i];
      if (s.x.size() != dim_)
        throw DimensionError("sample " + std::to_string(i) + " has " +
                             std::to_string(s.x.size()) + " features, expected " +
                             std::to_string(dim_));
      if (!all_finite(s.x))
        throw DimensionError("sample " + std::to_string(i) +
                             " has non-finite feature values");
      if (!has_label(s.y))
        throw SchemaError("sample " + std::to_string(i) + " has undeclared label " +
                          std::to_string(s.y));
      if (!has_group(s.z))
        throw SchemaError("sample " + std::to_string(i) + " has undeclared group " +
                          std::to_string(s.z));
    }
  }

  std::vector<Sample> samples_;
  std::size_t dim_ = 0;
  std::vector<int> labels_;
  std::vector<int> groups_;
};

/// Index view of one (y, z) cell of a dataset. Indices are strictly ascending.
struct SubgroupView {
  int y = 0;
  int z = 0;
  std::vector<std::size_t> indices;
};

/// Splits a dataset into its nonempty (y, z) cells, ordered by label then
/// group. The views are disjoint and together cover every index.
inline std::vector<SubgroupView> subgroup_partition(const Dataset& dataset) {
  if (dataset.empty()) throw EmptyInputError("subgroup_partition: empty dataset");
  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Sample& s = dataset.sample(i);
    cells[{s.y, s.z}].push_back(i);
  }
  std::vector<SubgroupView> views;
  views.reserve(cells.size());
  for (auto& [key, idx] : cells)
    views.push_back(SubgroupView{key.first, key.second, std::move(idx)});
  return views;
}

/// Arithmetic mean of x over samples with label y.
inline Vec class_center(const Dataset& dataset, int y) {
  Vec sum(dataset.dim(), 0.0);
  std::size_t count = 0;
  for (const Sample& s : dataset.samples()) {
    if (s.y != y) continue;
    add_scaled(sum, s.x, 1.0);
    ++count;
  }
  if (count == 0)
    throw MissingClassError("class_center: no sample with label " + std::to_string(y));
  scale(sum, 1.0 / static_cast<double>(count));
  return sum;
}

/// Arithmetic mean of x over the (y, z) subgroup.
inline Vec subgroup_center(const Dataset& dataset, int y, int z) {
  Vec sum(dataset.dim(), 0.0);
  std::size_t count = 0;
  for (const Sample& s : dataset.samples()) {
    if (s.y != y || s.z != z) continue;
    add_scaled(sum, s.x, 1.0);
    ++count;
  }
  if (count == 0)
    throw MissingClassError("subgroup_center: no sample with label " +
                            std::to_string(y) + ", group " + std::to_string(z));
  scale(sum, 1.0 / static_cast<double>(count));
  return sum;
}

}  // namespace fairsan
