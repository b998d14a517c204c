#pragma once

#include "fieldguide/numeric.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace fieldguide {

/// Attribute dimensions and their partition into annotation groups.
class AttributeSchema {
 public:
  AttributeSchema() = default;

  /// Validates that `groups` partitions {0..d-1} into non-empty sets.
  /// Empty name vectors get generated labels.
  AttributeSchema(std::size_t d, std::vector<std::vector<std::size_t>> groups,
                  std::vector<std::string> attribute_names = {},
                  std::vector<std::string> group_names = {});

  std::size_t dim() const noexcept { return d_; }
  std::size_t group_count() const noexcept { return groups_.size(); }
  const std::vector<std::size_t>& members(std::size_t group) const;
  std::size_t group_of(std::size_t attribute) const { return group_of_.at(attribute); }
  const std::vector<std::vector<std::size_t>>& groups() const noexcept { return groups_; }
  const std::string& attribute_name(std::size_t j) const { return attribute_names_.at(j); }
  const std::string& group_name(std::size_t g) const { return group_names_.at(g); }
  const std::vector<std::string>& attribute_names() const noexcept { return attribute_names_; }
  const std::vector<std::string>& group_names() const noexcept { return group_names_; }

  bool operator==(const AttributeSchema&) const = default;

 private:
  std::size_t d_ = 0;
  std::vector<std::vector<std::size_t>> groups_;
  std::vector<std::string> attribute_names_;
  std::vector<std::string> group_names_;
  std::vector<std::size_t> group_of_;
};

struct ClassRecord {
  std::string id;
  std::string name;
  std::string parent;
  Vector attributes;

  bool operator==(const ClassRecord&) const;
};

/// Single-level class taxonomy: class id -> supercategory.
struct Taxonomy {
  std::map<std::string, std::string> parent;

  const std::string& parent_of(const std::string& class_id) const;
  bool operator==(const Taxonomy&) const = default;
};

/// Image feature table. Columns of `values` are images.
struct FeatureTable {
  std::vector<std::string> image_ids;
  std::vector<std::string> class_ids;
  Matrix values;

  std::size_t rows() const noexcept { return image_ids.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(values.rows()); }
  bool operator==(const FeatureTable&) const;
};

/// Per-attribute (min, max) measured over base classes before scaling.
struct NormStats {
  Vector min;
  Vector max;

  bool operator==(const NormStats&) const;
};

class Dataset {
 public:
  AttributeSchema schema;
  std::vector<ClassRecord> classes;
  std::vector<std::string> base;
  std::vector<std::string> novel;
  FeatureTable features;
  std::map<std::string, std::string> similar;
  Taxonomy taxonomy;
  std::optional<NormStats> norm_stats;

  /// Rebuilds lookup tables and checks every cross-file invariant.
  /// Throws Error(parse) naming the violated invariant.
  void validate();

  bool has_class(const std::string& id) const { return index_.count(id) != 0; }
  bool is_base(const std::string& id) const;
  bool is_novel(const std::string& id) const;
  const ClassRecord& record(const std::string& id) const;
  const Vector& attributes(const std::string& id) const { return record(id).attributes; }
  std::size_t feature_dim() const noexcept { return features.dim(); }
  std::vector<std::size_t> feature_rows(const std::string& class_id) const;

  bool operator==(const Dataset& other) const;

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::string, int> split_;  // 0 base, 1 novel
};

/// Reads attributes.csv, groups.json, taxonomy.json, splits.json,
/// similar.json and features.csv from `root`.
Dataset load_dataset(const std::filesystem::path& root);

/// Writes the same six files in canonical order and number formatting.
void save_dataset(const Dataset& ds, const std::filesystem::path& root);

/// Min-max scaling per attribute with statistics from base classes only.
/// Constant attributes map to 0. Novel values are not clamped.
Dataset normalize_attributes(const Dataset& ds);

/// Base classes sharing z's supercategory, z included, sorted by id.
std::vector<std::string> siblings(const Taxonomy& tax, const std::vector<std::string>& base,
                                  const std::string& z);

/// Copy of `ds` whose attribute vectors keep only the members of `groups`
/// (kept in ascending group order).
Dataset restrict_to_groups(const Dataset& ds, std::vector<std::size_t> groups);

/// Rows of the feature table used for training (base classes only) and
/// for evaluation. Every fifth image of a base class (per class, file
/// order) is held out; all novel-class images are evaluation rows.
struct FeatureSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
FeatureSplit split_features(const Dataset& ds);

struct SynthConfig {
  std::size_t n_super = 5;
  std::size_t per_super = 8;
  std::size_t n_novel = 10;
  std::size_t d = 48;
  std::size_t groups = 24;
  std::size_t m = 64;
  std::size_t local_groups_per_super = 6;
  std::size_t images_per_class = 30;
  double feature_noise = 0.05;
  double feature_scale = 0.3;  // amplitude of the attribute-to-feature map
  double super_spread = 0.1;   // 1: independent prototypes, 0: all equal
  std::uint64_t seed = 1;

  void validate() const;
};

/// Desk-scale dataset with taxonomy structure: siblings share a prototype
/// and differ only in their supercategory's local groups.
Dataset generate_synthetic(const SynthConfig& cfg);

/// The local groups drawn for each supercategory by generate_synthetic,
/// keyed by supercategory name.
std::map<std::string, std::vector<std::size_t>> synthetic_local_groups(const SynthConfig& cfg);

}  // namespace fieldguide
