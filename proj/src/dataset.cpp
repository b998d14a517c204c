#include "fieldguide/dataset.hpp"

#include "fieldguide/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace fieldguide {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::budget_exhausted: return "budget_exhausted";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::divergence: return "divergence";
  }
  return "unknown";
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// AttributeSchema

AttributeSchema::AttributeSchema(std::size_t d, std::vector<std::vector<std::size_t>> groups,
                                 std::vector<std::string> attribute_names,
                                 std::vector<std::string> group_names)
    : d_(d), groups_(std::move(groups)), attribute_names_(std::move(attribute_names)),
      group_names_(std::move(group_names)) {
  if (d_ == 0) throw Error(ErrorCode::parse, "group partition violation: attribute count is 0");
  if (groups_.empty() || groups_.size() > d_)
    throw Error(ErrorCode::parse, "group partition violation: need 1 <= G <= d groups");
  constexpr std::size_t unassigned = static_cast<std::size_t>(-1);
  group_of_.assign(d_, unassigned);
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    if (groups_[g].empty())
      throw Error(ErrorCode::parse, "group partition violation: group " + std::to_string(g) + " is empty");
    for (std::size_t j : groups_[g]) {
      if (j >= d_)
        throw Error(ErrorCode::parse, "group partition violation: attribute index " + std::to_string(j) +
                                          " out of range in group " + std::to_string(g));
      if (group_of_[j] != unassigned)
        throw Error(ErrorCode::parse, "group partition violation: attribute " + std::to_string(j) +
                                          " appears in more than one group");
      group_of_[j] = g;
    }
  }
  for (std::size_t j = 0; j < d_; ++j)
    if (group_of_[j] == unassigned)
      throw Error(ErrorCode::parse,
                  "group partition violation: attribute " + std::to_string(j) + " is in no group");

  if (attribute_names_.empty())
    for (std::size_t j = 0; j < d_; ++j) attribute_names_.push_back("a_" + std::to_string(j));
  if (group_names_.empty())
    for (std::size_t g = 0; g < groups_.size(); ++g) group_names_.push_back("group_" + std::to_string(g));
  if (attribute_names_.size() != d_ || group_names_.size() != groups_.size())
    throw Error(ErrorCode::parse, "schema name count does not match dimensions");
}

const std::vector<std::size_t>& AttributeSchema::members(std::size_t group) const {
  if (group >= groups_.size())
    throw Error(ErrorCode::invalid_argument, "unknown group id " + std::to_string(group));
  return groups_[group];
}

// ---------------------------------------------------------------------------
// Equality

bool ClassRecord::operator==(const ClassRecord& o) const {
  return id == o.id && name == o.name && parent == o.parent && exactly_equal(attributes, o.attributes);
}

bool FeatureTable::operator==(const FeatureTable& o) const {
  return image_ids == o.image_ids && class_ids == o.class_ids && exactly_equal(values, o.values);
}

bool NormStats::operator==(const NormStats& o) const {
  return exactly_equal(min, o.min) && exactly_equal(max, o.max);
}

bool Dataset::operator==(const Dataset& o) const {
  return schema == o.schema && classes == o.classes && base == o.base && novel == o.novel &&
         features == o.features && similar == o.similar && taxonomy == o.taxonomy &&
         norm_stats == o.norm_stats;
}

const std::string& Taxonomy::parent_of(const std::string& class_id) const {
  auto it = parent.find(class_id);
  if (it == parent.end()) throw Error(ErrorCode::not_found, "unknown class id '" + class_id + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Dataset

void Dataset::validate() {
  index_.clear();
  split_.clear();
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& c = classes[i];
    if (!index_.emplace(c.id, i).second) throw Error(ErrorCode::parse, "duplicate class id '" + c.id + "'");
    if (static_cast<std::size_t>(c.attributes.size()) != schema.dim())
      throw Error(ErrorCode::parse, "class '" + c.id + "' has " + std::to_string(c.attributes.size()) +
                                        " attributes, expected " + std::to_string(schema.dim()));
    if (!c.attributes.allFinite()) throw Error(ErrorCode::parse, "class '" + c.id + "' has non-finite attributes");
  }
  for (const auto& id : base) {
    if (!has_class(id)) throw Error(ErrorCode::parse, "split lists unknown class '" + id + "'");
    if (!split_.emplace(id, 0).second) throw Error(ErrorCode::parse, "split overlap: '" + id + "' listed twice");
  }
  for (const auto& id : novel) {
    if (!has_class(id)) throw Error(ErrorCode::parse, "split lists unknown class '" + id + "'");
    if (!split_.emplace(id, 1).second) throw Error(ErrorCode::parse, "split overlap: '" + id + "'");
  }
  for (const auto& c : classes)
    if (!split_.count(c.id)) throw Error(ErrorCode::parse, "class '" + c.id + "' is in no split");
  if (base.empty()) throw Error(ErrorCode::parse, "no base classes");

  for (const auto& [n, b] : similar) {
    if (!is_novel(n)) throw Error(ErrorCode::parse, "similar map key '" + n + "' is not a novel class");
    if (!is_base(b)) throw Error(ErrorCode::parse, "similar class not in base: '" + b + "' (for '" + n + "')");
  }

  for (const auto& c : classes) {
    auto it = taxonomy.parent.find(c.id);
    if (it == taxonomy.parent.end()) throw Error(ErrorCode::parse, "taxonomy has no parent for '" + c.id + "'");
    if (!c.parent.empty() && c.parent != it->second)
      throw Error(ErrorCode::parse, "parent of '" + c.id + "' disagrees between attributes.csv and taxonomy.json");
  }
  std::set<std::string> supers_with_base;
  for (const auto& id : base) supers_with_base.insert(taxonomy.parent.at(id));
  for (const auto& id : novel)
    if (!supers_with_base.count(taxonomy.parent.at(id)))
      throw Error(ErrorCode::parse, "supercategory '" + taxonomy.parent.at(id) + "' has no base class");

  if (features.class_ids.size() != features.image_ids.size() ||
      static_cast<std::size_t>(features.values.cols()) != features.image_ids.size())
    throw Error(ErrorCode::parse, "feature table is ragged");
  std::map<std::string, std::size_t> counts;
  for (const auto& cid : features.class_ids) {
    if (!has_class(cid)) throw Error(ErrorCode::parse, "feature row for unknown class '" + cid + "'");
    ++counts[cid];
  }
  for (const auto& id : base)
    if (!counts.count(id)) throw Error(ErrorCode::parse, "base class '" + id + "' has no feature rows");
}

bool Dataset::is_base(const std::string& id) const {
  auto it = split_.find(id);
  return it != split_.end() && it->second == 0;
}

bool Dataset::is_novel(const std::string& id) const {
  auto it = split_.find(id);
  return it != split_.end() && it->second == 1;
}

const ClassRecord& Dataset::record(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error(ErrorCode::not_found, "unknown class id '" + id + "'");
  return classes[it->second];
}

std::vector<std::size_t> Dataset::feature_rows(const std::string& class_id) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < features.class_ids.size(); ++i)
    if (features.class_ids[i] == class_id) rows.push_back(i);
  return rows;
}

// ---------------------------------------------------------------------------
// File IO

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

double parse_number(const std::string& s, const fs::path& file, std::size_t line) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v))
    throw Error(ErrorCode::parse, file.filename().string() + ":" + std::to_string(line) +
                                      ": invalid number '" + s + "'");
  return v;
}

std::ifstream open_input(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "missing file " + p.string());
  return in;
}

json read_json(const fs::path& p) {
  auto in = open_input(p);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, p.filename().string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorCode::io, "write failed for " + p.string());
}

void check_header(const std::vector<std::string>& header, const std::vector<std::string>& fixed,
                  const std::string& prefix, const fs::path& file) {
  if (header.size() < fixed.size())
    throw Error(ErrorCode::parse, file.filename().string() + ":1: header too short");
  for (std::size_t i = 0; i < fixed.size(); ++i)
    if (header[i] != fixed[i])
      throw Error(ErrorCode::parse, file.filename().string() + ":1: expected column '" + fixed[i] + "'");
  for (std::size_t i = fixed.size(); i < header.size(); ++i)
    if (header[i] != prefix + std::to_string(i - fixed.size()))
      throw Error(ErrorCode::parse, file.filename().string() + ":1: expected column '" + prefix +
                                        std::to_string(i - fixed.size()) + "'");
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
  Dataset ds;

  // groups.json
  {
    const auto path = root / "groups.json";
    json j = read_json(path);
    if (!j.is_array()) throw Error(ErrorCode::parse, "groups.json: expected an array");
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::string> names;
    for (const auto& g : j) {
      try {
        names.push_back(g.at("name").get<std::string>());
        groups.push_back(g.at("members").get<std::vector<std::size_t>>());
      } catch (const json::exception& e) {
        throw Error(ErrorCode::parse, "groups.json: group " + std::to_string(groups.size()) + ": " + e.what());
      }
    }
    std::size_t d = 0;
    for (const auto& g : groups)
      for (auto i : g) d = std::max(d, i + 1);
    // d is confirmed against the attributes.csv header below.
    ds.schema = AttributeSchema(d, groups, {}, names);
  }

  // attributes.csv
  {
    const auto path = root / "attributes.csv";
    auto in = open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::parse, "attributes.csv:1: empty file");
    auto header = split_csv_line(line);
    check_header(header, {"class_id", "name", "parent"}, "a_", path);
    const std::size_t d = header.size() - 3;
    if (d != ds.schema.dim())
      throw Error(ErrorCode::parse, "group partition violation: attributes.csv has " + std::to_string(d) +
                                        " attributes but groups.json covers " + std::to_string(ds.schema.dim()));
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line == "\r") continue;
      auto cells = split_csv_line(line);
      if (cells.size() != header.size())
        throw Error(ErrorCode::parse, "attributes.csv:" + std::to_string(lineno) + ": expected " +
                                          std::to_string(header.size()) + " fields, got " +
                                          std::to_string(cells.size()));
      ClassRecord rec{cells[0], cells[1], cells[2], Vector(static_cast<Eigen::Index>(d))};
      for (std::size_t j = 0; j < d; ++j) rec.attributes[static_cast<Eigen::Index>(j)] = parse_number(cells[3 + j], path, lineno);
      ds.classes.push_back(std::move(rec));
    }
  }

  // taxonomy.json
  {
    json j = read_json(root / "taxonomy.json");
    try {
      ds.taxonomy.parent = j.get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse, std::string("taxonomy.json: ") + e.what());
    }
  }

  // splits.json
  {
    json j = read_json(root / "splits.json");
    try {
      ds.base = j.at("base").get<std::vector<std::string>>();
      ds.novel = j.at("novel").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse, std::string("splits.json: ") + e.what());
    }
    std::set<std::string> b(ds.base.begin(), ds.base.end());
    for (const auto& n : ds.novel)
      if (b.count(n)) throw Error(ErrorCode::parse, "splits.json: split overlap: '" + n + "' is base and novel");
  }

  // similar.json
  {
    json j = read_json(root / "similar.json");
    try {
      ds.similar = j.get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse, std::string("similar.json: ") + e.what());
    }
  }

  // features.csv
  {
    const auto path = root / "features.csv";
    auto in = open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::parse, "features.csv:1: empty file");
    auto header = split_csv_line(line);
    check_header(header, {"image_id", "class_id"}, "f_", path);
    const std::size_t m = header.size() - 2;
    std::vector<double> flat;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line == "\r") continue;
      auto cells = split_csv_line(line);
      if (cells.size() != header.size())
        throw Error(ErrorCode::parse, "features.csv:" + std::to_string(lineno) + ": ragged feature row (" +
                                          std::to_string(cells.size() - std::min<std::size_t>(2, cells.size())) +
                                          " values, expected " + std::to_string(m) + ")");
      ds.features.image_ids.push_back(cells[0]);
      ds.features.class_ids.push_back(cells[1]);
      for (std::size_t k = 0; k < m; ++k) flat.push_back(parse_number(cells[2 + k], path, lineno));
    }
    ds.features.values = Eigen::Map<Matrix>(flat.data(), static_cast<Eigen::Index>(m),
                                            static_cast<Eigen::Index>(ds.features.image_ids.size()));
  }

  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& root) {
  fs::create_directories(root);
  const std::size_t d = ds.schema.dim();

  {
    std::ostringstream out;
    out << "class_id,name,parent";
    for (std::size_t j = 0; j < d; ++j) out << ",a_" << j;
    out << '\n';
    for (const auto& c : ds.classes) {
      out << c.id << ',' << c.name << ',' << ds.taxonomy.parent_of(c.id);
      for (Eigen::Index j = 0; j < c.attributes.size(); ++j) out << ',' << format_double(c.attributes[j]);
      out << '\n';
    }
    write_text(root / "attributes.csv", out.str());
  }
  {
    json j = json::array();
    for (std::size_t g = 0; g < ds.schema.group_count(); ++g)
      j.push_back(json{{"name", ds.schema.group_name(g)}, {"members", ds.schema.members(g)}});
    write_text(root / "groups.json", j.dump(2) + "\n");
  }
  write_text(root / "taxonomy.json", json(ds.taxonomy.parent).dump(2) + "\n");
  write_text(root / "splits.json", json{{"base", ds.base}, {"novel", ds.novel}}.dump(2) + "\n");
  write_text(root / "similar.json", json(ds.similar).dump(2) + "\n");
  {
    std::ostringstream out;
    const auto m = ds.features.values.rows();
    out << "image_id,class_id";
    for (Eigen::Index k = 0; k < m; ++k) out << ",f_" << k;
    out << '\n';
    for (std::size_t i = 0; i < ds.features.rows(); ++i) {
      out << ds.features.image_ids[i] << ',' << ds.features.class_ids[i];
      for (Eigen::Index k = 0; k < m; ++k)
        out << ',' << format_double(ds.features.values(k, static_cast<Eigen::Index>(i)));
      out << '\n';
    }
    write_text(root / "features.csv", out.str());
  }
}

// ---------------------------------------------------------------------------
// Transformations

Dataset normalize_attributes(const Dataset& ds) {
  const auto d = static_cast<Eigen::Index>(ds.schema.dim());
  Vector lo = Vector::Constant(d, std::numeric_limits<double>::infinity());
  Vector hi = Vector::Constant(d, -std::numeric_limits<double>::infinity());
  for (const auto& id : ds.base) {
    const auto& a = ds.attributes(id);
    lo = lo.cwiseMin(a);
    hi = hi.cwiseMax(a);
  }
  Dataset out = ds;
  for (auto& c : out.classes) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double range = hi[j] - lo[j];
      c.attributes[j] = range > 0.0 ? (c.attributes[j] - lo[j]) / range : 0.0;
    }
  }
  // Re-normalizing an already scaled dataset is the identity map, so the
  // original raw-scale statistics stay authoritative.
  if (!out.norm_stats) out.norm_stats = NormStats{lo, hi};
  out.validate();
  return out;
}

std::vector<std::string> siblings(const Taxonomy& tax, const std::vector<std::string>& base,
                                  const std::string& z) {
  if (std::find(base.begin(), base.end(), z) == base.end())
    throw Error(ErrorCode::not_found, "unknown base class id '" + z + "'");
  const auto& p = tax.parent_of(z);
  std::vector<std::string> out;
  for (const auto& b : base) {
    auto it = tax.parent.find(b);
    if (it != tax.parent.end() && it->second == p) out.push_back(b);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset restrict_to_groups(const Dataset& ds, std::vector<std::size_t> groups) {
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  if (groups.empty()) throw Error(ErrorCode::invalid_argument, "at least one group must be kept");
  std::vector<std::size_t> keep;
  std::vector<std::vector<std::size_t>> new_groups;
  std::vector<std::string> attr_names, group_names;
  for (std::size_t g : groups) {
    std::vector<std::size_t> members;
    for (std::size_t j : ds.schema.members(g)) {
      members.push_back(keep.size());
      keep.push_back(j);
      attr_names.push_back(ds.schema.attribute_name(j));
    }
    new_groups.push_back(std::move(members));
    group_names.push_back(ds.schema.group_name(g));
  }
  Dataset out = ds;
  out.schema = AttributeSchema(keep.size(), std::move(new_groups), std::move(attr_names), std::move(group_names));
  const auto pick = [&](const Vector& v) {
    Vector r(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) r[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(keep[k])];
    return r;
  };
  for (auto& c : out.classes) c.attributes = pick(c.attributes);
  if (out.norm_stats) out.norm_stats = NormStats{pick(out.norm_stats->min), pick(out.norm_stats->max)};
  out.validate();
  return out;
}

FeatureSplit split_features(const Dataset& ds) {
  FeatureSplit split;
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < ds.features.rows(); ++i) {
    const auto& cid = ds.features.class_ids[i];
    if (ds.is_novel(cid)) {
      split.test.push_back(i);
      continue;
    }
    const std::size_t k = seen[cid]++;
    (k % 5 == 4 ? split.test : split.train).push_back(i);
  }
  return split;
}

}  // namespace fieldguide
