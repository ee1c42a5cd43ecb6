#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flim/tensor.hpp"

namespace flim {

struct CatalogEntry {
  std::filesystem::path path;
  Label label = 0;
  // Stable identifier: the path relative to the dataset root with separators
  // replaced by "__" and the extension removed.
  std::string id;
};

class DatasetCatalog {
 public:
  DatasetCatalog() = default;
  DatasetCatalog(std::vector<CatalogEntry> entries, std::vector<std::string> class_names);

  // <root>/<class>/<image>; classes sorted lexicographically, numbered 1..c.
  static DatasetCatalog from_directory(const std::filesystem::path& root);
  // "path,label" rows; relative paths resolve against the CSV's directory.
  static DatasetCatalog from_csv(const std::filesystem::path& csv);

  const std::vector<CatalogEntry>& entries() const { return entries_; }
  const CatalogEntry& entry(std::size_t i) const { return entries_.at(i); }
  std::size_t size() const { return entries_.size(); }
  int class_count() const { return static_cast<int>(class_names_.size()); }
  const std::vector<std::string>& class_names() const { return class_names_; }

  std::vector<std::size_t> indices_of_class(Label label) const;
  // Throws NotFound.
  std::size_t index_of_id(const std::string& id) const;

 private:
  std::vector<CatalogEntry> entries_;
  std::vector<std::string> class_names_;
};

struct SplitSpec {
  double train_fraction = 0.30;
  std::uint64_t seed = 0;
  std::vector<std::size_t> z1;  // training indices, ascending
  std::vector<std::size_t> z2;  // testing indices, ascending
  std::vector<std::size_t> zs;  // selected for annotation, subset of z1
};

// Per class, round(fraction * n) samples go to Z1. Classes where that product
// is exactly half-integral split evenly between rounding up and down (odd one
// out rounds down), chosen by a seeded permutation. Every class keeps at least
// one sample on each side.
SplitSpec stratified_split(const DatasetCatalog& catalog, double train_fraction, std::uint64_t seed);

// Throws Validation if the split does not partition the catalog or zs escapes z1.
void validate_split(const SplitSpec& split, std::size_t catalog_size);

}  // namespace flim
