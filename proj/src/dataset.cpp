#include "flim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "flim/error.hpp"
#include "flim/image_io.hpp"
#include "flim/rng.hpp"

namespace flim {
namespace fs = std::filesystem;

namespace {

std::string make_id(const fs::path& relative) {
  auto rel = relative;
  rel.replace_extension();
  std::string id;
  for (const auto& part : rel) {
    if (!id.empty()) id += "__";
    id += part.string();
  }
  for (char& ch : id)
    if (ch == ' ' || ch == '\t' || ch == '/' || ch == '\\' || ch == '?' || ch == '#' || ch == '&' || ch == '%') ch = '_';
  return id;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

DatasetCatalog::DatasetCatalog(std::vector<CatalogEntry> entries, std::vector<std::string> class_names)
    : entries_(std::move(entries)), class_names_(std::move(class_names)) {
  const int c = class_count();
  require(c >= 1, ErrorCode::Validation, "catalog has no classes");
  std::vector<std::size_t> counts(static_cast<std::size_t>(c), 0);
  std::set<std::string> ids;
  for (const auto& e : entries_) {
    require(e.label >= 1 && e.label <= c, ErrorCode::Validation,
            "label " + std::to_string(e.label) + " of " + e.path.string() + " outside 1.." + std::to_string(c));
    ++counts[static_cast<std::size_t>(e.label - 1)];
    require(ids.insert(e.id).second, ErrorCode::Validation, "duplicate image id " + e.id);
  }
  for (int l = 1; l <= c; ++l)
    require(counts[static_cast<std::size_t>(l - 1)] >= 1, ErrorCode::Validation,
            "class " + std::to_string(l) + " (" + class_names_[static_cast<std::size_t>(l - 1)] + ") has no images");
}

DatasetCatalog DatasetCatalog::from_directory(const fs::path& root) {
  if (!fs::is_directory(root)) fail(ErrorCode::Io, "dataset root is not a directory: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& item : fs::directory_iterator(root))
    if (item.is_directory()) class_dirs.push_back(item.path());
  std::sort(class_dirs.begin(), class_dirs.end());

  std::vector<CatalogEntry> entries;
  std::vector<std::string> names;
  for (std::size_t ci = 0; ci < class_dirs.size(); ++ci) {
    std::vector<fs::path> files;
    for (const auto& item : fs::recursive_directory_iterator(class_dirs[ci]))
      if (item.is_regular_file() && has_image_extension(item.path())) files.push_back(item.path());
    std::sort(files.begin(), files.end());
    names.push_back(class_dirs[ci].filename().string());
    for (auto& f : files) {
      const auto id = make_id(fs::relative(f, root));
      entries.push_back({std::move(f), static_cast<Label>(ci + 1), id});
    }
  }
  return DatasetCatalog(std::move(entries), std::move(names));
}

DatasetCatalog DatasetCatalog::from_csv(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) fail(ErrorCode::Io, "cannot open catalog " + csv.string());
  const auto base = csv.parent_path();
  std::vector<CatalogEntry> entries;
  int max_label = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) fail(ErrorCode::Format, csv.string() + ":" + std::to_string(line_no) + ": expected path,label");
    const auto path_text = trim(line.substr(0, comma));
    const auto label_text = trim(line.substr(comma + 1));
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(label_text, &used);
      if (used != label_text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      if (entries.empty() && line_no == 1) continue;  // header row
      fail(ErrorCode::Format, csv.string() + ":" + std::to_string(line_no) + ": bad label '" + label_text + "'");
    }
    fs::path path = path_text;
    const fs::path relative = path.is_absolute() ? path.filename() : path;
    if (path.is_relative()) path = base / path;
    entries.push_back({path, label, make_id(relative)});
    max_label = std::max(max_label, label);
  }
  std::vector<std::string> names;
  for (int l = 1; l <= max_label; ++l) names.push_back("class" + std::to_string(l));
  return DatasetCatalog(std::move(entries), std::move(names));
}

std::vector<std::size_t> DatasetCatalog::indices_of_class(Label label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].label == label) out.push_back(i);
  return out;
}

std::size_t DatasetCatalog::index_of_id(const std::string& id) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].id == id) return i;
  fail(ErrorCode::NotFound, "unknown image id " + id);
}

SplitSpec stratified_split(const DatasetCatalog& catalog, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::Argument, "train fraction must lie in (0, 1)");
  const int c = catalog.class_count();
  Rng rng(derive_seed(seed, "split"));

  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(c));
  std::vector<std::size_t> take(static_cast<std::size_t>(c));
  std::vector<std::size_t> tied;
  for (int l = 1; l <= c; ++l) {
    auto& idx = members[static_cast<std::size_t>(l - 1)];
    idx = catalog.indices_of_class(l);
    if (idx.size() < 2)
      fail(ErrorCode::Stratification, "class " + std::to_string(l) + " (" + catalog.class_names()[l - 1] +
                                          ") has " + std::to_string(idx.size()) + " sample(s); stratification needs 2");
    const double exact = train_fraction * static_cast<double>(idx.size());
    const double base = std::floor(exact);
    const double frac = exact - base;
    if (std::abs(frac - 0.5) < 1e-9) {
      tied.push_back(static_cast<std::size_t>(l - 1));
      take[static_cast<std::size_t>(l - 1)] = static_cast<std::size_t>(base);
    } else {
      take[static_cast<std::size_t>(l - 1)] = static_cast<std::size_t>(frac > 0.5 ? base + 1 : base);
    }
  }
  rng.shuffle(tied.begin(), tied.end());
  for (std::size_t i = 0; i < tied.size() / 2; ++i) ++take[tied[i]];

  SplitSpec split;
  split.train_fraction = train_fraction;
  split.seed = seed;
  for (std::size_t ci = 0; ci < members.size(); ++ci) {
    auto& idx = members[ci];
    const std::size_t n = std::clamp<std::size_t>(take[ci], 1, idx.size() - 1);
    rng.shuffle(idx.begin(), idx.end());
    split.z1.insert(split.z1.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
    split.z2.insert(split.z2.end(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end());
  }
  std::sort(split.z1.begin(), split.z1.end());
  std::sort(split.z2.begin(), split.z2.end());
  return split;
}

void validate_split(const SplitSpec& split, std::size_t catalog_size) {
  std::vector<int> seen(catalog_size, 0);
  for (auto i : split.z1) {
    require(i < catalog_size, ErrorCode::Validation, "split index " + std::to_string(i) + " out of range");
    seen[i] |= 1;
  }
  for (auto i : split.z2) {
    require(i < catalog_size, ErrorCode::Validation, "split index " + std::to_string(i) + " out of range");
    require((seen[i] & 1) == 0, ErrorCode::Validation, "index " + std::to_string(i) + " in both Z1 and Z2");
    seen[i] |= 2;
  }
  for (std::size_t i = 0; i < catalog_size; ++i)
    require(seen[i] != 0, ErrorCode::Validation, "index " + std::to_string(i) + " missing from the split");
  require(split.z1.size() + split.z2.size() == catalog_size, ErrorCode::Validation, "split contains duplicates");
  for (auto i : split.zs)
    require(i < catalog_size && (seen[i] & 1), ErrorCode::Validation, "Zs index " + std::to_string(i) + " not in Z1");
}

}  // namespace flim
