#include <cstdio>
#include <sstream>

#include "flim/error.hpp"
#include "flim/pipeline.hpp"
#include "json.hpp"

namespace flim {
using nlohmann::json;

std::string report_to_json(const EvaluationReport& report) {
  json j;
  j["split_seed"] = report.split_seed;
  j["class_names"] = report.class_names;
  j["train_images"] = report.train_images;
  j["test_images"] = report.test_images;
  j["rows"] = json::array();
  for (std::size_t r = 0; r < report.rows.size(); ++r) {
    const auto& row = report.rows[r];
    json item{{"config", row.config}, {"accuracy", row.accuracy}, {"confusion", row.confusion}};
    if (r < report.feature_dimensions.size()) item["feature_dimension"] = report.feature_dimensions[r];
    j["rows"].push_back(std::move(item));
  }
  return j.dump(2) + "\n";
}

EvaluationReport report_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    EvaluationReport report;
    report.split_seed = j.at("split_seed").get<std::uint64_t>();
    report.class_names = j.at("class_names").get<std::vector<std::string>>();
    report.train_images = j.value("train_images", std::size_t{0});
    report.test_images = j.value("test_images", std::size_t{0});
    for (const auto& item : j.at("rows")) {
      report.rows.push_back({item.at("config").get<std::string>(), item.at("accuracy").get<double>(),
                             item.at("confusion").get<std::vector<std::vector<std::size_t>>>()});
      report.feature_dimensions.push_back(item.value("feature_dimension", std::size_t{0}));
    }
    return report;
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("invalid report: ") + e.what());
  }
}

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

}  // namespace

std::string report_to_table(const EvaluationReport& report) {
  // Columns: every CL head in order, then FC.
  std::vector<std::string> columns;
  for (const auto& row : report.rows)
    if (row.config != "FC") columns.push_back(row.config);
  if (columns.size() < 2) {
    for (std::size_t d = columns.size() + 1; d <= 2; ++d) columns.push_back("CL" + std::to_string(d));
  }
  columns.push_back("FC");

  std::ostringstream out;
  const std::string split = "split" + std::to_string(report.split_seed);
  const std::size_t first = std::max<std::size_t>(8, split.size() + 1);
  out << std::string(first, ' ');
  for (const auto& c : columns) out << pad(c, 9);
  out << '\n' << split << std::string(first - split.size(), ' ');
  for (const auto& c : columns) {
    std::string cell = "-";
    for (const auto& row : report.rows)
      if (row.config == c) cell = fixed4(row.accuracy);
    out << pad(cell, 9);
  }
  out << '\n';

  for (const auto& row : report.rows) {
    out << '\n' << row.config << " confusion (rows: true, columns: predicted)\n";
    std::size_t width = 6;
    for (const auto& line : row.confusion)
      for (auto v : line) width = std::max(width, std::to_string(v).size() + 1);
    for (std::size_t a = 0; a < row.confusion.size(); ++a) {
      for (auto v : row.confusion[a]) out << pad(std::to_string(v), width);
      if (a < report.class_names.size()) out << "  " << report.class_names[a];
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace flim
