#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sevq/severity.hpp"

namespace sevq {

/// One manifest row. Paths are stored as written; use resolve_path() to
/// anchor relative paths at the manifest's directory.
struct DatasetRecord {
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  std::optional<SeverityArray> label;  ///< absent for unlabeled records
  std::string source_tag;

  bool labeled() const noexcept { return label.has_value(); }
  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

inline constexpr const char* kManifestHeader =
    "image_path,mask_path,upper_right,upper_left,middle_right,middle_left,lower_right,lower_left,source_tag";

/// Parses manifest text. `source` only names the input in error messages.
std::vector<DatasetRecord> parse_manifest(std::istream& in, const std::string& source = "<manifest>");
std::vector<DatasetRecord> load_manifest(const std::filesystem::path& path);

void write_manifest(std::ostream& out, const std::vector<DatasetRecord>& records);
void save_manifest(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);

std::filesystem::path resolve_path(const std::filesystem::path& manifest_path, const std::filesystem::path& p);

}  // namespace sevq
