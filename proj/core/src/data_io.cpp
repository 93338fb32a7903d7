#include "sevq/data_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "sevq/errors.hpp"

namespace sevq {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::vector<DatasetRecord> parse_manifest(std::istream& in, const std::string& source) {
  std::vector<DatasetRecord> records;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line.rfind("image_path,mask_path", 0) != 0)
        throw ParseError(source, line_no, "expected header line starting with 'image_path,mask_path'");
      header_seen = true;
      continue;
    }
    std::vector<std::string> fields = split_fields(line);
    for (auto& f : fields) f = trim(f);
    if (fields.size() != 8 && fields.size() != 9)
      throw ParseError(source, line_no, "expected 8 or 9 comma-separated fields, got " + std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty()) throw ParseError(source, line_no, "image and mask paths are required");

    DatasetRecord rec;
    rec.image_path = fields[0];
    rec.mask_path = fields[1];
    if (fields.size() == 9) rec.source_tag = fields[8];

    std::size_t empty_labels = 0;
    for (std::size_t i = 2; i < 8; ++i) empty_labels += fields[i].empty();
    if (empty_labels == 6) {
      records.push_back(std::move(rec));
      continue;
    }
    if (empty_labels != 0) throw ParseError(source, line_no, "label fields must be all present or all empty");

    SeverityArray label = SeverityArray::zeros(SeverityArray::Kind::kBinary);
    for (std::size_t i = 0; i < 6; ++i) {
      const std::string& f = fields[i + 2];
      int value = 0;
      std::size_t used = 0;
      try {
        value = std::stoi(f, &used);
      } catch (const std::exception&) {
        throw ParseError(source, line_no, "label field '" + f + "' is not an integer");
      }
      if (used != f.size()) throw ParseError(source, line_no, "label field '" + f + "' is not an integer");
      if (value != 0 && value != 1)
        throw ValidationError(source + ":" + std::to_string(line_no) + ": label value " + f + " outside {0,1}");
      label.values[i] = value;
    }
    rec.label = label;
    records.push_back(std::move(rec));
  }
  if (!header_seen) throw ParseError(source, line_no, "missing header line");
  return records;
}

std::vector<DatasetRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  return parse_manifest(in, path.string());
}

void write_manifest(std::ostream& out, const std::vector<DatasetRecord>& records) {
  out << kManifestHeader << '\n';
  for (const auto& rec : records) {
    out << rec.image_path.string() << ',' << rec.mask_path.string();
    for (std::size_t i = 0; i < kNumRegions; ++i) {
      out << ',';
      if (rec.label) out << static_cast<int>(rec.label->values[i]);
    }
    out << ',' << rec.source_tag << '\n';
  }
}

void save_manifest(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  write_manifest(out, records);
  if (!out) throw IoError("failed writing manifest '" + path.string() + "'");
}

std::filesystem::path resolve_path(const std::filesystem::path& manifest_path, const std::filesystem::path& p) {
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

}  // namespace sevq
