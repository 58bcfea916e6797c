#pragma once

#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sera/errors.hpp"

namespace sera {

// All file formats use ordered_json so serialized key order is fixed and
// files are byte-stable across runs.
using Json = nlohmann::ordered_json;

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << data;
  if (!out) throw IoError("write failed for '" + path + "'");
}

// One JSON object per line. The visitor receives (line_number, object);
// malformed lines surface as SchemaError with the 1-based line number.
inline void for_each_jsonl(const std::string& path,
                           const std::function<void(int, const Json&)>& visit) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json obj = Json::parse(line, nullptr, false);
    if (obj.is_discarded()) throw SchemaError(line_no, "<json>", "malformed JSON");
    visit(line_no, obj);
  }
}

inline std::vector<Json> load_jsonl(const std::string& path) {
  std::vector<Json> rows;
  for_each_jsonl(path, [&](int, const Json& obj) { rows.push_back(obj); });
  return rows;
}

inline void save_jsonl(const std::string& path, const std::vector<Json>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& row : rows) out << row.dump() << "\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

// Fetches a required field, reporting the line and field name on failure.
template <typename T>
T require_field(const Json& obj, const std::string& key, int line_no) {
  if (!obj.contains(key)) throw SchemaError(line_no, key, "missing required field");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError(line_no, key, "wrong type");
  }
}

}  // namespace sera
