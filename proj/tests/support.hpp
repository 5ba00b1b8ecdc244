#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "collapselab/corpus.hpp"

namespace testing {

inline collapselab::Document doc(const std::string& id, const std::string& findings,
                                 std::set<std::string> labels = {}) {
  return collapselab::Document(id, {{"FINDINGS", findings}}, collapselab::Provenance::real(), std::move(labels));
}

inline std::vector<collapselab::Document> docs(const std::vector<std::string>& texts) {
  std::vector<collapselab::Document> out;
  for (std::size_t i = 0; i < texts.size(); ++i) out.push_back(doc("d" + std::to_string(i), texts[i]));
  return out;
}

inline std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "collapselab-tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace testing
