#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "labelprop/common.hpp"

namespace labelprop {

// Ordered label set with a seen/unseen partition: indices [0, seen_count)
// are seen, the rest unseen. Immutable after construction; safe for
// concurrent reads.
class LabelVocabulary {
 public:
  LabelVocabulary() = default;

  LabelVocabulary(std::vector<std::string> labels, int seen_count)
      : labels_(std::move(labels)), seen_count_(seen_count) {
    if (seen_count_ < 1 || seen_count_ > static_cast<int>(labels_.size())) {
      throw InvalidConfigError("seen_count must be in [1, label count]");
    }
    for (int i = 0; i < size(); ++i) {
      if (!index_.emplace(labels_[i], i).second) {
        throw DuplicateNameError(labels_[i]);
      }
    }
  }

  int size() const { return static_cast<int>(labels_.size()); }
  int seen_count() const { return seen_count_; }
  int unseen_count() const { return size() - seen_count_; }
  bool is_seen(int i) const { return i < seen_count_; }

  const std::string& label(int i) const {
    if (i < 0 || i >= size()) throw IndexOutOfRangeError("label index out of range");
    return labels_[i];
  }
  const std::vector<std::string>& labels() const { return labels_; }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UnknownLabelError(name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  // File format: one label per line; a single "---" line separates the seen
  // section from the unseen section. No separator means all labels are seen.
  static LabelVocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary file: " + path);
    std::vector<std::string> labels;
    int seen = -1;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line == "---") {
        if (seen >= 0) throw ParseError("multiple seen/unseen separators in " + path);
        seen = static_cast<int>(labels.size());
        continue;
      }
      labels.push_back(line);
    }
    if (labels.empty()) throw ParseError("empty vocabulary file: " + path);
    return LabelVocabulary(std::move(labels), seen < 0 ? static_cast<int>(labels.size()) : seen);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary file: " + path);
    for (int i = 0; i < size(); ++i) {
      if (i == seen_count_) out << "---\n";
      out << labels_[i] << "\n";
    }
  }

 private:
  std::vector<std::string> labels_;
  int seen_count_ = 0;
  std::unordered_map<std::string, int> index_;
};

}  // namespace labelprop
