#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "labelprop/common.hpp"
#include "labelprop/vocab.hpp"

namespace labelprop {

// Word-embedding table: one d_emb vector per vocabulary label, stored in
// label order. Immutable after construction.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(int dim, std::vector<std::vector<double>> vectors)
      : dim_(dim), vectors_(std::move(vectors)) {
    for (const auto& v : vectors_) {
      if (static_cast<int>(v.size()) != dim_)
        throw DimensionMismatchError("embedding vector has wrong dimension");
      for (double x : v) require_finite(x, "embedding vector");
    }
  }

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(vectors_.size()); }

  const std::vector<double>& vec(int label_index) const {
    if (label_index < 0 || label_index >= size())
      throw IndexOutOfRangeError("embedding index out of range");
    return vectors_[label_index];
  }
  const double* data(int label_index) const { return vec(label_index).data(); }

  void save(const std::string& path, const LabelVocabulary& vocab) const {
    if (vocab.size() != size())
      throw DimensionMismatchError("vocabulary/table size mismatch");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write embedding file: " + path);
    for (int i = 0; i < size(); ++i) {
      out << vocab.label(i);
      for (double x : vectors_[i]) out << ' ' << format_double(x);
      out << '\n';
    }
  }

 private:
  int dim_ = 0;
  std::vector<std::vector<double>> vectors_;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

inline double parse_real(const std::string& tok, const std::string& context) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &pos);
  } catch (const std::exception&) {
    throw ParseError("bad number '" + tok + "' in " + context);
  }
  if (pos != tok.size()) throw ParseError("bad number '" + tok + "' in " + context);
  return v;
}

}  // namespace detail

// Loads embeddings from a text table, one row per token: the token followed
// by `dim` reals. The last `dim` fields of a row are the values, everything
// before them is the token; a row written for a multi-word label therefore
// reads back verbatim. A vocabulary label resolves to its own row when one
// exists and otherwise to the mean of its whitespace-separated constituent
// tokens' rows.
inline EmbeddingTable load_embeddings(const std::string& path,
                                      const LabelVocabulary& vocab, int dim) {
  if (dim < 1) throw InvalidConfigError("embedding dim must be >= 1");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file: " + path);

  std::unordered_map<std::string, std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_ws(line);
    if (static_cast<int>(fields.size()) < dim + 1) {
      throw DimensionMismatchError("row " + std::to_string(lineno) + " in " + path +
                                   " has fewer than " + std::to_string(dim + 1) + " fields");
    }
    const int token_fields = static_cast<int>(fields.size()) - dim;
    std::string token = fields[0];
    for (int i = 1; i < token_fields; ++i) token += ' ' + fields[i];
    // A single-word token row with extra numeric fields is a wrong-arity row,
    // not a multi-word token; reject it.
    if (token_fields > 1) {
      for (int i = 0; i < token_fields; ++i) {
        std::size_t pos = 0;
        try {
          (void)std::stod(fields[i], &pos);
          if (pos == fields[i].size())
            throw DimensionMismatchError("row " + std::to_string(lineno) + " in " + path +
                                         " has wrong arity");
        } catch (const DimensionMismatchError&) {
          throw;
        } catch (const std::exception&) {
          // non-numeric field: genuinely part of the token
        }
      }
    }
    std::vector<double> v(dim);
    for (int i = 0; i < dim; ++i) {
      v[i] = detail::parse_real(fields[token_fields + i],
                                path + ":" + std::to_string(lineno));
      require_finite(v[i], "embedding file row");
    }
    rows[token] = std::move(v);
  }

  std::vector<std::vector<double>> vectors;
  vectors.reserve(vocab.size());
  for (int i = 0; i < vocab.size(); ++i) {
    const std::string& label = vocab.label(i);
    auto whole = rows.find(label);
    if (whole != rows.end()) {
      vectors.push_back(whole->second);
      continue;
    }
    auto parts = detail::split_ws(label);
    std::vector<double> mean(dim, 0.0);
    for (const auto& part : parts) {
      auto it = rows.find(part);
      if (it == rows.end()) throw MissingTokenError(part);
      for (int d = 0; d < dim; ++d) mean[d] += it->second[d];
    }
    if (parts.empty()) throw MissingTokenError(label);
    for (int d = 0; d < dim; ++d) mean[d] /= static_cast<double>(parts.size());
    vectors.push_back(std::move(mean));
  }
  return EmbeddingTable(dim, std::move(vectors));
}

inline const std::vector<double>& embedding_of(const EmbeddingTable& table,
                                               int label_index) {
  return table.vec(label_index);
}

}  // namespace labelprop
