#pragma once

// Query embedding store: `ids.txt` (one external id per line) plus
// `vectors.bin`:
//
//   "IRTEMB01"             8 bytes
//   version  u32 LE        = 1
//   dim      u32 LE
//   count    u64 LE
//   values   count*dim f32 LE, row-major, row i belongs to line i of ids.txt

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "irtnet/data.hpp"

namespace irtnet {

class EmbeddingStore {
 public:
  explicit EmbeddingStore(std::size_t dim = 0) : dim_(dim) {}

  /// Values are held at f32 precision; anything else is rounded on insert.
  void add(std::string id, std::span<const double> vector);
  void add(std::string id, std::span<const float> vector);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  std::optional<std::size_t> find(const std::string& id) const;
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }

 private:
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Throws FormatError on magic/version/length problems or non-finite values.
EmbeddingStore load_embeddings(const std::filesystem::path& ids_path,
                               const std::filesystem::path& vectors_path);
void write_embeddings(const EmbeddingStore& store, const std::filesystem::path& ids_path,
                      const std::filesystem::path& vectors_path);

/// QueryId-indexed view over a store. Construction fails if any query of the
/// table has no vector.
class QueryEmbeddings {
 public:
  QueryEmbeddings(const EmbeddingStore& store, const QueryTable& queries);

  std::size_t dim() const noexcept { return store_->dim(); }
  std::size_t size() const noexcept { return rows_.size(); }
  std::span<const double> operator[](QueryId q) const { return store_->row(rows_.at(q.index)); }

 private:
  const EmbeddingStore* store_;
  std::vector<std::size_t> rows_;
};

}  // namespace irtnet
