#include "irtnet/embeddings.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

#include "irtnet/binary_io.hpp"
#include "irtnet/csv.hpp"
#include "irtnet/error.hpp"

namespace irtnet {
namespace {

constexpr std::string_view kMagic = "IRTEMB01";
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 8;

}  // namespace

namespace binary {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const char> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("failed writing " + path);
}

}  // namespace binary

void EmbeddingStore::add(std::string id, std::span<const float> vector) {
  if (vector.size() != dim_) {
    throw DimensionError("embedding for '" + id + "' has length " + std::to_string(vector.size()) +
                         ", store dim is " + std::to_string(dim_));
  }
  if (index_.contains(id)) throw DataError("duplicate embedding id '" + id + "'");
  for (float v : vector) {
    if (!std::isfinite(v)) throw FormatError("non-finite value in embedding '" + id + "'");
    values_.push_back(static_cast<double>(v));
  }
  index_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
}

void EmbeddingStore::add(std::string id, std::span<const double> vector) {
  std::vector<float> narrowed(vector.begin(), vector.end());
  add(std::move(id), std::span<const float>(narrowed));
}

std::optional<std::size_t> EmbeddingStore::find(const std::string& id) const {
  if (auto it = index_.find(id); it != index_.end()) return it->second;
  return std::nullopt;
}

EmbeddingStore load_embeddings(const std::filesystem::path& ids_path,
                               const std::filesystem::path& vectors_path) {
  std::vector<std::string> ids;
  {
    std::ifstream in(ids_path);
    if (!in) throw DataError("cannot open ids file " + ids_path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto id = csv::chomp(line);
      if (id.empty()) throw ParseError(ids_path.string(), line_no, "empty query id");
      ids.emplace_back(id);
    }
  }

  const auto bytes = binary::read_file(vectors_path.string());
  const std::string source = vectors_path.string();
  binary::Reader reader(bytes, source);
  if (bytes.size() < kHeaderBytes || reader.bytes(8) != kMagic) throw FormatError(source + ": bad magic");
  const auto version = reader.uint<std::uint32_t>();
  if (version != kVersion) throw FormatError(source + ": unsupported version " + std::to_string(version));
  const std::size_t dim = reader.uint<std::uint32_t>();
  const std::uint64_t count = reader.uint<std::uint64_t>();
  if (dim == 0) throw FormatError(source + ": dim must be positive");
  if (count != ids.size()) {
    throw FormatError(source + ": header count " + std::to_string(count) + " but ids file has " +
                      std::to_string(ids.size()) + " lines");
  }
  if (reader.remaining() != 4 * dim * count) {
    throw FormatError(source + ": payload is " + std::to_string(reader.remaining()) + " bytes, expected " +
                      std::to_string(4 * dim * count));
  }

  EmbeddingStore store(dim);
  std::vector<float> row(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (auto& v : row) v = reader.f32();
    store.add(std::move(ids[i]), std::span<const float>(row));
  }
  return store;
}

void write_embeddings(const EmbeddingStore& store, const std::filesystem::path& ids_path,
                      const std::filesystem::path& vectors_path) {
  {
    std::ofstream out(ids_path);
    if (!out) throw DataError("cannot write " + ids_path.string());
    for (const auto& id : store.ids()) out << id << '\n';
    if (!out) throw DataError("failed writing " + ids_path.string());
  }
  binary::Writer w;
  w.bytes(kMagic);
  w.uint<std::uint32_t>(kVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(store.dim()));
  w.uint<std::uint64_t>(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (double v : store.row(i)) w.f32(static_cast<float>(v));
  }
  binary::write_file(vectors_path.string(), w.buffer());
}

QueryEmbeddings::QueryEmbeddings(const EmbeddingStore& store, const QueryTable& queries) : store_(&store) {
  rows_.reserve(queries.size());
  for (QueryId q : queries.all()) {
    const auto row = store.find(queries.external_id(q));
    if (!row) throw DataError("no embedding for query '" + queries.external_id(q) + "'");
    rows_.push_back(*row);
  }
}

}  // namespace irtnet
