#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <unordered_map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "biodistill/document.hpp"
#include "biodistill/http.hpp"

namespace biodistill {

using EmbeddingVector = std::vector<float>;

// Inner product accumulated in double, left to right.
double dot(std::span<const float> a, std::span<const float> b);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dimension() const = 0;
  virtual bool deterministic() const = 0;
  // Identity recorded in an index so query-time mismatches are detectable.
  virtual std::string fingerprint() const = 0;

  // Throws Error(validation) on empty text and Error(config) when the
  // produced vector does not have dimension() entries.
  EmbeddingVector embed(std::string_view text) const;

 protected:
  virtual EmbeddingVector embed_text(std::string_view text) const = 0;
};

// Offline embedder: a unit vector whose entries are drawn from splitmix64
// seeded with the FNV-1a hash of the text. Entry i is
// (next() >> 11) * 2^-53 * 2 - 1, and the vector is then L2-normalised.
class HashEmbedder final : public Embedder {
 public:
  explicit HashEmbedder(std::size_t dimension);
  std::size_t dimension() const override { return dimension_; }
  bool deterministic() const override { return true; }
  std::string fingerprint() const override;

 protected:
  EmbeddingVector embed_text(std::string_view text) const override;

 private:
  std::size_t dimension_;
};

struct RemoteEmbedderConfig {
  std::string base_url;
  std::string model;
  std::string api_key_env;
  std::size_t dimension = 0;
  RetryPolicy retry;
};

// OpenAI-compatible POST {base_url}/embeddings.
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(RemoteEmbedderConfig config, std::shared_ptr<RequestLimiter> limiter);
  std::size_t dimension() const override { return config_.dimension; }
  bool deterministic() const override { return false; }
  std::string fingerprint() const override;

 protected:
  EmbeddingVector embed_text(std::string_view text) const override;

 private:
  RemoteEmbedderConfig config_;
  std::shared_ptr<RequestLimiter> limiter_;
};

struct ScoredDocument {
  std::string id;
  double score = 0.0;

  friend bool operator==(const ScoredDocument&, const ScoredDocument&) = default;
};

// Ordered by descending score, ties by ascending id.
struct RetrievalResult {
  std::vector<ScoredDocument> ranked;
  std::vector<std::string> ids() const;
};

inline constexpr std::size_t kDefaultTopK = 4;

// Exact inner-product index. Immutable once built; concurrent queries are safe.
class CorpusIndex {
 public:
  CorpusIndex(std::size_t dimension, std::string fingerprint);

  static CorpusIndex build(const std::vector<Document>& documents, const Embedder& embedder);

  void add(std::string id, EmbeddingVector vector);

  std::size_t dimension() const { return dimension_; }
  const std::string& fingerprint() const { return fingerprint_; }
  std::size_t size() const { return ids_.size(); }
  const std::string& id_at(std::size_t i) const { return ids_[i]; }
  std::span<const float> vector_at(std::size_t i) const;
  std::optional<std::size_t> find(std::string_view id) const;

  // The k highest dot-product entries, raw scores. `exclude` drops one
  // document id (the query's own source document) from consideration.
  RetrievalResult top_k(std::span<const float> query, std::size_t k,
                        std::optional<std::string_view> exclude = std::nullopt) const;

  // JSONL: a header {"format","version","dimension","embedder_fingerprint",
  // "count"} followed by one {"id","vector"} per entry.
  void save(const std::filesystem::path& path) const;
  static CorpusIndex load(const std::filesystem::path& path);

 private:
  std::size_t dimension_;
  std::string fingerprint_;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> positions_;
};

}  // namespace biodistill
