#include "biodistill/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "biodistill/error.hpp"
#include "biodistill/hashing.hpp"

namespace biodistill {

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

EmbeddingVector Embedder::embed(std::string_view text) const {
  if (text.empty()) throw Error(ErrorKind::validation, "cannot embed empty text");
  auto v = embed_text(text);
  if (v.size() != dimension()) {
    throw Error(ErrorKind::config, "embedder " + fingerprint() + " returned dimension " + std::to_string(v.size()) +
                                       ", expected " + std::to_string(dimension()));
  }
  for (float x : v) {
    if (!std::isfinite(x)) throw Error(ErrorKind::protocol, "embedder returned a non-finite entry");
  }
  return v;
}

// ---------------------------------------------------------------------------

HashEmbedder::HashEmbedder(std::size_t dimension) : dimension_(dimension) {
  if (dimension == 0) throw Error(ErrorKind::config, "embedding dimension must be positive");
}

std::string HashEmbedder::fingerprint() const { return "hash-v1:dim=" + std::to_string(dimension_); }

EmbeddingVector HashEmbedder::embed_text(std::string_view text) const {
  std::uint64_t state = fnv1a64(text);
  std::vector<double> raw(dimension_);
  double norm = 0.0;
  for (auto& x : raw) {
    x = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    norm += x * x;
  }
  norm = std::sqrt(norm);
  EmbeddingVector out(dimension_);
  for (std::size_t i = 0; i < dimension_; ++i) out[i] = static_cast<float>(norm > 0 ? raw[i] / norm : 0.0);
  return out;
}

// ---------------------------------------------------------------------------

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderConfig config, std::shared_ptr<RequestLimiter> limiter)
    : config_(std::move(config)), limiter_(std::move(limiter)) {
  if (config_.base_url.empty()) throw Error(ErrorKind::config, "remote embedder needs a base_url");
  if (config_.dimension == 0) throw Error(ErrorKind::config, "remote embedder needs a dimension");
}

std::string RemoteEmbedder::fingerprint() const {
  return "remote:" + config_.base_url + "#" + config_.model + ":dim=" + std::to_string(config_.dimension);
}

EmbeddingVector RemoteEmbedder::embed_text(std::string_view text) const {
  Json body;
  if (!config_.model.empty()) body["model"] = config_.model;
  body["input"] = Json::array({std::string(text)});

  std::vector<std::pair<std::string, std::string>> headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) headers.emplace_back("Authorization", std::string("Bearer ") + key);
  }
  auto res = post_json(join_url(config_.base_url, "embeddings"), body.dump(), headers, config_.retry, limiter_.get());

  try {
    auto parsed = Json::parse(res.body);
    const auto& data = parsed.at("data");
    if (!data.is_array() || data.empty()) throw Error(ErrorKind::protocol, "embeddings response has no data");
    return data.at(0).at("embedding").get<EmbeddingVector>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::protocol, std::string("malformed embeddings response: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

std::vector<std::string> RetrievalResult::ids() const {
  std::vector<std::string> out;
  out.reserve(ranked.size());
  for (const auto& r : ranked) out.push_back(r.id);
  return out;
}

CorpusIndex::CorpusIndex(std::size_t dimension, std::string fingerprint)
    : dimension_(dimension), fingerprint_(std::move(fingerprint)) {
  if (dimension == 0) throw Error(ErrorKind::config, "index dimension must be positive");
}

CorpusIndex CorpusIndex::build(const std::vector<Document>& documents, const Embedder& embedder) {
  if (documents.empty()) throw Error(ErrorKind::validation, "cannot build an index over zero documents");
  CorpusIndex index(embedder.dimension(), embedder.fingerprint());
  index.ids_.reserve(documents.size());
  index.data_.reserve(documents.size() * embedder.dimension());
  for (const auto& d : documents) index.add(d.id, embedder.embed(d.text()));
  return index;
}

void CorpusIndex::add(std::string id, EmbeddingVector vector) {
  if (vector.size() != dimension_) {
    throw Error(ErrorKind::validation, "vector for " + id + " has dimension " + std::to_string(vector.size()) +
                                           ", index expects " + std::to_string(dimension_));
  }
  if (!positions_.emplace(id, ids_.size()).second) throw Error(ErrorKind::conflict, "duplicate document id " + id);
  ids_.push_back(std::move(id));
  data_.insert(data_.end(), vector.begin(), vector.end());
}

std::span<const float> CorpusIndex::vector_at(std::size_t i) const {
  return std::span<const float>(data_).subspan(i * dimension_, dimension_);
}

std::optional<std::size_t> CorpusIndex::find(std::string_view id) const {
  auto it = positions_.find(std::string(id));
  if (it == positions_.end()) return std::nullopt;
  return it->second;
}

RetrievalResult CorpusIndex::top_k(std::span<const float> query, std::size_t k,
                                   std::optional<std::string_view> exclude) const {
  if (k == 0) throw Error(ErrorKind::validation, "k must be at least 1");
  if (query.size() != dimension_) {
    throw Error(ErrorKind::validation, "query dimension " + std::to_string(query.size()) + " != index dimension " +
                                           std::to_string(dimension_));
  }

  struct Hit {
    double score;
    std::size_t pos;
  };
  // "better" = higher score, then smaller id; the heap keeps the worst on top.
  auto better = [this](const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return ids_[a.pos] < ids_[b.pos];
  };

  std::vector<Hit> heap;
  heap.reserve(std::min(k, ids_.size()) + 1);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (exclude && ids_[i] == *exclude) continue;
    Hit h{dot(query, vector_at(i)), i};
    if (heap.size() < k) {
      heap.push_back(h);
      std::push_heap(heap.begin(), heap.end(), better);
    } else if (better(h, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), better);
      heap.back() = h;
      std::push_heap(heap.begin(), heap.end(), better);
    }
  }
  std::sort_heap(heap.begin(), heap.end(), better);

  RetrievalResult out;
  out.ranked.reserve(heap.size());
  for (const auto& h : heap) out.ranked.push_back({ids_[h.pos], h.score});
  return out;
}

void CorpusIndex::save(const std::filesystem::path& path) const {
  JsonlWriter out(path);
  Json header;
  header["format"] = "biodistill-index";
  header["version"] = 1;
  header["dimension"] = dimension_;
  header["embedder_fingerprint"] = fingerprint_;
  header["count"] = ids_.size();
  out.write(header);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    Json row;
    row["id"] = ids_[i];
    auto v = vector_at(i);
    row["vector"] = std::vector<float>(v.begin(), v.end());
    out.write(row);
  }
  out.commit();
}

CorpusIndex CorpusIndex::load(const std::filesystem::path& path) {
  std::optional<CorpusIndex> index;
  std::size_t expected = 0;
  for_each_jsonl(path, [&](const Json& row, std::size_t lineno) {
    try {
      if (!index) {
        if (row.value("format", std::string{}) != "biodistill-index" || row.value("version", 0) != 1) {
          throw Error(ErrorKind::parse, "not a version-1 index file");
        }
        index.emplace(row.at("dimension").get<std::size_t>(), row.at("embedder_fingerprint").get<std::string>());
        expected = row.at("count").get<std::size_t>();
        return;
      }
      index->add(row.at("id").get<std::string>(), row.at("vector").get<EmbeddingVector>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  if (!index) throw Error(ErrorKind::parse, path.string() + ": missing index header");
  if (index->size() != expected) {
    throw Error(ErrorKind::parse, path.string() + ": header count " + std::to_string(expected) + " but " +
                                      std::to_string(index->size()) + " entries");
  }
  return std::move(*index);
}

}  // namespace biodistill
