#pragma once

// Communication transcripts -> fixed-dimension action embeddings.

#include <cstdint>
#include <memory>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cmwm {

struct Message {
  std::int64_t timestamp = 0;
  std::string text;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  // Embedding of `text` with exactly `dim` entries. Throws ProviderError.
  virtual std::vector<double> embed(std::string_view text, std::size_t dim) = 0;
};

// Deterministic offline provider: unit-norm pseudo-random vectors keyed by a
// stable hash of (seed, text). Identical text always maps to the same vector.
class HashEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(std::uint64_t seed = 0) : seed_(seed) {}
  std::vector<double> embed(std::string_view text, std::size_t dim) override;

 private:
  std::uint64_t seed_;
};

// POSTs {"text": ..., "dim": ...} to an HTTP endpoint and reads
// {"embedding": [...]}; longer vectors are truncated to `dim`.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(std::string endpoint, std::string api_key, int timeout_seconds = 30);
  // Reads EMBED_ENDPOINT and EMBED_API_KEY; returns null when no endpoint is set.
  static std::unique_ptr<HttpEmbeddingProvider> from_env();

  std::vector<double> embed(std::string_view text, std::size_t dim) override;

 private:
  std::string base_;  // scheme://host[:port]
  std::string path_;
  std::string api_key_;
  int timeout_seconds_;
};

// Caps the number of concurrent calls into a shared provider.
class BoundedProvider final : public EmbeddingProvider {
 public:
  BoundedProvider(EmbeddingProvider& inner, std::ptrdiff_t max_in_flight);
  std::vector<double> embed(std::string_view text, std::size_t dim) override;

 private:
  EmbeddingProvider& inner_;
  std::counting_semaphore<> slots_;
};

struct ChunkingOptions {
  std::size_t chunk_chars = 6000;
  std::size_t overlap_chars = 500;
};

// Stable chronological sort, texts joined by '\n'.
std::string build_transcript(std::span<const Message> messages);

// Overlapping windows of at most chunk_chars advancing by chunk_chars - overlap.
// A text no longer than chunk_chars yields itself.
std::vector<std::string> chunk_text(std::string_view text, const ChunkingOptions& opts);

// sum_i w_i e_i / sum_i w_i
std::vector<double> weighted_chunk_mean(std::span<const std::vector<double>> embeddings,
                                        std::span<const double> weights);

// Embeds a period's transcript: a zero vector when there are no messages,
// a single call for a short transcript, and otherwise the character-count
// weighted mean of per-chunk embeddings.
std::vector<double> embed_transcript(std::span<const Message> messages, EmbeddingProvider& provider,
                                     std::size_t dim, const ChunkingOptions& opts = {});

}  // namespace cmwm
