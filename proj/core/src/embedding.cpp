#include "cmwm/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cmwm/errors.hpp"

namespace cmwm {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::vector<double> HashEmbeddingProvider::embed(std::string_view text, std::size_t dim) {
  std::uint64_t state = fnv1a(text, seed_);
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (auto& x : v) {
    x = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    norm2 += x * x;
  }
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
  }
  return v;
}

// ---------------------------------------------------------------- HTTP

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string endpoint, std::string api_key,
                                             int timeout_seconds)
    : api_key_(std::move(api_key)), timeout_seconds_(timeout_seconds) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError("embedding endpoint must be an absolute URL: " + endpoint);
  }
  const auto path_start = endpoint.find('/', scheme_end + 3);
  base_ = endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
}

std::unique_ptr<HttpEmbeddingProvider> HttpEmbeddingProvider::from_env() {
  const char* endpoint = std::getenv("EMBED_ENDPOINT");
  if (endpoint == nullptr || *endpoint == '\0') return nullptr;
  const char* key = std::getenv("EMBED_API_KEY");
  return std::make_unique<HttpEmbeddingProvider>(endpoint, key != nullptr ? key : "");
}

std::vector<double> HttpEmbeddingProvider::embed(std::string_view text, std::size_t dim) {
  httplib::Client client(base_);
  client.set_connection_timeout(timeout_seconds_);
  client.set_read_timeout(timeout_seconds_);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const nlohmann::json body = {{"text", std::string(text)}, {"dim", dim}};
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    throw ProviderError("embedding request failed: " + httplib::to_string(res.error()), true);
  }
  if (res->status != 200) {
    const bool retriable = res->status == 429 || res->status >= 500;
    throw ProviderError("embedding service returned HTTP " + std::to_string(res->status),
                        retriable);
  }
  std::vector<double> out;
  try {
    out = nlohmann::json::parse(res->body).at("embedding").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("malformed embedding response: ") + e.what(), false);
  }
  if (out.size() < dim) {
    throw ProviderError("embedding has " + std::to_string(out.size()) + " dims, need " +
                            std::to_string(dim),
                        false);
  }
  out.resize(dim);
  return out;
}

// ---------------------------------------------------------------- bounded

BoundedProvider::BoundedProvider(EmbeddingProvider& inner, std::ptrdiff_t max_in_flight)
    : inner_(inner), slots_(std::max<std::ptrdiff_t>(1, max_in_flight)) {}

std::vector<double> BoundedProvider::embed(std::string_view text, std::size_t dim) {
  slots_.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{slots_};
  return inner_.embed(text, dim);
}

// ---------------------------------------------------------------- transcripts

std::string build_transcript(std::span<const Message> messages) {
  std::vector<const Message*> order;
  order.reserve(messages.size());
  for (const auto& m : messages) order.push_back(&m);
  std::stable_sort(order.begin(), order.end(),
                   [](const Message* a, const Message* b) { return a->timestamp < b->timestamp; });
  std::string out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0) out.push_back('\n');
    out += order[i]->text;
  }
  return out;
}

std::vector<std::string> chunk_text(std::string_view text, const ChunkingOptions& opts) {
  if (opts.chunk_chars == 0 || opts.overlap_chars >= opts.chunk_chars) {
    throw ValidationError("chunking requires 0 <= overlap < chunk size");
  }
  if (text.size() <= opts.chunk_chars) return {std::string(text)};
  const std::size_t stride = opts.chunk_chars - opts.overlap_chars;
  std::vector<std::string> chunks;
  for (std::size_t start = 0;; start += stride) {
    chunks.emplace_back(text.substr(start, opts.chunk_chars));
    if (start + opts.chunk_chars >= text.size()) break;
  }
  return chunks;
}

std::vector<double> weighted_chunk_mean(std::span<const std::vector<double>> embeddings,
                                        std::span<const double> weights) {
  if (embeddings.empty() || embeddings.size() != weights.size()) {
    throw ShapeError("weighted_chunk_mean: need one weight per embedding");
  }
  const std::size_t dim = embeddings.front().size();
  std::vector<double> out(dim);
  double total = 0.0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != dim) throw ShapeError("chunk embeddings differ in dimension");
    total += weights[i];
    for (std::size_t j = 0; j < dim; ++j) out[j] += weights[i] * embeddings[i][j];
  }
  if (!(total > 0.0)) throw ValidationError("chunk weights must sum to a positive value");
  for (auto& v : out) v /= total;
  return out;
}

std::vector<double> embed_transcript(std::span<const Message> messages, EmbeddingProvider& provider,
                                     std::size_t dim, const ChunkingOptions& opts) {
  if (messages.empty()) return std::vector<double>(dim, 0.0);
  const std::string transcript = build_transcript(messages);
  if (transcript.empty()) return std::vector<double>(dim, 0.0);
  const auto chunks = chunk_text(transcript, opts);
  if (chunks.size() == 1) return provider.embed(chunks.front(), dim);
  std::vector<std::vector<double>> embeddings;
  std::vector<double> weights;
  for (const auto& c : chunks) {
    embeddings.push_back(provider.embed(c, dim));
    weights.push_back(static_cast<double>(c.size()));
  }
  return weighted_chunk_mean(embeddings, weights);
}

}  // namespace cmwm
