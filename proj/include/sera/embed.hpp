#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sera/errors.hpp"
#include "sera/hash.hpp"
#include "sera/llm.hpp"

namespace sera {

// ---------------------------------------------------------------------------
// Text embedding and the similarity measure used for relevance scoring.
//
// The default backend is a hashed term-frequency embedding: token counts are
// hashed into a fixed number of buckets with a fixed seed, weighted by
// log(1 + count) and L2-normalized. No corpus statistics are involved, so a
// text's vector never changes as the bank grows.
// ---------------------------------------------------------------------------

enum class EmbedBackend { kHashedTfidf, kRemote, kLlmJudge };

inline const char* embed_backend_token(EmbedBackend b) {
  switch (b) {
    case EmbedBackend::kHashedTfidf: return "hashed_tfidf";
    case EmbedBackend::kRemote: return "remote";
    case EmbedBackend::kLlmJudge: return "llm_judge";
  }
  return "hashed_tfidf";
}

// Fixed token-hash seed; part of the embedder fingerprint.
constexpr std::uint64_t kTokenHashSeed = 0x9E3779B97F4A7C15ULL;

// Lowercase, split on non-alphanumerics, drop tokens shorter than 2 chars.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 2) tokens.push_back(cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c))
      cur.push_back(static_cast<char>(std::tolower(c)));
    else
      flush();
  }
  flush();
  return tokens;
}

inline std::size_t token_bucket(const std::string& token, int dim) {
  return static_cast<std::size_t>(fnv1a64(token, kTokenHashSeed) %
                                  static_cast<std::uint64_t>(dim));
}

class Embedder {
 public:
  explicit Embedder(EmbedBackend backend = EmbedBackend::kHashedTfidf, int dim = 512,
                    LlmClient* llm = nullptr)
      : backend_(backend), dim_(dim), llm_(llm) {
    if (dim_ <= 0) throw ConfigError("embedder dim must be positive");
    if (backend_ != EmbedBackend::kHashedTfidf && llm_ == nullptr)
      throw ConfigError("remote/llm_judge embedder backends need a gateway client");
  }

  EmbedBackend backend() const { return backend_; }
  int dim() const { return dim_; }

  // Changes iff any configuration field changes; cached vectors carry it so
  // stale embeddings are detected instead of silently reused.
  std::string fingerprint() const {
    std::string material = std::string(embed_backend_token(backend_)) + "|" +
                           std::to_string(dim_) + "|" + hex64(kTokenHashSeed);
    if (backend_ == EmbedBackend::kRemote && llm_ != nullptr)
      material += "|" + llm_->handle().embed_model;
    return hex64(fnv1a64(material));
  }

  // Unit vector of length dim. Deterministic for the local backend.
  std::vector<double> embed(const std::string& text) const {
    if (backend_ == EmbedBackend::kRemote) return embed_remote(text);
    return embed_hashed_tf(text);
  }

  // Semantic similarity in [0,1]. Cosine of embeddings for vector backends;
  // a 0-100 model judgment divided by 100 for the judge backend.
  double phi(const std::string& scenario_text, const std::string& pattern_text) const {
    if (backend_ == EmbedBackend::kLlmJudge) return phi_llm_judge(scenario_text, pattern_text);
    std::vector<double> a = embed(scenario_text);
    std::vector<double> b = embed(pattern_text);
    double dot = 0.0;
    for (int i = 0; i < dim_; ++i) dot += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
    // Hashed-TF vectors are non-negative so cosine is already >= 0; the clamp
    // guards remote backends which may return signed components.
    return std::min(1.0, std::max(0.0, dot));
  }

 private:
  std::vector<double> embed_hashed_tf(const std::string& text) const {
    std::vector<std::string> tokens = tokenize(text);
    if (tokens.empty()) throw EmptyTextError("no tokens survive tokenization");
    std::map<std::string, int> counts;
    for (const auto& t : tokens) counts[t] += 1;
    std::vector<double> v(static_cast<std::size_t>(dim_), 0.0);
    for (const auto& [token, count] : counts)
      v[token_bucket(token, dim_)] += std::log(1.0 + static_cast<double>(count));
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  }

  std::vector<double> embed_remote(const std::string& text) const {
    if (tokenize(text).empty()) throw EmptyTextError("no tokens survive tokenization");
    std::vector<double> v = llm_->embed_text(text);
    if (static_cast<int>(v.size()) != dim_)
      throw MalformedLlmOutputError("remote embedding dim " + std::to_string(v.size()) +
                                    " != configured " + std::to_string(dim_));
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw MalformedLlmOutputError("remote embedding has zero norm");
    for (double& x : v) x /= norm;  // re-normalize on receipt
    return v;
  }

  double phi_llm_judge(const std::string& a, const std::string& b) const {
    std::string prompt =
        "Rate the semantic relevance of the driving scenario to the failure pattern on a "
        "0-100 scale.\n\nScenario: " + a + "\n\nFailure pattern: " + b;
    prompt += schema_instruction_block("judge.v1");
    prompt += "\nSchema: {\"relevance\": number in [0,100]}";
    LlmTask task{LlmTaskKind::kJudgeSimilarity, prompt, "judge.v1"};
    Json doc = llm_->complete(task);
    return doc.at("relevance").get<double>() / 100.0;
  }

  EmbedBackend backend_;
  int dim_;
  LlmClient* llm_;
};

}  // namespace sera
