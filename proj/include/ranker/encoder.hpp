#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ranker/graph.hpp"
#include "ranker/params.hpp"

namespace ranker {

enum class Mode { train, eval };
enum class EncoderKind { mean_pool, tiny_attention };

struct TokenSeq {
  std::vector<std::uint32_t> ids;
  std::size_t length() const { return ids.size(); }
};

struct EncoderConfig {
  EncoderKind kind = EncoderKind::mean_pool;
  std::size_t hash_dims = std::size_t{1} << 18;
  std::size_t embed_dim = 64;
  std::size_t max_tokens = 128;
  double init_scale = 0.05;  // embedding/position init range
  // tiny_attention only
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ff_dim = 128;
  double attn_dropout = 0.1;
};

void validate(const EncoderConfig& cfg);

// Lowercase (ASCII), split on whitespace (ASCII + common Unicode spaces),
// strip leading/trailing ASCII punctuation per token, drop empties, hash
// each token with 64-bit FNV-1a into [0, hash_dims), truncate to
// max_tokens. Empty input maps to the reserved null id 0.
TokenSeq tokenize(std::string_view text, std::size_t max_tokens,
                  std::size_t hash_dims);
TokenSeq tokenize(std::string_view text, const EncoderConfig& cfg);

// Registers this encoder's parameters under `prefix` (e.g. "enc_a.").
void add_encoder_params(ParamStore& store, const EncoderConfig& cfg,
                        const std::string& prefix);
void init_encoder_params(ParamStore& store, const EncoderConfig& cfg,
                         const std::string& prefix, std::uint64_t seed);

// Builds the tape that encodes each sequence and returns the (B, d) node of
// pooled representations. Parameter leaves are created once per tape and
// cached in leaf_cache keyed by name; embedding-table gradients go to
// embedding_grad when non-null. A null dropout_rng disables dropout even in
// train mode (the gradient-check protocol).
int build_encoder(Graph& g, const EncoderConfig& cfg, const ParamStore& store,
                  const std::string& prefix,
                  const std::vector<const TokenSeq*>& seqs, Mode mode,
                  StableRng* dropout_rng, Tensor* embedding_grad,
                  std::map<std::string, int>& leaf_cache);

// Eval-mode pooled representation of one sequence (no dropout).
std::vector<double> encode(const EncoderConfig& cfg, const ParamStore& store,
                           const std::string& prefix, const TokenSeq& tokens);

}  // namespace ranker
