#include "ranker/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "ranker/rng.hpp"

namespace ranker {

namespace {

bool is_unicode_space(std::uint32_t cp) {
  if (cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\v' ||
      cp == '\f')
    return true;
  if (cp == 0x00A0 || cp == 0x1680 || cp == 0x2028 || cp == 0x2029 ||
      cp == 0x202F || cp == 0x205F || cp == 0x3000 || cp == 0x0085)
    return true;
  return cp >= 0x2000 && cp <= 0x200A;
}

bool is_ascii_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

// Decodes one UTF-8 code point; malformed bytes are passed through as
// single-byte code points so tokenization never fails.
std::uint32_t next_codepoint(std::string_view s, std::size_t& i) {
  const unsigned char b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = 1;
  std::uint32_t cp = b0;
  if ((b0 & 0x80u) == 0) {
    len = 1;
  } else if ((b0 & 0xE0u) == 0xC0u) {
    len = 2;
    cp = b0 & 0x1Fu;
  } else if ((b0 & 0xF0u) == 0xE0u) {
    len = 3;
    cp = b0 & 0x0Fu;
  } else if ((b0 & 0xF8u) == 0xF0u) {
    len = 4;
    cp = b0 & 0x07u;
  } else {
    ++i;
    return b0;
  }
  if (i + len > s.size()) {
    ++i;
    return b0;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const unsigned char bk = static_cast<unsigned char>(s[i + k]);
    if ((bk & 0xC0u) != 0x80u) {
      ++i;
      return b0;
    }
    cp = (cp << 6) | (bk & 0x3Fu);
  }
  i += len;
  return cp;
}

}  // namespace

TokenSeq tokenize(std::string_view text, std::size_t max_tokens,
                  std::size_t hash_dims) {
  if (max_tokens == 0) throw std::invalid_argument("tokenize: max_tokens must be positive");
  if (hash_dims == 0) throw std::invalid_argument("tokenize: hash_dims must be positive");
  TokenSeq seq;
  std::string word;
  std::size_t i = 0;
  auto flush = [&] {
    if (word.empty()) return;
    std::size_t b = 0, e = word.size();
    while (b < e && is_ascii_punct(word[b])) ++b;
    while (e > b && is_ascii_punct(word[e - 1])) --e;
    if (e > b && seq.ids.size() < max_tokens) {
      const std::uint64_t h = fnv1a64(std::string_view(word).substr(b, e - b));
      seq.ids.push_back(static_cast<std::uint32_t>(h % hash_dims));
    }
    word.clear();
  };
  while (i < text.size()) {
    const std::size_t start = i;
    const std::uint32_t cp = next_codepoint(text, i);
    if (is_unicode_space(cp)) {
      flush();
      continue;
    }
    for (std::size_t k = start; k < i; ++k) {
      char c = text[k];
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      word += c;
    }
    if (seq.ids.size() >= max_tokens && word.size() > 64) word.clear();
  }
  flush();
  if (seq.ids.empty()) seq.ids.push_back(0);  // reserved null token
  if (seq.ids.size() > max_tokens) seq.ids.resize(max_tokens);
  return seq;
}

TokenSeq tokenize(std::string_view text, const EncoderConfig& cfg) {
  return tokenize(text, cfg.max_tokens, cfg.hash_dims);
}

void validate(const EncoderConfig& cfg) {
  if (cfg.hash_dims == 0) throw std::invalid_argument("encoder: hash_dims must be positive");
  if (cfg.embed_dim == 0 || cfg.embed_dim % 2 != 0)
    throw std::invalid_argument("encoder: embed_dim must be a positive even number");
  if (cfg.max_tokens == 0) throw std::invalid_argument("encoder: max_tokens must be positive");
  if (cfg.kind == EncoderKind::tiny_attention) {
    if (cfg.layers == 0 || cfg.heads == 0 || cfg.ff_dim == 0)
      throw std::invalid_argument("encoder: attention sizes must be positive");
    if (cfg.embed_dim % cfg.heads != 0)
      throw std::invalid_argument("encoder: embed_dim must be divisible by heads");
    if (cfg.attn_dropout < 0.0 || cfg.attn_dropout >= 1.0)
      throw std::invalid_argument("encoder: attn_dropout must be in [0, 1)");
  }
}

void add_encoder_params(ParamStore& store, const EncoderConfig& cfg,
                        const std::string& prefix) {
  validate(cfg);
  const std::size_t d = cfg.embed_dim;
  store.add(prefix + "embedding", cfg.hash_dims, d);
  if (cfg.kind != EncoderKind::tiny_attention) return;
  store.add(prefix + "pos", cfg.max_tokens, d);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + "l" + std::to_string(l) + ".";
    store.add(lp + "ln1.g", 1, d);
    store.add(lp + "ln1.b", 1, d);
    store.add(lp + "wq", d, d);
    store.add(lp + "bq", 1, d);
    store.add(lp + "wk", d, d);
    store.add(lp + "bk", 1, d);
    store.add(lp + "wv", d, d);
    store.add(lp + "bv", 1, d);
    store.add(lp + "wo", d, d);
    store.add(lp + "bo", 1, d);
    store.add(lp + "ln2.g", 1, d);
    store.add(lp + "ln2.b", 1, d);
    store.add(lp + "ff1.w", d, cfg.ff_dim);
    store.add(lp + "ff1.b", 1, cfg.ff_dim);
    store.add(lp + "ff2.w", cfg.ff_dim, d);
    store.add(lp + "ff2.b", 1, d);
  }
  store.add(prefix + "lnf.g", 1, d);
  store.add(prefix + "lnf.b", 1, d);
}

void init_encoder_params(ParamStore& store, const EncoderConfig& cfg,
                         const std::string& prefix, std::uint64_t seed) {
  for (ParamTensor& t : store.tensors()) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    StableRng rng(derive_seed(seed, t.name));
    const std::string tail = t.name.substr(prefix.size());
    if (tail == "embedding" || tail == "pos") {
      for (float& x : t.v)
        x = static_cast<float>(rng.next_real(-cfg.init_scale, cfg.init_scale));
    } else if (tail.size() > 2 && tail.substr(tail.size() - 2) == ".g") {
      for (float& x : t.v) x = 1.0f;  // layer-norm gains
    } else if (tail.find(".w") != std::string::npos ||
               tail.find("wq") != std::string::npos ||
               tail.find("wk") != std::string::npos ||
               tail.find("wv") != std::string::npos ||
               tail.find("wo") != std::string::npos) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.rows));
      for (float& x : t.v)
        x = static_cast<float>(rng.next_real(-bound, bound));
    }
    // biases and layer-norm shifts stay zero
  }
}

namespace {

int param_leaf(Graph& g, const ParamStore& store, const std::string& name,
               bool needs_grad, std::map<std::string, int>& cache) {
  auto it = cache.find(name);
  if (it != cache.end()) return it->second;
  const ParamTensor& p = store.at(name);
  Tensor t(p.rows, p.cols);
  for (std::size_t i = 0; i < p.size(); ++i)
    t.v[i] = static_cast<double>(p.v[i]);
  const int id = g.leaf(std::move(t), needs_grad && p.trainable);
  cache.emplace(name, id);
  return id;
}

// One pre-norm block: x + Wo(attn(LN(x))) then x + FF(LN(x)).
int attention_block(Graph& g, const EncoderConfig& cfg, int x,
                    const std::string& lp, const ParamStore& store,
                    bool with_grads, Mode mode, StableRng* rng,
                    std::map<std::string, int>& cache) {
  const std::size_t d = cfg.embed_dim;
  const std::size_t dk = d / cfg.heads;
  auto L = [&](const std::string& n) {
    return param_leaf(g, store, lp + n, with_grads, cache);
  };

  int h = g.layer_norm(x, L("ln1.g"), L("ln1.b"), 1e-5);
  int q = g.add_rowvec(g.matmul(h, L("wq")), L("bq"));
  int k = g.add_rowvec(g.matmul(h, L("wk")), L("bk"));
  int vv = g.add_rowvec(g.matmul(h, L("wv")), L("bv"));
  std::vector<int> heads_out;
  heads_out.reserve(cfg.heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
    int qh = g.slice_cols(q, hd * dk, dk);
    int kh = g.slice_cols(k, hd * dk, dk);
    int vh = g.slice_cols(vv, hd * dk, dk);
    int logits = g.scale(g.matmul_nt(qh, kh), scale);
    int attn = g.softmax_rows(logits);
    heads_out.push_back(g.matmul(attn, vh));
  }
  int concat = cfg.heads == 1 ? heads_out[0] : g.concat_cols(heads_out);
  int attn_out = g.add_rowvec(g.matmul(concat, L("wo")), L("bo"));
  if (mode == Mode::train && cfg.attn_dropout > 0.0 && rng)
    attn_out = g.dropout(attn_out, cfg.attn_dropout, *rng);
  x = g.add(x, attn_out);

  int h2 = g.layer_norm(x, L("ln2.g"), L("ln2.b"), 1e-5);
  int ff = g.relu(g.add_rowvec(g.matmul(h2, L("ff1.w")), L("ff1.b")));
  ff = g.add_rowvec(g.matmul(ff, L("ff2.w")), L("ff2.b"));
  if (mode == Mode::train && cfg.attn_dropout > 0.0 && rng)
    ff = g.dropout(ff, cfg.attn_dropout, *rng);
  return g.add(x, ff);
}

}  // namespace

int build_encoder(Graph& g, const EncoderConfig& cfg, const ParamStore& store,
                  const std::string& prefix,
                  const std::vector<const TokenSeq*>& seqs, Mode mode,
                  StableRng* dropout_rng, Tensor* embedding_grad,
                  std::map<std::string, int>& leaf_cache) {
  if (seqs.empty()) throw std::invalid_argument("build_encoder: empty batch");
  const ParamTensor& table = store.at(prefix + "embedding");
  const bool with_grads = embedding_grad != nullptr;

  std::vector<int> pooled;
  pooled.reserve(seqs.size());
  if (cfg.kind == EncoderKind::mean_pool) {
    for (const TokenSeq* s : seqs)
      pooled.push_back(g.embed_mean(table.v.data(), table.rows, table.cols,
                                    s->ids, embedding_grad));
  } else {
    const int pos = param_leaf(g, store, prefix + "pos", with_grads, leaf_cache);
    const int lnf_g =
        param_leaf(g, store, prefix + "lnf.g", with_grads, leaf_cache);
    const int lnf_b =
        param_leaf(g, store, prefix + "lnf.b", with_grads, leaf_cache);
    for (const TokenSeq* s : seqs) {
      if (s->length() > cfg.max_tokens)
        throw std::invalid_argument("build_encoder: sequence exceeds max_tokens");
      int x = g.embed_rows(table.v.data(), table.rows, table.cols, s->ids,
                           embedding_grad);
      x = g.add(x, g.slice_rows(pos, 0, s->length()));
      for (std::size_t l = 0; l < cfg.layers; ++l)
        x = attention_block(g, cfg, x, prefix + "l" + std::to_string(l) + ".",
                            store, with_grads, mode, dropout_rng, leaf_cache);
      x = g.layer_norm(x, lnf_g, lnf_b, 1e-5);
      pooled.push_back(g.mean_rows(x));
    }
  }
  return seqs.size() == 1 ? pooled[0] : g.stack_rows(pooled);
}

std::vector<double> encode(const EncoderConfig& cfg, const ParamStore& store,
                           const std::string& prefix, const TokenSeq& tokens) {
  Graph g;
  std::map<std::string, int> cache;
  const int z = build_encoder(g, cfg, store, prefix, {&tokens}, Mode::eval,
                              nullptr, nullptr, cache);
  return g.value(z).v;
}

}  // namespace ranker
