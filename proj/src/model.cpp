#include "grit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "grit/errors.hpp"

namespace grit {

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kMaskedScore = -1e30;
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'G', 'R', 'I', 'T'};

// Deterministic Box-Muller over mt19937_64; avoids the
// implementation-defined std::normal_distribution.
class NormalSource {
public:
    explicit NormalSource(std::uint64_t seed) : rng_(seed) {}
    double next(double sigma) {
        if (have_spare_) {
            have_spare_ = false;
            return spare_ * sigma;
        }
        double u1 = uniform01(), u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a) * sigma;
    }

private:
    double uniform01() {
        // (0, 1]: never returns 0, so log() above is safe.
        return (static_cast<double>(rng_() >> 11) + 1.0) * 0x1p-53;
    }
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

Tensor init_matrix(NormalSource& rng, std::size_t r, std::size_t c, double sigma) {
    std::vector<double> data(r * c);
    for (double& v : data) v = rng.next(sigma);
    return Tensor::from_data({r, c}, std::move(data), true);
}

std::uint64_t fnv1a(const unsigned char* p, std::size_t n, std::uint64_t h = 14695981039346656037ULL) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

template <typename T>
void put(std::string& buf, T v) {
    // Little-endian on all supported targets.
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::string config_bytes(const ModelConfig& c) {
    std::string buf;
    for (std::uint64_t v : {static_cast<std::uint64_t>(c.d_model), static_cast<std::uint64_t>(c.n_layers),
                            static_cast<std::uint64_t>(c.n_heads), static_cast<std::uint64_t>(c.vocab_size),
                            static_cast<std::uint64_t>(c.max_seq_len),
                            static_cast<std::uint64_t>(c.ffn_multiplier),
                            static_cast<std::uint64_t>(c.embedding_head_dim), c.rng_seed})
        put(buf, v);
    return buf;
}

}  // namespace

void ModelConfig::validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || max_seq_len == 0 || ffn_multiplier == 0)
        throw config_error("model config: extents must be positive");
    if (d_model % n_heads != 0)
        throw config_error("model config: d_model " + std::to_string(d_model) +
                           " not divisible by n_heads " + std::to_string(n_heads));
    if (d_head() % 2 != 0)
        throw config_error("model config: d_head must be even for rotary embeddings");
    if (vocab_size < tok::vocab_size)
        throw config_error("model config: vocab_size must be at least " +
                           std::to_string(tok::vocab_size));
    if (embedding_head_dim >= d_model && embedding_head_dim != 0)
        throw config_error("model config: embedding_head_dim must be < d_model");
}

std::uint64_t ModelConfig::fingerprint() const {
    std::string b = config_bytes(*this);
    return fnv1a(reinterpret_cast<const unsigned char*>(b.data()), b.size());
}

TransformerModel::TransformerModel(const ModelConfig& config) : cfg_(config) {
    cfg_.validate();
    NormalSource rng(cfg_.rng_seed);
    const double sigma = 0.02;
    const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.n_layers));
    std::size_t d = cfg_.d_model, f = cfg_.d_model * cfg_.ffn_multiplier;

    params_.emplace_back("token_embedding", init_matrix(rng, cfg_.vocab_size, d, sigma));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        std::string p = "layers." + std::to_string(l) + ".";
        params_.emplace_back(p + "attn_norm",
                             Tensor::from_data({d}, std::vector<double>(d, 1.0), true));
        params_.emplace_back(p + "wq", init_matrix(rng, d, d, sigma));
        params_.emplace_back(p + "wk", init_matrix(rng, d, d, sigma));
        params_.emplace_back(p + "wv", init_matrix(rng, d, d, sigma));
        params_.emplace_back(p + "wo", init_matrix(rng, d, d, sigma * out_scale));
        params_.emplace_back(p + "ffn_norm",
                             Tensor::from_data({d}, std::vector<double>(d, 1.0), true));
        params_.emplace_back(p + "w1", init_matrix(rng, d, f, sigma));
        params_.emplace_back(p + "w2", init_matrix(rng, f, d, sigma * out_scale));
    }
    params_.emplace_back("final_norm", Tensor::from_data({d}, std::vector<double>(d, 1.0), true));
    params_.emplace_back("lm_head", init_matrix(rng, d, cfg_.vocab_size, sigma));
    if (cfg_.embedding_head_dim > 0)
        params_.emplace_back("embed_head", init_matrix(rng, d, cfg_.embedding_head_dim, sigma));
}

Tensor& TransformerModel::param(const std::string& name) {
    for (auto& [n, t] : params_)
        if (n == name) return t;
    throw usage_error("unknown parameter: " + name);
}

const Tensor& TransformerModel::param(const std::string& name) const {
    return const_cast<TransformerModel*>(this)->param(name);
}

std::size_t TransformerModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

void TransformerModel::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

std::pair<Tensor, KVState> TransformerModel::forward_hidden(const std::vector<int>& tokens,
                                                            AttentionMode mode,
                                                            const KVState* cache) const {
    if (tokens.empty()) throw input_error("forward_hidden: empty token sequence");
    std::size_t c = (cache && !cache->empty()) ? cache->token_count : 0;
    std::size_t t = tokens.size(), s = c + t;
    if (s > cfg_.max_seq_len)
        throw capacity_error("forward_hidden: sequence of " + std::to_string(s) +
                             " tokens exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    if (c > 0 && mode.kind != AttentionKind::Causal)
        throw usage_error("forward_hidden: a KV cache only extends causal context");
    if (mode.kind == AttentionKind::PrefixBidirectional && mode.prefix_len > t)
        throw usage_error("forward_hidden: prefix_len exceeds sequence length");

    instr.forwards++;

    // Additive mask over (new position, attended position); exact 0 for
    // allowed pairs so masked positions contribute exactly nothing.
    std::vector<double> mask(t * s, 0.0);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < s; ++j) {
            bool allowed;
            switch (mode.kind) {
                case AttentionKind::Causal:
                    allowed = j <= c + i;
                    break;
                case AttentionKind::Bidirectional:
                    allowed = true;
                    break;
                case AttentionKind::PrefixBidirectional:
                    allowed = (i < mode.prefix_len) ? j < mode.prefix_len : j <= i;
                    break;
            }
            if (!allowed) mask[i * s + j] = kMaskedScore;
        }
    Tensor mask_t = Tensor::from_data({t, s}, std::move(mask));

    std::size_t d = cfg_.d_model, dh = cfg_.d_head(), nh = cfg_.n_heads;
    double score_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    KVState out_state;
    out_state.layers.resize(cfg_.n_layers);
    out_state.token_count = s;
    out_state.attention_mode_used = (c > 0) ? cache->attention_mode_used : mode.kind;

    Tensor x = embedding_rows(param("token_embedding"), tokens);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        std::string p = "layers." + std::to_string(l) + ".";
        Tensor h = rms_norm(x, param(p + "attn_norm"), kNormEps);
        Tensor q = matmul(h, param(p + "wq"));
        Tensor k = matmul(h, param(p + "wk"));
        Tensor v = matmul(h, param(p + "wv"));

        auto& lkv = out_state.layers[l];
        lkv.k.resize(nh * s * dh);
        lkv.v.resize(nh * s * dh);

        std::vector<Tensor> head_ctx;
        head_ctx.reserve(nh);
        for (std::size_t hd = 0; hd < nh; ++hd) {
            Tensor qh = rope(slice_cols(q, hd * dh, (hd + 1) * dh), c);
            Tensor kh = rope(slice_cols(k, hd * dh, (hd + 1) * dh), c);
            Tensor vh = slice_cols(v, hd * dh, (hd + 1) * dh);

            Tensor k_full = kh, v_full = vh;
            if (c > 0) {
                const auto& ck = cache->layers[l];
                Tensor ck_t = Tensor::from_data(
                    {c, dh}, std::vector<double>(ck.k.begin() + hd * cache->token_count * dh,
                                                 ck.k.begin() + hd * cache->token_count * dh +
                                                     c * dh));
                Tensor cv_t = Tensor::from_data(
                    {c, dh}, std::vector<double>(ck.v.begin() + hd * cache->token_count * dh,
                                                 ck.v.begin() + hd * cache->token_count * dh +
                                                     c * dh));
                k_full = concat_rows({ck_t, kh});
                v_full = concat_rows({cv_t, vh});
            }
            std::copy(k_full.data().begin(), k_full.data().end(), lkv.k.begin() + hd * s * dh);
            std::copy(v_full.data().begin(), v_full.data().end(), lkv.v.begin() + hd * s * dh);

            Tensor scores = add(scale(matmul(qh, transpose(k_full)), score_scale), mask_t);
            head_ctx.push_back(matmul(softmax(scores), v_full));
        }
        x = add(x, matmul(concat_cols(head_ctx), param(p + "wo")));

        Tensor h2 = rms_norm(x, param(p + "ffn_norm"), kNormEps);
        x = add(x, matmul(gelu(matmul(h2, param(p + "w1"))), param(p + "w2")));
    }
    Tensor hidden = rms_norm(x, param("final_norm"), kNormEps);
    return {hidden, std::move(out_state)};
}

Tensor TransformerModel::lm_logits(const Tensor& hidden) const {
    return matmul(hidden, param("lm_head"));
}

Tensor pool(const Tensor& hidden, const std::vector<bool>& pool_mask, PoolingMode mode) {
    if (pool_mask.size() != hidden.rows())
        throw shape_error("pool: mask length must equal row count");
    std::vector<std::size_t> masked;
    for (std::size_t i = 0; i < pool_mask.size(); ++i)
        if (pool_mask[i]) masked.push_back(i);
    if (masked.empty()) throw degenerate_input_error("pool: empty pool mask");

    std::vector<double> w(pool_mask.size(), 0.0);
    switch (mode) {
        case PoolingMode::Mean:
            for (std::size_t i : masked) w[i] = 1.0 / static_cast<double>(masked.size());
            break;
        case PoolingMode::WeightedMean: {
            // Rank-proportional weights over masked positions (1-based).
            double total = static_cast<double>(masked.size()) *
                           static_cast<double>(masked.size() + 1) / 2.0;
            for (std::size_t r = 0; r < masked.size(); ++r)
                w[masked[r]] = static_cast<double>(r + 1) / total;
            break;
        }
        case PoolingMode::LastToken:
            w[masked.back()] = 1.0;
            break;
    }
    return pool_rows(hidden, w);
}

Tensor TransformerModel::embed(const FormattedSequence& seq, AttentionMode mode,
                               PoolingMode pooling) const {
    auto [hidden, state] = forward_hidden(seq.tokens, mode);
    Tensor pooled = pool(hidden, seq.pool_mask(), pooling);
    if (cfg_.embedding_head_dim > 0) {
        Tensor projected = matmul(reshape(pooled, {1, cfg_.d_model}), param("embed_head"));
        pooled = reshape(gelu(projected), {cfg_.embedding_head_dim});
    }
    return pooled;
}

GenResult TransformerModel::generate_greedy(const std::vector<int>& prompt, std::size_t max_new,
                                            const KVState* cache) const {
    NoGradGuard ng;
    GenResult res;
    res.stats.prefill_tokens = prompt.size();

    auto [hidden, state] = forward_hidden(prompt, AttentionMode::causal(), cache);
    std::vector<int> cur = prompt;
    while (res.tokens.size() < max_new) {
        Tensor last = slice_rows(hidden, hidden.rows() - 1, hidden.rows());
        Tensor logits = lm_logits(last);
        int best = 0;
        double best_v = logits.data()[0];
        for (std::size_t j = 1; j < logits.size(); ++j)
            if (logits.data()[j] > best_v) {
                best_v = logits.data()[j];
                best = static_cast<int>(j);
            }
        res.tokens.push_back(best);
        res.stats.decode_tokens++;
        if (best == tok::eos) break;
        if (state.token_count >= cfg_.max_seq_len) break;
        std::tie(hidden, state) = forward_hidden({best}, AttentionMode::causal(), &state);
    }
    res.state = std::move(state);
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "GRIT" magic, version, config, named f64 parameter blobs.

void save_checkpoint(const TransformerModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 4);
    std::string buf;
    put(buf, kCheckpointVersion);
    buf += config_bytes(model.config());
    put(buf, static_cast<std::uint32_t>(model.parameters().size()));
    for (const auto& [name, t] : model.parameters()) {
        put(buf, static_cast<std::uint32_t>(name.size()));
        buf += name;
        put(buf, static_cast<std::uint32_t>(t.shape().size()));
        for (std::size_t e : t.shape()) put(buf, static_cast<std::uint64_t>(e));
        buf.append(reinterpret_cast<const char*>(t.data().data()),
                   t.data().size() * sizeof(double));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("checkpoint write failed: " + path);
}

namespace {

struct Reader {
    std::ifstream in;
    std::string path;
    template <typename T>
    T get() {
        T v;
        in.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in) throw io_error("truncated checkpoint: " + path);
        return v;
    }
    std::string get_str(std::size_t n) {
        std::string s(n, '\0');
        in.read(s.data(), static_cast<std::streamsize>(n));
        if (!in) throw io_error("truncated checkpoint: " + path);
        return s;
    }
};

}  // namespace

TransformerModel load_checkpoint(const std::string& path) {
    Reader r{std::ifstream(path, std::ios::binary), path};
    if (!r.in) throw io_error("cannot open checkpoint: " + path);
    char magic[4];
    r.in.read(magic, 4);
    if (!r.in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw integrity_error("not a GRIT checkpoint: " + path);
    auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw integrity_error("unsupported checkpoint version " + std::to_string(version));

    ModelConfig cfg;
    cfg.d_model = static_cast<std::size_t>(r.get<std::uint64_t>());
    cfg.n_layers = static_cast<std::size_t>(r.get<std::uint64_t>());
    cfg.n_heads = static_cast<std::size_t>(r.get<std::uint64_t>());
    cfg.vocab_size = static_cast<std::size_t>(r.get<std::uint64_t>());
    cfg.max_seq_len = static_cast<std::size_t>(r.get<std::uint64_t>());
    cfg.ffn_multiplier = static_cast<std::size_t>(r.get<std::uint64_t>());
    cfg.embedding_head_dim = static_cast<std::size_t>(r.get<std::uint64_t>());
    cfg.rng_seed = r.get<std::uint64_t>();

    TransformerModel model(cfg);
    auto n_params = r.get<std::uint32_t>();
    if (n_params != model.parameters().size())
        throw integrity_error("checkpoint parameter count mismatch");
    for (std::uint32_t i = 0; i < n_params; ++i) {
        auto name_len = r.get<std::uint32_t>();
        std::string name = r.get_str(name_len);
        auto ndim = r.get<std::uint32_t>();
        std::vector<std::size_t> shape(ndim);
        for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
        Tensor& p = model.param(name);
        if (p.shape() != shape) throw integrity_error("checkpoint shape mismatch for " + name);
        r.in.read(reinterpret_cast<char*>(p.data().data()),
                  static_cast<std::streamsize>(p.size() * sizeof(double)));
        if (!r.in) throw io_error("truncated checkpoint: " + path);
    }
    return model;
}

const char* attention_kind_name(AttentionKind k) {
    switch (k) {
        case AttentionKind::Causal: return "causal";
        case AttentionKind::Bidirectional: return "bidirectional";
        case AttentionKind::PrefixBidirectional: return "prefix";
    }
    return "?";
}

AttentionKind attention_kind_from_name(const std::string& name) {
    if (name == "causal") return AttentionKind::Causal;
    if (name == "bidirectional") return AttentionKind::Bidirectional;
    if (name == "prefix") return AttentionKind::PrefixBidirectional;
    throw config_error("unknown attention mode: " + name +
                       " (expected causal|bidirectional|prefix)");
}

const char* pooling_mode_name(PoolingMode m) {
    switch (m) {
        case PoolingMode::Mean: return "mean";
        case PoolingMode::WeightedMean: return "weighted-mean";
        case PoolingMode::LastToken: return "last-token";
    }
    return "?";
}

PoolingMode pooling_mode_from_name(const std::string& name) {
    if (name == "mean") return PoolingMode::Mean;
    if (name == "weighted-mean") return PoolingMode::WeightedMean;
    if (name == "last-token") return PoolingMode::LastToken;
    throw config_error("unknown pooling mode: " + name +
                       " (expected mean|weighted-mean|last-token)");
}

}  // namespace grit
