#include "grit/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>

#include <json.hpp>

#include "grit/errors.hpp"

namespace grit {

namespace {

const int kNl = tok::byte_offset + '\n';

void append_bytes(std::vector<int>& out, const std::string& s) {
    for (int id : tok::tokenize(s)) out.push_back(id);
}

// <|user|>\n{content}\n<|assistant|>\n
std::vector<int> judgment_prompt(const std::string& content) {
    std::vector<int> t{tok::user, kNl};
    append_bytes(t, content);
    t.push_back(kNl);
    t.push_back(tok::assistant);
    t.push_back(kNl);
    return t;
}

// Mean log-probability of `continuation` bytes following `prompt`.
double continuation_logprob(const TransformerModel& model, const std::vector<int>& prompt,
                            const std::string& continuation) {
    NoGradGuard ng;
    std::vector<int> cont = tok::tokenize(continuation);
    std::vector<int> full = prompt;
    full.insert(full.end(), cont.begin(), cont.end());
    auto [hidden, kv] = model.forward_hidden(full, AttentionMode::causal());
    Tensor logits = model.lm_logits(hidden);
    std::size_t vocab = model.config().vocab_size;
    const std::vector<double>& d = logits.data();
    long double total = 0.0L;
    for (std::size_t j = 0; j < cont.size(); ++j) {
        std::size_t row = prompt.size() + j - 1;  // row r predicts token r+1
        const double* r = d.data() + row * vocab;
        long double mx = r[0];
        for (std::size_t v = 1; v < vocab; ++v) mx = std::max<long double>(mx, r[v]);
        long double z = 0.0L;
        for (std::size_t v = 0; v < vocab; ++v) z += std::exp(static_cast<long double>(r[v]) - mx);
        total += static_cast<long double>(r[cont[j]]) - mx - std::log(z);
    }
    return static_cast<double>(total / static_cast<long double>(cont.size()));
}

RerankOutcome rerank_pairwise(const TransformerModel& model, const std::string& query,
                              const std::vector<std::string>& candidates) {
    RerankOutcome out;
    out.scores.resize(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto prompt = judgment_prompt("Query: " + query + "\nPassage: " + candidates[i] +
                                      "\nIs the passage relevant to the query? Answer Yes or No.");
        out.scores[i] = continuation_logprob(model, prompt, "Yes");
    }
    out.order.resize(candidates.size());
    std::iota(out.order.begin(), out.order.end(), 0);
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](std::size_t a, std::size_t b) { return out.scores[a] > out.scores[b]; });
    return out;
}

RerankOutcome rerank_listwise(const TransformerModel& model, const std::string& query,
                              const std::vector<std::string>& candidates) {
    std::string body = "Rank the following passages by relevance to the query.\nQuery: " + query;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        body += "\n[" + std::to_string(i + 1) + "] " + candidates[i];
    body += "\nAnswer with a ranking like [2] > [1] > [3].";
    auto prompt = judgment_prompt(body);
    prompt.insert(prompt.begin(), tok::bos);

    GenResult gen = model.generate_greedy(prompt, 6 * candidates.size() + 8);
    // Keep only byte tokens; a wandering generation may emit special tokens.
    std::string text;
    for (int id : gen.tokens)
        if (id >= tok::byte_offset && id < tok::vocab_size)
            text.push_back(static_cast<char>(id - tok::byte_offset));

    RerankOutcome out;
    std::vector<bool> seen(candidates.size(), false);
    static const std::regex idx_re(R"(\[(\d+)\])");
    for (auto it = std::sregex_iterator(text.begin(), text.end(), idx_re);
         it != std::sregex_iterator(); ++it) {
        unsigned long v = std::stoul((*it)[1].str());
        if (v >= 1 && v <= candidates.size() && !seen[v - 1]) {
            seen[v - 1] = true;
            out.order.push_back(v - 1);
        }
    }
    if (out.order.empty()) out.parse_warning = true;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (!seen[i]) out.order.push_back(i);
    return out;
}

}  // namespace

RerankOutcome rerank(const TransformerModel& model, const std::string& query,
                     const std::vector<std::string>& candidates, const RerankConfig& cfg) {
    if (candidates.empty()) throw input_error("rerank: no candidates");
    if (cfg.k < 1) throw config_error("rerank: k must be at least 1");
    if (candidates.size() == 1) {
        RerankOutcome out;
        out.order = {0};
        out.scores = {0.0};
        return out;
    }
    return cfg.method == RerankMethod::PairwiseLogProb
               ? rerank_pairwise(model, query, candidates)
               : rerank_listwise(model, query, candidates);
}

std::vector<std::size_t> retrieve_then_rerank(const TransformerModel& model,
                                              const DocumentIndex& index,
                                              const std::string& query, const RerankConfig& cfg,
                                              PoolingMode pooling) {
    NoGradGuard ng;
    FormattedSequence seq = format_embedding(std::nullopt, query);
    Tensor q = model.embed(seq, AttentionMode{index.embed_attention(), 0}, pooling);
    auto hits = retrieve(index, q.data(), index.doc_count());

    std::size_t k = std::min<std::size_t>(cfg.k, hits.size());
    std::vector<std::string> cands(k);
    for (std::size_t i = 0; i < k; ++i) cands[i] = index.text(hits[i].doc);

    std::vector<std::size_t> ranked;
    ranked.reserve(hits.size());
    if (k >= 2) {
        RerankOutcome out = rerank(model, query, cands, cfg);
        for (std::size_t i : out.order) ranked.push_back(hits[i].doc);
    } else {
        for (std::size_t i = 0; i < k; ++i) ranked.push_back(hits[i].doc);
    }
    for (std::size_t i = k; i < hits.size(); ++i) ranked.push_back(hits[i].doc);
    return ranked;
}

std::vector<EvalRecord> load_eval_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open eval file: " + path);
    std::vector<EvalRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            EvalRecord rec;
            rec.query = j.at("query").get<std::string>();
            for (const auto& d : j.at("docs")) rec.docs.push_back(d.get<std::string>());
            for (const auto& r : j.at("rels")) rec.rels.push_back(r.get<double>());
            if (rec.docs.size() != rec.rels.size())
                throw parse_error("docs/rels length mismatch");
            for (double r : rec.rels)
                if (r < 0.0) throw parse_error("negative relevance");
            out.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw parse_error("eval line " + std::to_string(lineno) + ": " + e.what());
        } catch (const parse_error& e) {
            throw parse_error("eval line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

const char* rerank_method_name(RerankMethod m) {
    return m == RerankMethod::PairwiseLogProb ? "pairwise-logprob" : "permutation-generation";
}

RerankMethod rerank_method_from_name(const std::string& name) {
    if (name == "pairwise-logprob") return RerankMethod::PairwiseLogProb;
    if (name == "permutation-generation") return RerankMethod::PermutationGeneration;
    throw usage_error("unknown rerank method '" + name +
                      "' (valid: pairwise-logprob, permutation-generation)");
}

}  // namespace grit
