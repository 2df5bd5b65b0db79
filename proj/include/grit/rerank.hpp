#pragma once

#include <string>
#include <vector>

#include "grit/index.hpp"
#include "grit/model.hpp"

namespace grit {

enum class RerankMethod { PairwiseLogProb, PermutationGeneration };

struct RerankConfig {
    std::size_t k = 10;  // candidates fed to the reranker
    RerankMethod method = RerankMethod::PairwiseLogProb;
};

struct RerankOutcome {
    std::vector<std::size_t> order;  // permutation of 0..n-1, best first
    std::vector<double> scores;      // pairwise method only, aligned with input
    bool parse_warning = false;      // listwise output was unusable; original order kept
};

// Cross-encoder reranking of candidate texts for a query. Pairwise scores
// each candidate by the mean log-probability of answering "Yes" to a
// relevance question; listwise asks the model for a "[2] > [1] > [3]"
// ranking and degrades to the original order when unparseable.
RerankOutcome rerank(const TransformerModel& model, const std::string& query,
                     const std::vector<std::string>& candidates, const RerankConfig& cfg);

// Bi-encoder retrieval over the whole corpus, then rerank the top cfg.k;
// documents beyond k keep their retrieval order.
std::vector<std::size_t> retrieve_then_rerank(const TransformerModel& model,
                                              const DocumentIndex& index,
                                              const std::string& query, const RerankConfig& cfg,
                                              PoolingMode pooling = PoolingMode::Mean);

struct EvalRecord {
    std::string query;
    std::vector<std::string> docs;
    std::vector<double> rels;  // graded, nonnegative, aligned with docs
};

std::vector<EvalRecord> load_eval_records(const std::string& path);

const char* rerank_method_name(RerankMethod m);
RerankMethod rerank_method_from_name(const std::string& name);

}  // namespace grit
