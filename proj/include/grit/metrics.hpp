#pragma once

#include <string>
#include <vector>

namespace grit {

// nDCG@k with gain 2^rel - 1 and log2(rank+1) discount; 0 when no candidate
// is relevant.
double ndcg_at_k(const std::vector<double>& ranked_relevances, std::size_t k);

// Mean of precision-at-hit over binary relevances in ranked order.
double map_score(const std::vector<int>& ranked_binary_relevances);

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// True iff any answer occurs as a substring of the generation,
// case-insensitively after whitespace normalization.
bool match_metric(const std::string& generation, const std::vector<std::string>& answers);

}  // namespace grit
