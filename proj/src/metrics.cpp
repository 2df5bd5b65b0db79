#include "grit/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "grit/errors.hpp"

namespace grit {

double ndcg_at_k(const std::vector<double>& ranked_relevances, std::size_t k) {
    if (ranked_relevances.empty()) throw input_error("ndcg_at_k: empty input");
    for (double r : ranked_relevances)
        if (r < 0.0) throw input_error("ndcg_at_k: negative relevance");
    auto dcg = [&](const std::vector<double>& rels) {
        double acc = 0.0;
        for (std::size_t i = 0; i < std::min(k, rels.size()); ++i)
            acc += (std::pow(2.0, rels[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
        return acc;
    };
    std::vector<double> ideal = ranked_relevances;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = dcg(ideal);
    if (idcg == 0.0) return 0.0;  // all-zero relevances
    return dcg(ranked_relevances) / idcg;
}

double map_score(const std::vector<int>& ranked_binary_relevances) {
    if (ranked_binary_relevances.empty()) throw input_error("map_score: empty input");
    double acc = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ranked_binary_relevances.size(); ++i) {
        if (ranked_binary_relevances[i]) {
            ++hits;
            acc += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    if (hits == 0) return 0.0;
    return acc / static_cast<double>(hits);
}

namespace {

// Average ranks with ties sharing the mean of their rank range.
std::vector<double> average_ranks(const std::vector<double>& x) {
    std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw input_error("spearman: inputs must have equal length >= 2");
    auto rx = average_ranks(x), ry = average_ranks(y);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(rx.size());
    my /= static_cast<double>(ry.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        throw degenerate_input_error("spearman: constant input vector");
    return sxy / std::sqrt(sxx * syy);
}

namespace {

// Lowercase and collapse any whitespace run to a single space.
std::string normalize(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool in_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out.push_back(' ');
        in_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

}  // namespace

bool match_metric(const std::string& generation, const std::vector<std::string>& answers) {
    if (answers.empty()) throw input_error("match_metric: no answers");
    std::string g = normalize(generation);
    for (const std::string& a : answers) {
        std::string na = normalize(a);
        if (na.empty()) continue;
        if (g.find(na) != std::string::npos) return true;
    }
    return false;
}

}  // namespace grit
