#pragma once

// Test-only reference oracles, kept independent of the library code paths
// they check: exhaustive k-partition enumeration for KMeans, per-dimension
// scalar scans for pooling, direct-formula ranking metrics, and the expected
// MRR of a random ranking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace oracle {

// Minimum k-means objective over all assignments of m points into k
// non-empty clusters, by brute force. Feasible for m <= ~10, k <= 4.
inline double exhaustive_min_inertia(const std::vector<std::vector<double>>& points,
                                     std::size_t k,
                                     std::vector<int>* best_assignment = nullptr) {
    const std::size_t m = points.size();
    const std::size_t dim = points.front().size();
    std::vector<int> assign(m, 0);
    double best = std::numeric_limits<double>::infinity();

    std::size_t total = 1;
    for (std::size_t i = 0; i < m; ++i) total *= k;
    for (std::size_t code = 0; code < total; ++code) {
        std::size_t c = code;
        for (std::size_t i = 0; i < m; ++i) {
            assign[i] = static_cast<int>(c % k);
            c /= k;
        }
        std::vector<std::size_t> count(k, 0);
        for (int a : assign) count[static_cast<std::size_t>(a)]++;
        bool nonempty = true;
        for (std::size_t ci = 0; ci < k; ++ci) nonempty = nonempty && count[ci] > 0;
        if (!nonempty) continue;

        std::vector<std::vector<double>> mean(k, std::vector<double>(dim, 0.0));
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < dim; ++j) mean[assign[i]][j] += points[i][j];
        for (std::size_t ci = 0; ci < k; ++ci)
            for (std::size_t j = 0; j < dim; ++j) mean[ci][j] /= static_cast<double>(count[ci]);
        double inertia = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < dim; ++j) {
                const double d = points[i][j] - mean[assign[i]][j];
                inertia += d * d;
            }
        if (inertia < best) {
            best = inertia;
            if (best_assignment) *best_assignment = assign;
        }
    }
    return best;
}

// Per-dimension scalar scans for saturated pooling over a row span of a
// feature matrix given as nested vectors.
inline double saturate_scalar(double x) { return std::log1p(x > 0.0 ? x : 0.0); }

inline std::vector<double> pool_scan(const std::vector<std::vector<double>>& rows,
                                     std::size_t begin, std::size_t end,
                                     const std::string& strategy) {
    const std::size_t k = rows.front().size();
    std::vector<double> out(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        if (strategy == "max") {
            double best = saturate_scalar(rows[begin][j]);
            for (std::size_t i = begin + 1; i < end; ++i)
                best = std::max(best, saturate_scalar(rows[i][j]));
            out[j] = best;
        } else if (strategy == "sum") {
            double s = 0.0;
            for (std::size_t i = begin; i < end; ++i) s += saturate_scalar(rows[i][j]);
            out[j] = s;
        } else {
            out[j] = saturate_scalar(rows[end - 1][j]);
        }
    }
    return out;
}

// Direct-formula graded nDCG@k over an ordered doc-id list.
inline std::optional<double> ndcg_formula(const std::vector<std::string>& ranked_ids,
                                          const std::map<std::string, int>& grades,
                                          std::size_t k) {
    std::vector<int> positive;
    for (const auto& [id, g] : grades)
        if (g > 0) positive.push_back(g);
    if (positive.empty()) return std::nullopt;

    double dcg = 0.0;
    for (std::size_t r = 0; r < ranked_ids.size() && r < k; ++r) {
        auto it = grades.find(ranked_ids[r]);
        if (it == grades.end()) continue;
        dcg += (std::pow(2.0, it->second) - 1.0) /
               (std::log(static_cast<double>(r + 2)) / std::log(2.0));
    }
    std::sort(positive.rbegin(), positive.rend());
    double idcg = 0.0;
    for (std::size_t r = 0; r < positive.size() && r < k; ++r)
        idcg += (std::pow(2.0, positive[r]) - 1.0) /
                (std::log(static_cast<double>(r + 2)) / std::log(2.0));
    return dcg / idcg;
}

inline std::optional<double> mrr_formula(const std::vector<std::string>& ranked_ids,
                                         const std::map<std::string, int>& grades,
                                         std::size_t k) {
    bool any = false;
    for (const auto& [id, g] : grades) any = any || g > 0;
    if (!any) return std::nullopt;
    for (std::size_t r = 0; r < ranked_ids.size() && r < k; ++r) {
        auto it = grades.find(ranked_ids[r]);
        if (it != grades.end() && it->second > 0) return 1.0 / static_cast<double>(r + 1);
    }
    return 0.0;
}

// E[MRR@cutoff] of a uniformly random ranking of n_docs documents of which
// n_relevant are relevant: sum_r P(first relevant lands at rank r) / r.
inline double expected_random_mrr(std::size_t n_docs, std::size_t n_relevant,
                                  std::size_t cutoff) {
    if (n_relevant == 0) return 0.0;
    double expect = 0.0;
    double prob_all_irrelevant_so_far = 1.0;
    for (std::size_t r = 1; r <= cutoff && r <= n_docs; ++r) {
        const double remaining = static_cast<double>(n_docs - (r - 1));
        const double p_first_here =
            prob_all_irrelevant_so_far * static_cast<double>(n_relevant) / remaining;
        expect += p_first_here / static_cast<double>(r);
        const double irrelevant_left =
            static_cast<double>(n_docs - n_relevant) - static_cast<double>(r - 1);
        if (irrelevant_left <= 0.0) break;
        prob_all_irrelevant_so_far *= irrelevant_left / remaining;
    }
    return expect;
}

}  // namespace oracle
