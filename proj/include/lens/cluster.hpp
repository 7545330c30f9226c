#pragma once

// KMeans over the output-head token embeddings. The resulting centroids
// become the replacement language-modeling head, shrinking the lexicon
// dimension from |V| to k while grouping case/space/subword variants of the
// same lexeme into shared dimensions.

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lens/common.hpp"
#include "lens/encoder.hpp"
#include "lens/vocab.hpp"

namespace lens {

struct ClusterHead {
    static constexpr int kUnclustered = -1;  // special tokens carry this

    std::size_t k = 0;
    Mat centroids;                        // k x d
    std::vector<int> assignment;          // per point (or per token id)
    std::vector<double> distances;        // Euclidean distance to assigned centroid
    double inertia = 0.0;                 // final sum of squared distances
    std::vector<double> inertia_history;  // one entry per Lloyd iteration
};

namespace detail {

inline std::vector<int> assign_points(const Mat& pts, const Mat& centroids) {
    std::vector<int> assign(pts.rows, 0);
    for (std::size_t i = 0; i < pts.rows; ++i) {
        double best = squared_distance(pts.row(i), centroids.row(0));
        int arg = 0;
        for (std::size_t c = 1; c < centroids.rows; ++c) {
            const double d = squared_distance(pts.row(i), centroids.row(c));
            if (d < best) {  // ties keep the lower cluster id
                best = d;
                arg = static_cast<int>(c);
            }
        }
        assign[i] = arg;
    }
    return assign;
}

// Empty clusters grab the point farthest from its current centroid, drawn
// only from clusters that can spare a member.
inline void repair_empty_clusters(const Mat& pts, Mat& centroids, std::vector<int>& assign) {
    const std::size_t k = centroids.rows;
    while (true) {
        std::vector<std::size_t> count(k, 0);
        for (int a : assign) count[static_cast<std::size_t>(a)]++;
        std::size_t empty = k;
        for (std::size_t c = 0; c < k; ++c)
            if (count[c] == 0) {
                empty = c;
                break;
            }
        if (empty == k) return;

        double worst = -1.0;
        std::size_t victim = pts.rows;
        for (std::size_t i = 0; i < pts.rows; ++i) {
            if (count[static_cast<std::size_t>(assign[i])] < 2) continue;
            const double d = squared_distance(pts.row(i), centroids.row(assign[i]));
            if (d > worst) {
                worst = d;
                victim = i;
            }
        }
        if (victim == pts.rows) return;  // k > m degenerate; caller rejects this earlier
        for (std::size_t j = 0; j < centroids.cols; ++j) centroids(empty, j) = pts(victim, j);
        assign[victim] = static_cast<int>(empty);
    }
}

inline Mat centroid_means(const Mat& pts, const std::vector<int>& assign, std::size_t k) {
    Mat c(k, pts.cols);
    std::vector<double> count(k, 0.0);
    for (std::size_t i = 0; i < pts.rows; ++i) {
        count[static_cast<std::size_t>(assign[i])] += 1.0;
        for (std::size_t j = 0; j < pts.cols; ++j) c(assign[i], j) += pts(i, j);
    }
    for (std::size_t ci = 0; ci < k; ++ci)
        if (count[ci] > 0.0)
            for (std::size_t j = 0; j < pts.cols; ++j) c(ci, j) /= count[ci];
    return c;
}

inline double total_inertia(const Mat& pts, const Mat& centroids, const std::vector<int>& assign) {
    double s = 0.0;
    for (std::size_t i = 0; i < pts.rows; ++i)
        s += squared_distance(pts.row(i), centroids.row(assign[i]));
    return s;
}

// Greedy k-means++: each new centroid is drawn from several D^2-weighted
// candidates, keeping the one that lowers the total potential most.
inline Mat kmeanspp_seed(const Mat& pts, std::size_t k, std::mt19937_64& rng) {
    Mat centroids(k, pts.cols);
    std::uniform_int_distribution<std::size_t> uniform(0, pts.rows - 1);
    const std::size_t first = uniform(rng);
    for (std::size_t j = 0; j < pts.cols; ++j) centroids(0, j) = pts(first, j);

    std::vector<double> d2(pts.rows);
    for (std::size_t i = 0; i < pts.rows; ++i)
        d2[i] = squared_distance(pts.row(i), centroids.row(0));

    const std::size_t n_trials =
        2 + static_cast<std::size_t>(std::log2(static_cast<double>(k) + 1.0));
    std::vector<double> cand_d2(pts.rows);
    for (std::size_t c = 1; c < k; ++c) {
        std::size_t best_pick = uniform(rng);
        double best_potential = std::numeric_limits<double>::infinity();
        std::vector<double> best_d2 = d2;
        for (std::size_t t = 0; t < n_trials; ++t) {
            const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
            std::size_t pick;
            if (total <= 0.0) {
                pick = uniform(rng);  // remaining mass sits on duplicate points
            } else {
                std::uniform_real_distribution<double> ur(0.0, total);
                double r = ur(rng);
                pick = pts.rows - 1;
                for (std::size_t i = 0; i < pts.rows; ++i) {
                    r -= d2[i];
                    if (r <= 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
            double potential = 0.0;
            for (std::size_t i = 0; i < pts.rows; ++i) {
                cand_d2[i] = std::min(d2[i], squared_distance(pts.row(i), pts.row(pick)));
                potential += cand_d2[i];
            }
            if (potential < best_potential) {
                best_potential = potential;
                best_pick = pick;
                best_d2 = cand_d2;
            }
        }
        for (std::size_t j = 0; j < pts.cols; ++j) centroids(c, j) = pts(best_pick, j);
        d2 = best_d2;
    }
    return centroids;
}

}  // namespace detail

namespace detail {

struct LloydResult {
    Mat centroids;
    std::vector<int> assignment;
    std::vector<double> inertia_history;
};

// Single-point relocation sweeps (Hartigan style). Lloyd's fixed points are
// only assignment-stable; relocation also accounts for the centroid shift a
// move causes, which escapes the two-cluster traps tiny instances hit. Every
// accepted move strictly lowers inertia, so the recorded history stays
// non-increasing. Stable states remain Lloyd-stable.
inline void relocation_refine(const Mat& pts, Mat& centroids, std::vector<int>& assign,
                              std::size_t max_sweeps, std::vector<double>& inertia_history) {
    const std::size_t k = centroids.rows;
    std::vector<double> count(k, 0.0);
    for (int a : assign) count[static_cast<std::size_t>(a)] += 1.0;

    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        bool moved = false;
        for (std::size_t i = 0; i < pts.rows; ++i) {
            const auto a = static_cast<std::size_t>(assign[i]);
            if (count[a] < 2.0) continue;  // never empty a cluster
            const double da2 = squared_distance(pts.row(i), centroids.row(a));
            const double removal_gain = count[a] / (count[a] - 1.0) * da2;
            double best_delta = -1e-12;  // strict improvement only
            std::size_t best_b = a;
            for (std::size_t b = 0; b < k; ++b) {
                if (b == a) continue;
                const double db2 = squared_distance(pts.row(i), centroids.row(b));
                const double delta = count[b] / (count[b] + 1.0) * db2 - removal_gain;
                if (delta < best_delta) {
                    best_delta = delta;
                    best_b = b;
                }
            }
            if (best_b == a) continue;
            // incremental centroid update for both clusters
            for (std::size_t j = 0; j < pts.cols; ++j) {
                centroids(a, j) = (centroids(a, j) * count[a] - pts(i, j)) / (count[a] - 1.0);
                centroids(best_b, j) =
                    (centroids(best_b, j) * count[best_b] + pts(i, j)) / (count[best_b] + 1.0);
            }
            count[a] -= 1.0;
            count[best_b] += 1.0;
            assign[i] = static_cast<int>(best_b);
            moved = true;
        }
        if (!moved) break;
        centroids = centroid_means(pts, assign, k);  // kill incremental drift
        inertia_history.push_back(total_inertia(pts, centroids, assign));
    }
}

inline LloydResult lloyd(const Mat& points, std::size_t k, std::mt19937_64& rng,
                         std::size_t max_iter, double tol) {
    LloydResult out;
    Mat centroids = kmeanspp_seed(points, k, rng);
    std::vector<int> assign = assign_points(points, centroids);
    repair_empty_clusters(points, centroids, assign);

    bool stable = false;
    for (std::size_t it = 0; it < max_iter; ++it) {
        const Mat old = centroids;
        centroids = centroid_means(points, assign, k);
        std::vector<int> next = assign_points(points, centroids);
        repair_empty_clusters(points, centroids, next);
        out.inertia_history.push_back(total_inertia(points, centroids, next));
        stable = (next == assign);
        assign = std::move(next);
        if (stable) break;
        double disp = 0.0;
        for (std::size_t c = 0; c < k; ++c)
            disp = std::max(disp, std::sqrt(squared_distance(old.row(c), centroids.row(c))));
        if (disp < tol) break;
    }
    if (!stable) {
        // tol or max_iter exit: make centroids exact means of the final
        // assignment so the ClusterHead invariant holds.
        centroids = centroid_means(points, assign, k);
        out.inertia_history.push_back(total_inertia(points, centroids, assign));
    }
    relocation_refine(points, centroids, assign, max_iter, out.inertia_history);
    out.centroids = std::move(centroids);
    out.assignment = std::move(assign);
    return out;
}

}  // namespace detail

// k-means++ seeded Lloyd iterations on Euclidean distance, run n_init times
// from one seeded generator with the lowest-inertia run kept. Each run
// terminates at an assignment fixed point (then centroids are exact member
// means and every point sits in its nearest cluster), at max centroid
// displacement < tol, or at max_iter.
inline ClusterHead kmeans(const Mat& points, std::size_t k, std::uint64_t seed,
                          std::size_t max_iter = 100, double tol = 1e-10,
                          std::size_t n_init = 4) {
    if (k > points.rows) throw UsageError("more clusters than points");
    if (k < 2) throw UsageError("k must be >= 2");
    if (max_iter < 1 || n_init < 1) throw UsageError("max_iter and n_init must be >= 1");
    if (!(tol > 0.0)) throw UsageError("tol must be > 0");
    if (!points.finite()) throw NumericError("non-finite input to kmeans");

    auto rng = make_rng(seed);
    detail::LloydResult best;
    for (std::size_t init = 0; init < n_init; ++init) {
        detail::LloydResult run = detail::lloyd(points, k, rng, max_iter, tol);
        if (init == 0 || run.inertia_history.back() < best.inertia_history.back())
            best = std::move(run);
    }

    ClusterHead out;
    out.k = k;
    out.centroids = std::move(best.centroids);
    out.assignment = std::move(best.assignment);
    out.inertia_history = std::move(best.inertia_history);
    out.inertia = out.inertia_history.back();
    out.distances.resize(points.rows);
    for (std::size_t i = 0; i < points.rows; ++i)
        out.distances[i] =
            std::sqrt(squared_distance(points.row(i), out.centroids.row(out.assignment[i])));
    return out;
}

// Clusters the original output-head rows of all non-special tokens and
// returns both the cluster bookkeeping (re-indexed by token id, specials
// mapped to kUnclustered) and the replacement head of width k.
inline std::pair<ClusterHead, OutputHead> build_centroid_head(const EncoderModel& model,
                                                              std::size_t k, std::uint64_t seed,
                                                              std::size_t max_iter = 100,
                                                              double tol = 1e-10) {
    if (model.head.kind != HeadKind::original)
        throw UsageError("head already replaced by centroids");
    const std::size_t vocab = model.head.matrix.rows;
    const std::size_t n_special = Vocabulary::kNumSpecials;
    if (vocab <= n_special) throw DataError("vocabulary has no clusterable tokens");

    Mat pts(vocab - n_special, model.head.matrix.cols);
    for (std::size_t i = n_special; i < vocab; ++i)
        for (std::size_t j = 0; j < pts.cols; ++j) pts(i - n_special, j) = model.head.matrix(i, j);

    ClusterHead raw = kmeans(pts, k, seed, max_iter, tol);

    ClusterHead by_token;
    by_token.k = raw.k;
    by_token.centroids = std::move(raw.centroids);
    by_token.inertia = raw.inertia;
    by_token.inertia_history = std::move(raw.inertia_history);
    by_token.assignment.assign(vocab, ClusterHead::kUnclustered);
    by_token.distances.assign(vocab, -1.0);
    for (std::size_t p = 0; p < pts.rows; ++p) {
        by_token.assignment[p + n_special] = raw.assignment[p];
        by_token.distances[p + n_special] = raw.distances[p];
    }

    OutputHead head;
    head.kind = HeadKind::centroid;
    head.matrix = by_token.centroids;
    return {std::move(by_token), std::move(head)};
}

// ---------------------------------------------------------------------------
// Inspection (Appendix-A style dumps) and the variant-cohesion metric.

struct ClusterRow {
    int cluster_id = 0;
    std::vector<int> member_ids;  // ordered by distance to centroid, then id
};

inline ClusterRow cluster_members(const Vocabulary& v, const ClusterHead& head, int cluster_id) {
    if (cluster_id < 0 || static_cast<std::size_t>(cluster_id) >= head.k)
        throw DataError("cluster id out of range: " + std::to_string(cluster_id));
    if (head.assignment.size() != v.size())
        throw DataError("cluster head does not cover this vocabulary");
    ClusterRow row;
    row.cluster_id = cluster_id;
    for (std::size_t id = 0; id < head.assignment.size(); ++id)
        if (head.assignment[id] == cluster_id) row.member_ids.push_back(static_cast<int>(id));
    std::sort(row.member_ids.begin(), row.member_ids.end(), [&](int a, int b) {
        const double da = head.distances[static_cast<std::size_t>(a)];
        const double db = head.distances[static_cast<std::size_t>(b)];
        if (da != db) return da < db;
        return a < b;
    });
    return row;
}

inline std::vector<ClusterRow> inspect_clusters(const Vocabulary& v, const ClusterHead& head,
                                                const std::vector<int>& cluster_ids) {
    std::vector<ClusterRow> rows;
    rows.reserve(cluster_ids.size());
    for (int c : cluster_ids) rows.push_back(cluster_members(v, head, c));
    return rows;
}

// The top_n clusters by member count (ties to the lower id).
inline std::vector<ClusterRow> inspect_top_clusters(const Vocabulary& v, const ClusterHead& head,
                                                    std::size_t top_n) {
    std::vector<std::pair<std::size_t, int>> sizes;  // (count, id)
    std::vector<std::size_t> count(head.k, 0);
    for (int a : head.assignment)
        if (a != ClusterHead::kUnclustered) count[static_cast<std::size_t>(a)]++;
    for (std::size_t c = 0; c < head.k; ++c) sizes.push_back({count[c], static_cast<int>(c)});
    std::sort(sizes.begin(), sizes.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> ids;
    for (std::size_t i = 0; i < std::min(top_n, sizes.size()); ++i) ids.push_back(sizes[i].second);
    return inspect_clusters(v, head, ids);
}

inline std::string format_cluster_report(const Vocabulary& v, const std::vector<ClusterRow>& rows) {
    std::ostringstream os;
    for (const auto& row : rows) {
        os << "cluster " << row.cluster_id << " (" << row.member_ids.size() << "):";
        for (int id : row.member_ids) os << " \"" << v.token(id) << "\"";
        os << '\n';
    }
    return os.str();
}

// Fraction of variant pairs whose members land in the same cluster.
inline double variant_cohesion(const Vocabulary& v, const ClusterHead& head,
                               const std::vector<std::pair<std::string, std::string>>& pairs) {
    if (pairs.empty()) throw UsageError("no variant pairs supplied");
    std::size_t together = 0;
    for (const auto& [a, b] : pairs) {
        const int ia = v.id_of(a);
        const int ib = v.id_of(b);
        const int ca = head.assignment[static_cast<std::size_t>(ia)];
        const int cb = head.assignment[static_cast<std::size_t>(ib)];
        if (ca != ClusterHead::kUnclustered && ca == cb) ++together;
    }
    return static_cast<double>(together) / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Cluster map file: header "k=<k> vocab=<|V|>", then one line per token:
// <token_id>\t<cluster_id>\t<token_string>.

inline void save_cluster_map(const ClusterHead& head, const Vocabulary& v,
                             const std::string& path) {
    if (head.assignment.size() != v.size())
        throw DataError("cluster head does not cover this vocabulary");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    out << "k=" << head.k << " vocab=" << v.size() << "\n";
    for (std::size_t id = 0; id < v.size(); ++id)
        out << id << '\t' << head.assignment[id] << '\t' << v.tokens[id] << "\n";
}

struct ClusterMap {
    std::size_t k = 0;
    std::size_t vocab_size = 0;
    std::vector<int> assignment;
};

inline ClusterMap load_cluster_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open cluster map: " + path);
    ClusterMap map;
    std::string header;
    if (!std::getline(in, header)) throw DataError("cluster map empty");
    if (std::sscanf(header.c_str(), "k=%zu vocab=%zu", &map.k, &map.vocab_size) != 2)
        throw DataError("bad cluster map header: " + header);
    map.assignment.assign(map.vocab_size, ClusterHead::kUnclustered);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw DataError("bad cluster map line: " + line);
        const std::size_t id = std::stoul(line.substr(0, t1));
        const int cid = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
        if (id >= map.vocab_size || cid >= static_cast<int>(map.k))
            throw DataError("cluster map entry out of range: " + line);
        map.assignment[id] = cid;
    }
    return map;
}

// Reconstructs centroids (member means of the original head rows) and
// distances from a saved map plus a checkpoint that still carries the
// original head.
inline ClusterHead rebuild_cluster_head(const EncoderModel& model, const ClusterMap& map) {
    if (model.head.kind != HeadKind::original)
        throw UsageError("rebuilding a cluster head needs the original output head");
    if (model.head.matrix.rows != map.vocab_size)
        throw DataError("cluster map vocabulary size does not match model");
    ClusterHead head;
    head.k = map.k;
    head.assignment = map.assignment;
    head.centroids = Mat(map.k, model.head.matrix.cols);
    std::vector<double> count(map.k, 0.0);
    for (std::size_t id = 0; id < map.vocab_size; ++id) {
        const int c = map.assignment[id];
        if (c == ClusterHead::kUnclustered) continue;
        count[static_cast<std::size_t>(c)] += 1.0;
        for (std::size_t j = 0; j < head.centroids.cols; ++j)
            head.centroids(c, j) += model.head.matrix(id, j);
    }
    for (std::size_t c = 0; c < map.k; ++c) {
        if (count[c] == 0.0) throw DataError("cluster map has an empty cluster");
        for (std::size_t j = 0; j < head.centroids.cols; ++j) head.centroids(c, j) /= count[c];
    }
    head.distances.assign(map.vocab_size, -1.0);
    head.inertia = 0.0;
    for (std::size_t id = 0; id < map.vocab_size; ++id) {
        const int c = map.assignment[id];
        if (c == ClusterHead::kUnclustered) continue;
        const double d2 =
            squared_distance(model.head.matrix.row(id), head.centroids.row(c));
        head.distances[id] = std::sqrt(d2);
        head.inertia += d2;
    }
    head.inertia_history = {head.inertia};
    return head;
}

}  // namespace lens
