#pragma once

// On-disk data formats shared by the trainer, the evaluation harness and the
// CLI: JSONL corpus/query files, TREC-style qrels, JSONL training records,
// flat key=value config files, and CSV reports.

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lens/common.hpp"
#include "lens/train.hpp"

namespace lens {

struct Doc {
    std::string id;
    std::string text;
};

struct QueryRecord {
    std::string id;
    std::string task;
    std::string text;
};

// query id -> (doc id -> grade)
using Qrels = std::map<std::string, std::map<std::string, int>>;

inline std::vector<Doc> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus: " + path);
    std::vector<Doc> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            docs.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (docs.empty()) throw DataError("corpus is empty: " + path);
    return docs;
}

inline void save_corpus(const std::vector<Doc>& docs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    for (const auto& d : docs)
        out << nlohmann::json{{"id", d.id}, {"text", d.text}}.dump() << "\n";
}

inline std::vector<QueryRecord> load_queries(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open queries: " + path);
    std::vector<QueryRecord> qs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            qs.push_back({j.at("id").get<std::string>(),
                          j.value("task", std::string()),
                          j.at("text").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (qs.empty()) throw DataError("query file is empty: " + path);
    return qs;
}

inline void save_queries(const std::vector<QueryRecord>& qs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    for (const auto& q : qs)
        out << nlohmann::json{{"id", q.id}, {"task", q.task}, {"text", q.text}}.dump() << "\n";
}

// TREC qrels: "query_id 0 doc_id grade"
inline Qrels load_qrels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open qrels: " + path);
    Qrels q;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string qid, zero, did;
        int grade = 0;
        if (!(is >> qid >> zero >> did >> grade)) throw DataError("bad qrels line: " + line);
        if (grade < 0) throw DataError("negative grade in qrels: " + line);
        q[qid][did] = grade;
    }
    return q;
}

inline void save_qrels(const Qrels& q, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    for (const auto& [qid, docs] : q)
        for (const auto& [did, grade] : docs) out << qid << " 0 " << did << ' ' << grade << "\n";
}

// Training records: JSONL with task/query/pos/neg, optional teacher_scores,
// dataset tag. Malformed lines are skipped and counted; callers enforce the
// >10% failure rule.
inline std::vector<TrainingExample> load_training_records(const std::string& path,
                                                          std::size_t* malformed = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open training data: " + path);
    std::vector<TrainingExample> out;
    std::size_t bad = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            TrainingExample e;
            e.task_definition = j.value("task", std::string());
            e.query = j.at("query").get<std::string>();
            e.positive = j.at("pos").get<std::string>();
            for (const auto& n : j.value("neg", nlohmann::json::array()))
                e.negatives.push_back(n.get<std::string>());
            e.dataset_tag = j.value("dataset", std::string("default"));
            if (j.contains("teacher_scores")) {
                std::vector<double> ts;
                for (const auto& s : j.at("teacher_scores")) ts.push_back(s.get<double>());
                if (ts.size() != e.negatives.size() + 1)
                    throw DataError("teacher_scores length mismatch");
                e.teacher_scores = std::move(ts);
            }
            if (e.query.empty() || e.positive.empty()) throw DataError("empty query or positive");
            out.push_back(std::move(e));
        } catch (const std::exception&) {
            ++bad;
        }
    }
    if (malformed) *malformed = bad;
    return out;
}

inline void save_training_records(const std::vector<TrainingExample>& records,
                                  const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    for (const auto& e : records) {
        nlohmann::json j{{"task", e.task_definition},
                         {"query", e.query},
                         {"pos", e.positive},
                         {"neg", e.negatives},
                         {"dataset", e.dataset_tag}};
        if (e.teacher_scores) j["teacher_scores"] = *e.teacher_scores;
        out << j.dump() << "\n";
    }
}

// Flat key=value config. '#' starts a comment; blank lines ignored.
struct KeyValueConfig {
    std::map<std::string, std::string> kv;

    bool has(const std::string& key) const { return kv.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& dflt) const {
        auto it = kv.find(key);
        return it == kv.end() ? dflt : it->second;
    }
    double get_double(const std::string& key, double dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw UsageError("config key '" + key + "' is not a number: " + it->second);
        }
    }
    long long get_int(const std::string& key, long long dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        try {
            return std::stoll(it->second);
        } catch (const std::exception&) {
            throw UsageError("config key '" + key + "' is not an integer: " + it->second);
        }
    }
    bool get_bool(const std::string& key, bool dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "off" || v == "no") return false;
        throw UsageError("config key '" + key + "' is not a boolean: " + v);
    }

    void set(const std::string& key, const std::string& value) { kv[key] = value; }
};

inline KeyValueConfig parse_config_text(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
        std::size_t b = 0;
        while (b < line.size() && line[b] == ' ') ++b;
        if (b == line.size()) continue;
        const auto eq = line.find('=', b);
        if (eq == std::string::npos) throw UsageError("bad config line: " + line);
        std::string key = line.substr(b, eq - b);
        while (!key.empty() && key.back() == ' ') key.pop_back();
        std::size_t vb = eq + 1;
        while (vb < line.size() && line[vb] == ' ') ++vb;
        cfg.kv[key] = line.substr(vb);
    }
    return cfg;
}

inline KeyValueConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    for (std::size_t i = 0; i < header.size(); ++i)
        out << header[i] << (i + 1 == header.size() ? "\n" : ",");
    for (const auto& row : rows)
        for (std::size_t i = 0; i < row.size(); ++i)
            out << row[i] << (i + 1 == row.size() ? "\n" : ",");
}

}  // namespace lens
