#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace ceinfuse {

struct Doc {
    std::string id;
    std::string text;
};

// (query, positive, hard negatives) triple for contrastive / binary training.
struct TrainExample {
    std::string query;
    std::string positive;
    std::vector<std::string> negatives;
};

// query id -> judged-relevant doc ids
struct Qrels {
    std::map<std::string, std::set<std::string>> relevant;

    bool is_relevant(const std::string& query_id, const std::string& doc_id) const {
        auto it = relevant.find(query_id);
        return it != relevant.end() && it->second.count(doc_id) > 0;
    }

    bool has_query(const std::string& query_id) const { return relevant.count(query_id) > 0; }
};

// query id -> doc ids in rank order
using RunResults = std::map<std::string, std::vector<std::string>>;

}  // namespace ceinfuse
