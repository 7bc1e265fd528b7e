#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ct/errors.hpp"

// Class-imbalance-aware evaluation: macro F1 over a confusion matrix,
// imbalance ratio, mixed-radix compound-label aggregation, multi-seed
// aggregation and dense ranking of architectures.

namespace ct::metrics {

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    void add(int truth, int predicted, std::int64_t count = 1);
    static ConfusionMatrix from_pairs(int num_classes, const std::vector<int>& truth,
                                      const std::vector<int>& predicted);

    int num_classes() const { return k_; }
    std::int64_t total() const;
    std::int64_t at(int truth, int predicted) const {
        return counts_[static_cast<std::size_t>(truth) * k_ + predicted];
    }
    std::int64_t truth_count(int c) const;
    std::int64_t predicted_count(int c) const;

private:
    int k_;
    std::vector<std::int64_t> counts_;  // rows = true class, cols = predicted
};

// Unweighted mean of per-class F1 over classes present in the truth. A class
// that is present but never correctly predicted contributes F1 = 0; classes
// with zero truth support are excluded from the mean.
double macro_f1(const ConfusionMatrix& cm);

// max(counts) / min(counts); every included class must have count >= 1.
double imbalance_ratio(const std::vector<std::int64_t>& counts);

inline constexpr std::array<int, 4> kCompoundRadices{2, 2, 3, 3};
inline constexpr int kCompoundClasses = 36;

// Mixed-radix compound index: ((irf*2 + orf)*3 + mis)*3 + unb.
int aggregate_compound(int irf, int orf, int mis, int unb);
std::array<int, 4> decompose_compound(int index);

struct RankEntry {
    std::string name;
    double mean_score = 0.0;
    int rank = 0;
};

// Descending by score; dense ranks; exact ties share the better rank.
std::vector<RankEntry> rank_table(const std::vector<std::pair<std::string, double>>& means);

// Per (architecture, seed, task) macro-F1 collection with per-architecture
// seed means and a rank table on the headline task.
struct RunReport {
    struct Cell {
        std::string arch;
        std::uint64_t seed = 0;
        std::string task;
        double score = 0.0;
    };
    std::vector<Cell> cells;
    std::string headline_task;

    void add(const std::string& arch, std::uint64_t seed, const std::string& task, double score);
    std::vector<std::string> architectures() const;
    // Mean over seeds of one task's score for one architecture.
    double mean_for(const std::string& arch, const std::string& task) const;
    std::vector<RankEntry> ranks() const;

    void write_json(const std::filesystem::path& path) const;
    // Tab-separated score table, one row per (arch, task): mean then per-seed.
    void write_table(const std::filesystem::path& path) const;
};

}  // namespace ct::metrics
