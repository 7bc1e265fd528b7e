#include "ct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

namespace ct::metrics {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
    if (num_classes <= 0) throw EmptyError("confusion matrix needs at least one class");
    counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

void ConfusionMatrix::add(int truth, int predicted, std::int64_t count) {
    if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_)
        throw LabelError("confusion matrix: label (" + std::to_string(truth) + "," +
                         std::to_string(predicted) + ") out of range [0," + std::to_string(k_) + ")");
    if (count < 0) throw DomainError("confusion matrix: negative count");
    counts_[static_cast<std::size_t>(truth) * k_ + predicted] += count;
}

ConfusionMatrix ConfusionMatrix::from_pairs(int num_classes, const std::vector<int>& truth,
                                            const std::vector<int>& predicted) {
    if (truth.size() != predicted.size())
        throw ShapeError("confusion matrix: truth/prediction length mismatch");
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
    return cm;
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
}

std::int64_t ConfusionMatrix::truth_count(int c) const {
    std::int64_t n = 0;
    for (int p = 0; p < k_; ++p) n += at(c, p);
    return n;
}

std::int64_t ConfusionMatrix::predicted_count(int c) const {
    std::int64_t n = 0;
    for (int t = 0; t < k_; ++t) n += at(t, c);
    return n;
}

double macro_f1(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw EmptyError("macro_f1: empty confusion matrix");
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < cm.num_classes(); ++c) {
        const std::int64_t support = cm.truth_count(c);
        if (support == 0) continue;  // absent classes are excluded from the mean
        ++present;
        const std::int64_t tp = cm.at(c, c);
        const std::int64_t fp = cm.predicted_count(c) - tp;
        const std::int64_t fn = support - tp;
        const double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        sum += precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return sum / static_cast<double>(present);
}

double imbalance_ratio(const std::vector<std::int64_t>& counts) {
    if (counts.empty()) throw EmptyError("imbalance_ratio: no counts");
    std::int64_t lo = counts[0], hi = counts[0];
    for (std::int64_t c : counts) {
        if (c <= 0)
            throw DomainError("imbalance_ratio: class count must be >= 1, got " + std::to_string(c));
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }
    return static_cast<double>(hi) / static_cast<double>(lo);
}

int aggregate_compound(int irf, int orf, int mis, int unb) {
    const int vals[4] = {irf, orf, mis, unb};
    for (int i = 0; i < 4; ++i)
        if (vals[i] < 0 || vals[i] >= kCompoundRadices[static_cast<std::size_t>(i)])
            throw LabelError("aggregate_compound: component " + std::to_string(i) + " value " +
                             std::to_string(vals[i]) + " out of radix " +
                             std::to_string(kCompoundRadices[static_cast<std::size_t>(i)]));
    return ((irf * 2 + orf) * 3 + mis) * 3 + unb;
}

std::array<int, 4> decompose_compound(int index) {
    if (index < 0 || index >= kCompoundClasses)
        throw LabelError("decompose_compound: index " + std::to_string(index) + " out of [0,36)");
    std::array<int, 4> out{};
    out[3] = index % 3;
    index /= 3;
    out[2] = index % 3;
    index /= 3;
    out[1] = index % 2;
    out[0] = index / 2;
    return out;
}

std::vector<RankEntry> rank_table(const std::vector<std::pair<std::string, double>>& means) {
    if (means.size() < 2) throw ConfigError("rank_table: needs at least two architectures");
    for (const auto& [name, score] : means)
        if (std::isnan(score)) throw DomainError("rank_table: NaN score for '" + name + "'");
    std::vector<RankEntry> out;
    out.reserve(means.size());
    for (const auto& [name, score] : means) out.push_back({name, score, 0});
    std::sort(out.begin(), out.end(), [](const RankEntry& a, const RankEntry& b) {
        if (a.mean_score != b.mean_score) return a.mean_score > b.mean_score;
        return a.name < b.name;
    });
    int rank = 0;
    double prev = std::numeric_limits<double>::infinity();
    for (auto& e : out) {
        if (e.mean_score != prev) {
            ++rank;  // dense: next distinct score gets the next rank
            prev = e.mean_score;
        }
        e.rank = rank;
    }
    return out;
}

void RunReport::add(const std::string& arch, std::uint64_t seed, const std::string& task,
                    double score) {
    cells.push_back({arch, seed, task, score});
}

std::vector<std::string> RunReport::architectures() const {
    std::vector<std::string> out;
    for (const auto& c : cells)
        if (std::find(out.begin(), out.end(), c.arch) == out.end()) out.push_back(c.arch);
    return out;
}

double RunReport::mean_for(const std::string& arch, const std::string& task) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& c : cells)
        if (c.arch == arch && c.task == task) {
            sum += c.score;
            ++n;
        }
    if (n == 0) throw EmptyError("report: no cells for " + arch + "/" + task);
    return sum / n;
}

std::vector<RankEntry> RunReport::ranks() const {
    std::vector<std::pair<std::string, double>> means;
    for (const auto& a : architectures()) means.emplace_back(a, mean_for(a, headline_task));
    return rank_table(means);
}

void RunReport::write_json(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["headline_task"] = headline_task;
    for (const auto& c : cells)
        j["cells"].push_back({{"arch", c.arch}, {"seed", c.seed}, {"task", c.task}, {"score", c.score}});
    for (const auto& a : architectures()) {
        nlohmann::json m;
        std::set<std::string> tasks;
        for (const auto& c : cells)
            if (c.arch == a) tasks.insert(c.task);
        for (const auto& t : tasks) m[t] = mean_for(a, t);
        j["means"][a] = m;
    }
    for (const auto& e : ranks())
        j["ranks"].push_back({{"arch", e.name}, {"mean", e.mean_score}, {"rank", e.rank}});
    std::ofstream f(path);
    if (!f) throw IoError("cannot write report: " + path.string());
    f << j.dump(2) << "\n";
}

void RunReport::write_table(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write table: " + path.string());
    std::set<std::uint64_t> seeds;
    std::set<std::string> tasks;
    for (const auto& c : cells) {
        seeds.insert(c.seed);
        tasks.insert(c.task);
    }
    f << "arch\ttask\tmean";
    for (auto s : seeds) f << "\tseed" << s;
    f << "\n";
    for (const auto& a : architectures())
        for (const auto& t : tasks) {
            f << a << "\t" << t << "\t" << mean_for(a, t);
            for (auto s : seeds) {
                bool found = false;
                for (const auto& c : cells)
                    if (c.arch == a && c.task == t && c.seed == s) {
                        f << "\t" << c.score;
                        found = true;
                        break;
                    }
                if (!found) f << "\t-";
            }
            f << "\n";
        }
}

}  // namespace ct::metrics
