#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "uqbench/csv.hpp"
#include "uqbench/rng.hpp"

namespace uqbench {

// ---------------------------------------------------------------------------
// Method and metric identifiers
// ---------------------------------------------------------------------------

enum class MethodId { MAP, MCD, Ensemble, SWAG, BBB, CP };

inline constexpr MethodId kAllMethods[] = {MethodId::MAP,  MethodId::MCD,
                                           MethodId::Ensemble, MethodId::SWAG,
                                           MethodId::BBB,  MethodId::CP};

inline const char* to_string(MethodId m) {
    switch (m) {
        case MethodId::MAP: return "MAP";
        case MethodId::MCD: return "MCD";
        case MethodId::Ensemble: return "Ensemble";
        case MethodId::SWAG: return "SWAG";
        case MethodId::BBB: return "BBB";
        case MethodId::CP: return "CP";
    }
    throw std::logic_error("unknown MethodId");
}

inline MethodId method_from_string(const std::string& s) {
    for (MethodId m : kAllMethods)
        if (s == to_string(m)) return m;
    throw std::invalid_argument("unknown method name: " + s);
}

enum class MetricId { CRPS, NLL, PICP, MPIW, IntervalScore };

inline constexpr MetricId kAllMetrics[] = {MetricId::CRPS, MetricId::NLL,
                                           MetricId::PICP, MetricId::MPIW,
                                           MetricId::IntervalScore};

inline const char* to_string(MetricId m) {
    switch (m) {
        case MetricId::CRPS: return "CRPS";
        case MetricId::NLL: return "NLL";
        case MetricId::PICP: return "PICP";
        case MetricId::MPIW: return "MPIW";
        case MetricId::IntervalScore: return "IntervalScore";
    }
    throw std::logic_error("unknown MetricId");
}

inline MetricId metric_from_string(const std::string& s) {
    for (MetricId m : kAllMetrics)
        if (s == to_string(m)) return m;
    throw std::invalid_argument("unknown metric name: " + s);
}

// ---------------------------------------------------------------------------
// MetricTable — per-(method, realization, n, metric) observations
// ---------------------------------------------------------------------------

struct CellKey {
    MethodId method;
    int realization;  // 1-based index i in 1..R
    int n;            // training size

    auto operator<=>(const CellKey&) const = default;
};

struct MetricKey {
    CellKey cell;
    MetricId metric;

    auto operator<=>(const MetricKey&) const = default;
};

inline std::string to_string(const MetricKey& k) {
    return std::string("(") + to_string(k.cell.method) + ", " +
           std::to_string(k.cell.realization) + ", " + std::to_string(k.cell.n) +
           ", " + to_string(k.metric) + ")";
}

struct CoveredCount {
    int covered = 0;  // k
    int test_size = 0;  // N_test
};

// Matrix slice handed to the hierarchical model: one row per retained method,
// one column per retained realization (paired across methods).
struct BhmSlice {
    std::vector<MethodId> methods;
    std::vector<int> realizations;
    std::vector<std::vector<double>> values;  // methods x realizations
    std::vector<std::vector<CoveredCount>> counts;  // same shape; PICP only
};

class MetricTable {
public:
    // pre: key absent. Duplicate inserts are rejected naming the key.
    void store(const MetricKey& key, double value) {
        auto [it, inserted] = entries_.emplace(key, value);
        (void)it;
        if (!inserted)
            throw std::invalid_argument("duplicate metric entry for " + to_string(key));
    }

    // PICP is kept as counts so the fraction k/N_test is reproducible exactly.
    void store_covered(const CellKey& cell, int covered, int test_size) {
        if (covered < 0 || test_size <= 0 || covered > test_size)
            throw std::invalid_argument("invalid covered count");
        auto [it, inserted] = covered_.emplace(cell, CoveredCount{covered, test_size});
        (void)it;
        if (!inserted)
            throw std::invalid_argument(
                "duplicate covered count for " +
                to_string(MetricKey{cell, MetricId::PICP}));
    }

    void set_converged(const CellKey& cell, bool ok) { converged_[cell] = ok; }

    std::optional<double> get(const MetricKey& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<CoveredCount> covered(const CellKey& cell) const {
        auto it = covered_.find(cell);
        if (it == covered_.end()) return std::nullopt;
        return it->second;
    }

    bool converged(const CellKey& cell) const {
        auto it = converged_.find(cell);
        return it == converged_.end() ? true : it->second;
    }

    const std::map<MetricKey, double>& entries() const { return entries_; }
    const std::map<CellKey, CoveredCount>& covered_counts() const { return covered_; }
    const std::map<CellKey, bool>& convergence_flags() const { return converged_; }

    std::vector<int> n_levels() const {
        std::set<int> ns;
        for (const auto& [k, v] : entries_) ns.insert(k.cell.n);
        return {ns.begin(), ns.end()};
    }

    std::vector<MethodId> methods_at(int n) const {
        std::set<MethodId> ms;
        for (const auto& [k, v] : entries_)
            if (k.cell.n == n) ms.insert(k.cell.method);
        return {ms.begin(), ms.end()};
    }

    // Fraction of realizations with converged = true, per (method, n).
    // Cells with no recorded runs are absent from the result.
    std::map<std::pair<MethodId, int>, double> convergence_rates() const {
        std::map<std::pair<MethodId, int>, std::pair<int, int>> tally;
        for (const auto& [cell, ok] : converged_) {
            auto& [good, total] = tally[{cell.method, cell.n}];
            total += 1;
            if (ok) good += 1;
        }
        std::map<std::pair<MethodId, int>, double> rates;
        for (const auto& [key, gt] : tally)
            rates[key] = static_cast<double>(gt.first) / static_cast<double>(gt.second);
        return rates;
    }

    // Rectangular (method x realization) slice for one (n, metric) cell.
    //
    // With exclude_unconverged set, a method whose convergence rate at this n
    // falls below min_rate is dropped entirely, and any realization where a
    // remaining method failed (or is missing) is dropped row-wise so the
    // paired structure across methods survives.
    BhmSlice slice_for_bhm(int n, MetricId metric, bool exclude_unconverged,
                           double min_rate = 0.80) const {
        const auto rates = convergence_rates();

        std::vector<MethodId> methods;
        for (MethodId m : methods_at(n)) {
            if (exclude_unconverged) {
                auto it = rates.find({m, n});
                if (it != rates.end() && it->second < min_rate) continue;
            }
            methods.push_back(m);
        }

        std::set<int> realization_union;
        for (const auto& [k, v] : entries_)
            if (k.cell.n == n && k.metric == metric) realization_union.insert(k.cell.realization);

        std::vector<int> realizations;
        for (int i : realization_union) {
            bool keep = true;
            for (MethodId m : methods) {
                const CellKey cell{m, i, n};
                if (!entries_.count(MetricKey{cell, metric}) ||
                    (exclude_unconverged && !converged(cell))) {
                    keep = false;
                    break;
                }
            }
            if (keep) realizations.push_back(i);
        }

        if (methods.size() < 2 || realizations.size() < 2) {
            throw std::runtime_error(
                "insufficient data for BHM slice at n=" + std::to_string(n) +
                ", metric=" + to_string(metric) + ": " +
                std::to_string(methods.size()) + " methods, " +
                std::to_string(realizations.size()) + " realizations survive filtering");
        }

        BhmSlice s;
        s.methods = methods;
        s.realizations = realizations;
        s.values.assign(methods.size(), std::vector<double>(realizations.size(), 0.0));
        if (metric == MetricId::PICP)
            s.counts.assign(methods.size(), std::vector<CoveredCount>(realizations.size()));
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            for (std::size_t ri = 0; ri < realizations.size(); ++ri) {
                const CellKey cell{methods[mi], realizations[ri], n};
                s.values[mi][ri] = entries_.at(MetricKey{cell, metric});
                if (metric == MetricId::PICP) {
                    auto c = covered(cell);
                    if (!c)
                        throw std::runtime_error("missing covered count for " +
                                                 to_string(MetricKey{cell, metric}));
                    s.counts[mi][ri] = *c;
                }
            }
        }
        return s;
    }

    // CSV layout: method, realization, n, metric, value, converged.
    CsvTable to_csv() const {
        CsvTable t;
        t.header = {"method", "realization", "n", "metric", "value", "converged"};
        for (const auto& [k, v] : entries_) {
            t.rows.push_back({to_string(k.cell.method), std::to_string(k.cell.realization),
                              std::to_string(k.cell.n), to_string(k.metric),
                              format_double(v), converged(k.cell) ? "1" : "0"});
        }
        return t;
    }

    CsvTable covered_to_csv() const {
        CsvTable t;
        t.header = {"method", "realization", "n", "covered", "n_test"};
        for (const auto& [cell, c] : covered_) {
            t.rows.push_back({to_string(cell.method), std::to_string(cell.realization),
                              std::to_string(cell.n), std::to_string(c.covered),
                              std::to_string(c.test_size)});
        }
        return t;
    }

    static MetricTable from_csv(const CsvTable& metrics, const CsvTable* covered = nullptr) {
        MetricTable table;
        for (const auto& row : metrics.rows) {
            const CellKey cell{method_from_string(row[0]), std::stoi(row[1]),
                               std::stoi(row[2])};
            table.store(MetricKey{cell, metric_from_string(row[3])},
                        std::strtod(row[4].c_str(), nullptr));
            table.converged_[cell] = (row[5] == "1");
        }
        if (covered) {
            for (const auto& row : covered->rows) {
                const CellKey cell{method_from_string(row[0]), std::stoi(row[1]),
                                   std::stoi(row[2])};
                if (!table.covered_.count(cell))
                    table.store_covered(cell, std::stoi(row[3]), std::stoi(row[4]));
            }
        }
        return table;
    }

    // Concurrent-append support: workers fill private tables, merged once
    // behind the freeze barrier.
    void merge(const MetricTable& other) {
        for (const auto& [k, v] : other.entries_) store(k, v);
        for (const auto& [cell, c] : other.covered_) store_covered(cell, c.covered, c.test_size);
        for (const auto& [cell, ok] : other.converged_) converged_[cell] = ok;
    }

private:
    std::map<MetricKey, double> entries_;
    std::map<CellKey, CoveredCount> covered_;
    std::map<CellKey, bool> converged_;
};

}  // namespace uqbench
