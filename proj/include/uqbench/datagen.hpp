#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "uqbench/csv.hpp"
#include "uqbench/rng.hpp"

namespace uqbench {

inline const std::vector<int> kPaperNLevels = {30, 50, 100, 200, 500};

// ---------------------------------------------------------------------------
// Dataset — standardized features/targets with a fixed final-30% test split
// ---------------------------------------------------------------------------
struct Dataset {
    std::string id;
    Eigen::MatrixXd X;  // N x d, standardized by pool statistics
    Eigen::VectorXd y;  // N, standardized by pool statistics
    std::vector<bool> test_mask;          // true for the fixed test rows
    std::vector<std::size_t> pool_indices;  // the remaining 70%

    // Pool statistics used for standardization; raw = std * sd + mean.
    Eigen::VectorXd feature_mean, feature_sd;
    double target_mean = 0.0, target_sd = 1.0;

    std::size_t size() const { return static_cast<std::size_t>(X.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(X.cols()); }
    std::size_t pool_size() const { return pool_indices.size(); }

    std::vector<std::size_t> test_indices() const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < test_mask.size(); ++i)
            if (test_mask[i]) idx.push_back(i);
        return idx;
    }

    Eigen::MatrixXd test_X() const {
        const auto idx = test_indices();
        Eigen::MatrixXd out(idx.size(), X.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = X.row(idx[i]);
        return out;
    }

    Eigen::VectorXd test_y() const {
        const auto idx = test_indices();
        Eigen::VectorXd out(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) out(i) = y(idx[i]);
        return out;
    }

    // Digest of the test rows; stages compare it to detect accidental
    // re-randomization of the fixed split.
    std::uint64_t test_digest() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix_double = [&h](double v) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, sizeof(bits));
            h ^= bits;
            h *= 0x100000001b3ULL;
        };
        for (std::size_t i = 0; i < size(); ++i) {
            if (!test_mask[i]) continue;
            for (Eigen::Index j = 0; j < X.cols(); ++j) mix_double(X(i, j));
            mix_double(y(i));
        }
        return h;
    }
};

// One training subsample: n indices drawn from the pool without replacement.
struct Realization {
    int r = 0;
    int n = 0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> train_indices;
};

namespace detail {

// Standardize in place using pool rows only; returns the applied statistics.
inline void standardize_by_pool(Dataset& ds) {
    const auto& pool = ds.pool_indices;
    const double np = static_cast<double>(pool.size());
    const Eigen::Index d = ds.X.cols();

    ds.feature_mean = Eigen::VectorXd::Zero(d);
    ds.feature_sd = Eigen::VectorXd::Ones(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        double m = 0.0;
        for (std::size_t i : pool) m += ds.X(i, j);
        m /= np;
        double v = 0.0;
        for (std::size_t i : pool) v += (ds.X(i, j) - m) * (ds.X(i, j) - m);
        double sd = std::sqrt(v / np);
        if (sd < 1e-12) sd = 1.0;
        ds.feature_mean(j) = m;
        ds.feature_sd(j) = sd;
        for (Eigen::Index i = 0; i < ds.X.rows(); ++i)
            ds.X(i, j) = (ds.X(i, j) - m) / sd;
    }

    double m = 0.0;
    for (std::size_t i : pool) m += ds.y(i);
    m /= np;
    double v = 0.0;
    for (std::size_t i : pool) v += (ds.y(i) - m) * (ds.y(i) - m);
    double sd = std::sqrt(v / np);
    if (sd < 1e-12) sd = 1.0;
    ds.target_mean = m;
    ds.target_sd = sd;
    for (Eigen::Index i = 0; i < ds.y.size(); ++i) ds.y(i) = (ds.y(i) - m) / sd;
}

inline void apply_final_fraction_split(Dataset& ds, double test_fraction) {
    const std::size_t n = ds.size();
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * n));
    ds.test_mask.assign(n, false);
    for (std::size_t i = n - n_test; i < n; ++i) ds.test_mask[i] = true;
    ds.pool_indices.clear();
    for (std::size_t i = 0; i < n - n_test; ++i) ds.pool_indices.push_back(i);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Synthetic heteroscedastic regression task
//
// x ~ N(0, I_8), y = w'x + eps with eps ~ N(0, sigma(x)^2) and
// sigma(x) = 0.3 + 0.5|x_1|. 1200 rows; the final 360 are the fixed test set.
// ---------------------------------------------------------------------------
struct SyntheticConfig {
    std::uint64_t global_seed = 42;
    int total = 1200;
    double noise_amplitude = 1.0;  // test hook; 0 makes y = w'x exactly
    bool standardize = true;
};

inline const double kSyntheticWeights[8] = {1.5, -2.0, 0.5, 1.0, -0.5, 0.3, -1.2, 0.8};

inline double synthetic_noise_sd(double x1) { return 0.3 + 0.5 * std::fabs(x1); }

inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
    const int d = 8;
    Dataset ds;
    ds.id = "synthetic";
    ds.X.resize(cfg.total, d);
    ds.y.resize(cfg.total);

    RngStream rng(cfg.global_seed, "datagen/synthetic");
    for (int i = 0; i < cfg.total; ++i) {
        for (int j = 0; j < d; ++j) ds.X(i, j) = rng.normal();
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += kSyntheticWeights[j] * ds.X(i, j);
        const double z = rng.normal();
        ds.y(i) = mu + cfg.noise_amplitude * synthetic_noise_sd(ds.X(i, 0)) * z;
    }

    detail::apply_final_fraction_split(ds, 0.30);
    if (cfg.standardize) {
        detail::standardize_by_pool(ds);
    } else {
        ds.feature_mean = Eigen::VectorXd::Zero(d);
        ds.feature_sd = Eigen::VectorXd::Ones(d);
    }
    return ds;
}

inline Dataset generate_synthetic(std::uint64_t global_seed) {
    SyntheticConfig cfg;
    cfg.global_seed = global_seed;
    return generate_synthetic(cfg);
}

// ---------------------------------------------------------------------------
// CSV datasets: header row, all-numeric columns, explicit target column.
// Rows are shuffled with a seeded stream, then the final 30% of the shuffled
// order become the fixed test set; the seed is recorded in the manifest.
// ---------------------------------------------------------------------------
inline Dataset load_csv_dataset(const std::string& path, const std::string& target_column,
                                double test_fraction = 0.30,
                                std::uint64_t global_seed = 42) {
    const CsvTable t = read_csv(path);
    const int target_col = t.column(target_column);
    if (target_col < 0)
        throw std::runtime_error("target column '" + target_column + "' not found in " + path);
    if (t.rows.empty()) throw std::runtime_error("no data rows in " + path);

    const std::size_t n = t.rows.size();
    const std::size_t d = t.header.size() - 1;

    Eigen::MatrixXd X(n, d);
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (t.rows[i].size() != t.header.size())
            throw std::runtime_error("row " + std::to_string(i + 1) + " has " +
                                     std::to_string(t.rows[i].size()) + " fields, expected " +
                                     std::to_string(t.header.size()));
        std::size_t jx = 0;
        for (std::size_t j = 0; j < t.header.size(); ++j) {
            const double v = parse_numeric_cell(t.rows[i][j], i + 1, j + 1);
            if (static_cast<int>(j) == target_col)
                y(i) = v;
            else
                X(i, jx++) = v;
        }
    }

    // Seeded shuffle, then final-fraction split on the shuffled order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream rng(global_seed, "datagen/csv-split");
    rng.shuffle(order);

    Dataset ds;
    ds.id = path;
    ds.X.resize(n, d);
    ds.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ds.X.row(i) = X.row(order[i]);
        ds.y(i) = y(order[i]);
    }
    detail::apply_final_fraction_split(ds, test_fraction);
    detail::standardize_by_pool(ds);
    return ds;
}

// ---------------------------------------------------------------------------
// Seeded subsampling protocol: R independent draws of n pool rows each
// ---------------------------------------------------------------------------
inline std::vector<Realization> draw_realizations(const Dataset& ds, int n, int R,
                                                  std::uint64_t global_seed,
                                                  SeedMixing mixing = SeedMixing::Mixed) {
    if (R < 1) throw std::invalid_argument("R must be >= 1");
    if (static_cast<std::size_t>(n) > ds.pool_size()) {
        std::string feasible;
        for (int level : kPaperNLevels) {
            if (static_cast<std::size_t>(level) <= ds.pool_size()) {
                if (!feasible.empty()) feasible += ", ";
                feasible += std::to_string(level);
            }
        }
        throw std::invalid_argument("n=" + std::to_string(n) + " exceeds the training pool (" +
                                    std::to_string(ds.pool_size()) +
                                    " rows); feasible n levels: " + feasible);
    }

    std::vector<Realization> out;
    out.reserve(R);
    for (int r = 1; r <= R; ++r) {
        Realization re;
        re.r = r;
        re.n = n;
        re.seed = derive_realization_seed(global_seed, static_cast<std::uint64_t>(r),
                                          static_cast<std::uint64_t>(n), mixing);
        RngStream rng(re.seed, "realization");
        const auto picks = rng.sample_without_replacement(ds.pool_size(), n);
        re.train_indices.reserve(picks.size());
        for (std::size_t p : picks) re.train_indices.push_back(ds.pool_indices[p]);
        out.push_back(std::move(re));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset cache: one CSV holding rows + split mask so later stages never
// re-randomize the split.
// ---------------------------------------------------------------------------
inline void save_dataset_cache(const Dataset& ds, const std::string& path) {
    CsvTable t;
    for (std::size_t j = 0; j < ds.dim(); ++j) t.header.push_back("x" + std::to_string(j));
    t.header.push_back("y");
    t.header.push_back("is_test");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::vector<std::string> row;
        for (Eigen::Index j = 0; j < ds.X.cols(); ++j) row.push_back(format_double(ds.X(i, j)));
        row.push_back(format_double(ds.y(i)));
        row.push_back(ds.test_mask[i] ? "1" : "0");
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

inline Dataset load_dataset_cache(const std::string& path, const std::string& id) {
    const CsvTable t = read_csv(path);
    const std::size_t n = t.rows.size();
    const std::size_t d = t.header.size() - 2;
    Dataset ds;
    ds.id = id;
    ds.X.resize(n, d);
    ds.y.resize(n);
    ds.test_mask.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j)
            ds.X(i, j) = std::strtod(t.rows[i][j].c_str(), nullptr);
        ds.y(i) = std::strtod(t.rows[i][d].c_str(), nullptr);
        ds.test_mask[i] = (t.rows[i][d + 1] == "1");
        if (!ds.test_mask[i]) ds.pool_indices.push_back(i);
    }
    ds.feature_mean = Eigen::VectorXd::Zero(d);
    ds.feature_sd = Eigen::VectorXd::Ones(d);
    return ds;
}

}  // namespace uqbench
