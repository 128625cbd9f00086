#include "registerscope/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "registerscope/errors.hpp"
#include "registerscope/parallel.hpp"
#include "registerscope/rng.hpp"
#include "registerscope/sampling.hpp"

namespace regscope {

namespace {

constexpr std::uint64_t kIslandStream = 0x151A'0D5CULL;
constexpr std::uint64_t kPcaInitStream = 0x9CA0ULL;
constexpr std::size_t kPcaBlock = 6;

void check_indices(const DenseMatrix& decoder, std::span<const std::uint32_t> features) {
    for (auto f : features) {
        if (f >= decoder.rows()) {
            throw DataError("feature " + std::to_string(f) + " outside decoder with " +
                            std::to_string(decoder.rows()) + " rows");
        }
    }
}

// Selected rows scaled to unit length, in double.
std::vector<std::vector<double>> unit_rows(const DenseMatrix& decoder, std::span<const std::uint32_t> features) {
    check_indices(decoder, features);
    std::vector<std::vector<double>> rows;
    rows.reserve(features.size());
    for (auto f : features) {
        const auto src = decoder.row(f);
        std::vector<double> row(src.begin(), src.end());
        double norm = 0.0;
        for (double v : row) norm += v * v;
        norm = std::sqrt(norm);
        if (norm == 0.0) throw ComputeError("zero-norm decoder row " + std::to_string(f));
        for (double& v : row) v /= norm;
        rows.push_back(std::move(row));
    }
    return rows;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

double clamp_cosine(double c) noexcept { return std::clamp(c, -1.0, 1.0); }

double mean_within(const std::vector<std::vector<double>>& rows) {
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            sum += clamp_cosine(dot(rows[i], rows[j]));
            ++pairs;
        }
    }
    return pairs ? sum / static_cast<double>(pairs) : 0.0;
}

double normalize(std::vector<double>& v) {
    const double n = std::sqrt(dot(v, v));
    if (n > 0.0) {
        for (double& e : v) e /= n;
    }
    return n;
}

// Modified Gram-Schmidt; a vector that collapses is replaced by a fresh
// random one so the block keeps full rank.
void orthonormalize(std::vector<std::vector<double>>& q, StreamRng& rng) {
    for (std::size_t b = 0; b < q.size(); ++b) {
        for (int attempt = 0; attempt < 16; ++attempt) {
            for (std::size_t a = 0; a < b; ++a) {
                const double proj = dot(q[a], q[b]);
                for (std::size_t i = 0; i < q[b].size(); ++i) q[b][i] -= proj * q[a][i];
            }
            if (normalize(q[b]) > 1e-12) break;
            for (double& e : q[b]) e = rng.normal();
        }
    }
}

struct SymmetricEigen {
    std::vector<double> values;
    std::vector<double> vectors;     // row-major n x n, eigenvectors in columns
    std::vector<std::size_t> order;  // column indices by descending eigenvalue
};

// Cyclic Jacobi rotations; n is small (the iteration block).
SymmetricEigen symmetric_eigen(std::vector<double> a, std::size_t n) {
    SymmetricEigen out;
    out.vectors.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
        }
        if (off == 0.0) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t r = p + 1; r < n; ++r) {
                const double apr = a[p * n + r];
                if (apr == 0.0) continue;
                const double theta = (a[r * n + r] - a[p * n + p]) / (2.0 * apr);
                const double t = std::copysign(1.0, theta) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p];
                    const double akr = a[k * n + r];
                    a[k * n + p] = c * akp - s * akr;
                    a[k * n + r] = s * akp + c * akr;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k];
                    const double ark = a[r * n + k];
                    a[p * n + k] = c * apk - s * ark;
                    a[r * n + k] = s * apk + c * ark;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = out.vectors[k * n + p];
                    const double vkr = out.vectors[k * n + r];
                    out.vectors[k * n + p] = c * vkp - s * vkr;
                    out.vectors[k * n + r] = s * vkp + c * vkr;
                }
            }
        }
    }
    out.values.resize(n);
    out.order.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.values[i] = a[i * n + i];
        out.order[i] = i;
    }
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](std::size_t x, std::size_t y) { return out.values[x] > out.values[y]; });
    return out;
}

double mean_cross(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    double sum = 0.0;
    for (const auto& x : a) {
        for (const auto& y : b) sum += clamp_cosine(dot(x, y));
    }
    return sum / static_cast<double>(a.size() * b.size());
}

}  // namespace

DenseMatrix SimilarityMatrix::to_dense() const {
    const std::size_t n = size();
    return DenseMatrix(n, n, std::vector<float>(values.begin(), values.end()));
}

SimilarityMatrix pairwise_cosine(const DenseMatrix& decoder, std::span<const std::uint32_t> features,
                                 unsigned threads) {
    const auto rows = unit_rows(decoder, features);
    const std::size_t m = rows.size();
    SimilarityMatrix out;
    out.features.assign(features.begin(), features.end());
    out.values.assign(m * m, 0.0);
    parallel_for(m, threads, [&](std::size_t i) {
        out.values[i * m + i] = 1.0;
        for (std::size_t j = i + 1; j < m; ++j) out.values[i * m + j] = clamp_cosine(dot(rows[i], rows[j]));
    });
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < i; ++j) out.values[i * m + j] = out.values[j * m + i];
    }
    return out;
}

double guarded_ratio(double numerator, double denominator, double epsilon, bool& flagged) noexcept {
    if (std::fabs(denominator) >= epsilon) {
        flagged = false;
        return numerator / denominator;
    }
    flagged = true;
    if (std::fabs(numerator) < epsilon) return 0.0;
    return std::copysign(kIslandScoreCap, numerator);
}

GeometryReport island_score(const DenseMatrix& decoder, std::span<const std::uint32_t> core,
                            const IslandConfig& config) {
    const std::set<std::uint32_t> core_set(core.begin(), core.end());
    if (core_set.size() < 2) throw DataError("island score needs a core of at least 2 features");
    if (config.random_n < 2) throw DataError("island score needs at least 2 random features");
    check_indices(decoder, core);

    GeometryReport report;
    report.feature_set.assign(core_set.begin(), core_set.end());
    report.seed = config.seed;
    report.random_n = config.random_n;
    report.epsilon = config.epsilon;

    StreamRng rng(config.seed, kIslandStream);
    report.random_set =
        sample_without_replacement(static_cast<std::uint32_t>(decoder.rows()), config.random_n, core_set, rng);

    const auto core_rows = unit_rows(decoder, report.feature_set);
    const auto random_rows = unit_rows(decoder, report.random_set);

    // The three means are independent; run them side by side when allowed.
    parallel_for(3, config.threads, [&](std::size_t which) {
        switch (which) {
            case 0: report.within_mean = mean_within(core_rows); break;
            case 1: report.cross_mean = mean_cross(core_rows, random_rows); break;
            default: report.random_within_mean = mean_within(random_rows); break;
        }
    });

    report.island_score_cross =
        guarded_ratio(report.within_mean, report.cross_mean, config.epsilon, report.cross_flagged);
    report.island_score_baseline =
        guarded_ratio(report.within_mean, report.random_within_mean, config.epsilon, report.baseline_flagged);
    return report;
}

ProjectionCoords pca_project(const DenseMatrix& decoder, std::span<const std::uint32_t> features) {
    check_indices(decoder, features);
    const std::size_t m = features.size();
    const std::size_t d = decoder.cols();
    if (m < 3) throw DataError("projection needs at least 3 vectors");
    if (d < 2) throw DataError("projection needs dimension >= 2");

    std::vector<std::vector<double>> x(m, std::vector<double>(d));
    std::vector<double> centroid(d, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const auto row = decoder.row(features[i]);
        for (std::size_t c = 0; c < d; ++c) {
            x[i][c] = row[c];
            centroid[c] += row[c];
        }
    }
    for (double& c : centroid) c /= static_cast<double>(m);
    for (auto& row : x) {
        for (std::size_t c = 0; c < d; ++c) row[c] -= centroid[c];
    }

    std::vector<double> gram(m * m);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i; j < m; ++j) {
            const double g = dot(x[i], x[j]);
            gram[i * m + j] = g;
            gram[j * m + i] = g;
        }
        total += gram[i * m + i];
    }
    if (!(total > 0.0)) throw ComputeError("selection has rank < 1 (all vectors identical)");

    const std::size_t block = std::min<std::size_t>(m, kPcaBlock);
    auto multiply = [&](const std::vector<double>& v) {
        std::vector<double> out(m, 0.0);
        for (std::size_t i = 0; i < m; ++i) out[i] = dot(std::span(gram).subspan(i * m, m), v);
        return out;
    };

    StreamRng rng(0, kPcaInitStream);
    std::vector<std::vector<double>> q(block, std::vector<double>(m));
    for (auto& v : q) {
        for (double& e : v) e = rng.normal();
    }
    orthonormalize(q, rng);

    ProjectionCoords out;
    std::array<double, 2> lambda{0.0, 0.0};
    std::array<std::vector<double>, 2> ritz;

    for (std::size_t it = 1; it <= kPcaMaxIterations; ++it) {
        std::vector<std::vector<double>> z(block);
        for (std::size_t b = 0; b < block; ++b) z[b] = multiply(q[b]);
        // Rayleigh-Ritz on span(q): H = Q^T G Q.
        std::vector<double> h(block * block);
        for (std::size_t a = 0; a < block; ++a) {
            for (std::size_t b = a; b < block; ++b) {
                const double v = 0.5 * (dot(q[a], z[b]) + dot(q[b], z[a]));
                h[a * block + b] = v;
                h[b * block + a] = v;
            }
        }
        const auto eig = symmetric_eigen(h, block);
        double residual = 0.0;
        for (std::size_t k = 0; k < 2; ++k) {
            const std::size_t col = eig.order[k];
            lambda[k] = std::max(0.0, eig.values[col]);
            ritz[k].assign(m, 0.0);
            std::vector<double> g_ritz(m, 0.0);
            for (std::size_t b = 0; b < block; ++b) {
                const double w = eig.vectors[b * block + col];
                for (std::size_t i = 0; i < m; ++i) {
                    ritz[k][i] += w * q[b][i];
                    g_ritz[i] += w * z[b][i];
                }
            }
            double r2 = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const double d_i = g_ritz[i] - eig.values[col] * ritz[k][i];
                r2 += d_i * d_i;
            }
            residual = std::max(residual, std::sqrt(r2));
        }
        out.iterations = it;
        if (residual <= kPcaTolerance * std::max(lambda[0], 1e-300)) {
            out.converged = true;
            break;
        }
        q = std::move(z);
        orthonormalize(q, rng);
    }

    // Component k in feature space: X^T u_k / sqrt(lambda_k).
    const double rank_floor = 1e-12 * total;
    for (std::size_t k = 0; k < 2; ++k) {
        std::vector<double> v(d, 0.0);
        if (lambda[k] > rank_floor) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t c = 0; c < d; ++c) v[c] += x[i][c] * ritz[k][i];
            }
            normalize(v);
        } else {
            if (k == 0) throw ComputeError("selection has rank < 1");
            // Rank-1 selection: any unit vector orthogonal to the first axis.
            const auto& v1 = out.components[0];
            std::size_t pick = 0;
            for (std::size_t c = 1; c < d; ++c) {
                if (std::fabs(v1[c]) < std::fabs(v1[pick])) pick = c;
            }
            v[pick] = 1.0;
            const double proj = dot(v, v1);
            for (std::size_t c = 0; c < d; ++c) v[c] -= proj * v1[c];
            normalize(v);
            lambda[k] = 0.0;
        }
        std::size_t largest = 0;
        for (std::size_t c = 1; c < d; ++c) {
            if (std::fabs(v[c]) > std::fabs(v[largest])) largest = c;
        }
        if (v[largest] < 0.0) {
            for (double& e : v) e = -e;
        }
        out.components[k] = std::move(v);
    }

    out.features.assign(features.begin(), features.end());
    out.coords.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        out.coords.push_back({dot(x[i], out.components[0]), dot(x[i], out.components[1])});
    }
    out.explained_variance = {lambda[0] / total, lambda[1] / total};
    return out;
}

}  // namespace regscope
