#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "detox/error.hpp"
#include "detox/text.hpp"

namespace detox {

/// Row-major dense matrix, just enough for the PPMI factorization.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Word -> vector map with a fixed dimensionality.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return words_.size(); }
    const std::vector<std::string>& words() const noexcept { return words_; }

    void add(const std::string& word, std::span<const double> vec) {
        if (vec.size() != dim_) throw InvalidArgument("embedding '" + word + "' has wrong dimension");
        for (double x : vec)
            if (!std::isfinite(x)) throw InvalidArgument("embedding '" + word + "' has non-finite entry");
        if (!index_.emplace(word, words_.size()).second) throw InvalidArgument("duplicate embedding for '" + word + "'");
        words_.push_back(word);
        data_.insert(data_.end(), vec.begin(), vec.end());
    }

    std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

    std::optional<std::span<const double>> find(std::string_view word) const {
        auto it = index_.find(std::string(word));
        if (it == index_.end()) return std::nullopt;
        return row(it->second);
    }

    bool operator==(const EmbeddingTable& o) const { return dim_ == o.dim_ && words_ == o.words_ && data_ == o.data_; }

private:
    std::size_t dim_ = 0;
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Cosine similarity; 0 when either vector is zero.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a), nb = norm(b);
    if (na == 0 || nb == 0) return 0.0;
    return dot(a, b) / (na * nb);
}

/// Mean of the vectors of in-table tokens; all zeros when none is covered.
inline std::vector<double> mean_vector(const Tokens& tokens, const EmbeddingTable& emb) {
    std::vector<double> mean(emb.dim(), 0.0);
    std::size_t n = 0;
    for (const auto& t : tokens) {
        if (auto v = emb.find(t)) {
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (*v)[i];
            ++n;
        }
    }
    if (n)
        for (auto& x : mean) x /= static_cast<double>(n);
    return mean;
}

inline double sentence_similarity(const Tokens& a, const Tokens& b, const EmbeddingTable& emb) {
    const auto ma = mean_vector(a, emb);
    const auto mb = mean_vector(b, emb);
    return std::clamp(cosine(ma, mb), 0.0, 1.0);
}

/// Symmetric-window co-occurrence counts turned into positive PMI. Rows/cols are vocabulary ids.
inline DenseMatrix ppmi_matrix(const std::vector<Tokens>& corpus, const Vocabulary& vocab, int window) {
    if (window < 1) throw InvalidArgument("ppmi: window must be >= 1");
    const std::size_t n = vocab.size();
    DenseMatrix counts(n, n);
    double total = 0;
    for (const auto& sentence : corpus) {
        const auto ids = vocab.encode(sentence);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (Vocabulary::is_special(ids[i])) continue;
            const std::size_t lo = i >= static_cast<std::size_t>(window) ? i - window : 0;
            const std::size_t hi = std::min(ids.size(), i + window + 1);
            for (std::size_t j = lo; j < hi; ++j) {
                if (j == i || Vocabulary::is_special(ids[j])) continue;
                counts(ids[i], ids[j]) += 1;
                total += 1;
            }
        }
    }
    if (total == 0) throw DegenerateInput("ppmi: corpus too small for window (no co-occurrences)");
    std::vector<double> row_sum(n, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) row_sum[r] += counts(r, c);
    DenseMatrix ppmi(n, n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            const double joint = counts(r, c);
            if (joint == 0) continue;
            ppmi(r, c) = std::max(0.0, std::log(joint * total / (row_sum[r] * row_sum[c])));
        }
    }
    return ppmi;
}

/// A ~= U diag(S) V^T with singular values in non-increasing order.
struct TruncatedSvd {
    DenseMatrix u;  // rows x k
    std::vector<double> singular_values;
    DenseMatrix v;  // cols x k
};

namespace detail {

// Orthonormalizes the columns of q in place (modified Gram-Schmidt). Collapsed columns are
// replaced by fresh random directions so the basis keeps full rank.
inline void orthonormalize_columns(DenseMatrix& q, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss;
    for (std::size_t c = 0; c < q.cols; ++c) {
        for (int attempt = 0; attempt < 8; ++attempt) {
            for (std::size_t p = 0; p < c; ++p) {
                double d = 0;
                for (std::size_t r = 0; r < q.rows; ++r) d += q(r, p) * q(r, c);
                for (std::size_t r = 0; r < q.rows; ++r) q(r, c) -= d * q(r, p);
            }
            double nrm = 0;
            for (std::size_t r = 0; r < q.rows; ++r) nrm += q(r, c) * q(r, c);
            nrm = std::sqrt(nrm);
            if (nrm > 1e-12) {
                for (std::size_t r = 0; r < q.rows; ++r) q(r, c) /= nrm;
                break;
            }
            for (std::size_t r = 0; r < q.rows; ++r) q(r, c) = gauss(rng);
        }
    }
}

// Cyclic Jacobi eigen-decomposition of a small symmetric matrix. Returns eigenvalues; `vecs` gets eigenvectors as columns.
inline std::vector<double> symmetric_eigen(DenseMatrix a, DenseMatrix& vecs) {
    const std::size_t n = a.rows;
    vecs = DenseMatrix(n, n);
    for (std::size_t i = 0; i < n; ++i) vecs(i, i) = 1;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = vecs(k, p), vkq = vecs(k, q);
                    vecs(k, p) = c * vkp - s * vkq;
                    vecs(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
    return eig;
}

} // namespace detail

/// Rank-k SVD by block power iteration on A^T A followed by a Rayleigh-Ritz rotation.
inline TruncatedSvd truncated_svd(const DenseMatrix& a, std::size_t k, std::uint64_t seed = 17, int max_iter = 2000) {
    if (k == 0 || k > a.cols || k > a.rows) throw InvalidArgument("truncated_svd: rank must be in [1, min(rows, cols)]");
    const std::size_t n = a.cols;
    DenseMatrix gram(n, n);
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t i = 0; i < n; ++i) {
            const double ari = a(r, i);
            if (ari == 0) continue;
            for (std::size_t j = 0; j < n; ++j) gram(i, j) += ari * a(r, j);
        }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    DenseMatrix q(n, k);
    for (auto& x : q.data) x = gauss(rng);
    detail::orthonormalize_columns(q, rng);

    DenseMatrix z(n, k);
    for (int it = 0; it < max_iter; ++it) {
        std::fill(z.data.begin(), z.data.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double g = gram(i, j);
                if (g == 0) continue;
                for (std::size_t c = 0; c < k; ++c) z(i, c) += g * q(j, c);
            }
        detail::orthonormalize_columns(z, rng);
        // Distance between the old and new subspaces: |Z - Q Q^T Z|.
        double resid = 0;
        for (std::size_t c = 0; c < k; ++c) {
            std::vector<double> proj(k, 0.0);
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t r = 0; r < n; ++r) proj[p] += q(r, p) * z(r, c);
            for (std::size_t r = 0; r < n; ++r) {
                double v = z(r, c);
                for (std::size_t p = 0; p < k; ++p) v -= q(r, p) * proj[p];
                resid += v * v;
            }
        }
        std::swap(q, z);
        if (resid < 1e-26) break;
    }

    // Rayleigh-Ritz: eigen-decompose Q^T (A^T A) Q.
    DenseMatrix small(k, k);
    for (std::size_t c1 = 0; c1 < k; ++c1)
        for (std::size_t c2 = 0; c2 < k; ++c2) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i) {
                double gi = 0;
                for (std::size_t j = 0; j < n; ++j) gi += gram(i, j) * q(j, c2);
                s += q(i, c1) * gi;
            }
            small(c1, c2) = s;
        }
    DenseMatrix rot;
    const auto eig = detail::symmetric_eigen(small, rot);
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return eig[x] > eig[y]; });

    TruncatedSvd out{DenseMatrix(a.rows, k), std::vector<double>(k), DenseMatrix(n, k)};
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t src = order[c];
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t p = 0; p < k; ++p) s += q(i, p) * rot(p, src);
            out.v(i, c) = s;
        }
        double sigma2 = 0;
        std::vector<double> av(a.rows, 0.0);
        for (std::size_t r = 0; r < a.rows; ++r) {
            for (std::size_t i = 0; i < n; ++i) av[r] += a(r, i) * out.v(i, c);
            sigma2 += av[r] * av[r];
        }
        const double sigma = std::sqrt(sigma2);
        out.singular_values[c] = sigma;
        if (sigma > 1e-12)
            for (std::size_t r = 0; r < a.rows; ++r) out.u(r, c) = av[r] / sigma;
    }
    return out;
}

/// Vectors are rows of U * sqrt(S) over the PPMI matrix; one row per non-special vocabulary word.
inline EmbeddingTable train_ppmi_embeddings(const std::vector<Tokens>& corpus, const Vocabulary& vocab, int window,
                                            std::size_t dim, std::uint64_t seed = 17) {
    if (dim == 0 || dim > vocab.size()) throw InvalidArgument("ppmi: dim must be in [1, vocabulary size]");
    const auto ppmi = ppmi_matrix(corpus, vocab, window);
    const auto svd = truncated_svd(ppmi, dim, seed);
    EmbeddingTable table(dim);
    std::vector<double> vec(dim);
    for (std::size_t id = Vocabulary::num_specials; id < vocab.size(); ++id) {
        for (std::size_t c = 0; c < dim; ++c) vec[c] = svd.u(id, c) * std::sqrt(svd.singular_values[c]);
        table.add(vocab.token(static_cast<int>(id)), vec);
    }
    return table;
}

/// `word v1 v2 ... vdim` per line, blank lines skipped.
inline EmbeddingTable load_word_vectors(std::istream& in) {
    std::optional<EmbeddingTable> table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (is_blank(line)) continue;
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        std::vector<double> vec;
        std::string field;
        while (ss >> field) {
            try {
                std::size_t used = 0;
                vec.push_back(std::stod(field, &used));
                if (used != field.size()) throw std::invalid_argument(field);
            } catch (const std::exception&) {
                throw ParseError(line_no, "bad number '" + field + "'");
            }
        }
        if (vec.empty()) throw ParseError(line_no, "word without vector");
        if (!table) table.emplace(vec.size());
        if (vec.size() != table->dim())
            throw ParseError(line_no, "dimension mismatch: expected " + std::to_string(table->dim()) + ", got " +
                                          std::to_string(vec.size()));
        try {
            table->add(word, vec);
        } catch (const InvalidArgument& e) {
            throw ParseError(line_no, e.what());
        }
    }
    if (!table) throw ParseError(0, "word-vector file is empty");
    return std::move(*table);
}

inline EmbeddingTable load_word_vectors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return load_word_vectors(in);
}

inline void save_word_vectors(const EmbeddingTable& table, std::ostream& out) {
    char buf[32];
    for (std::size_t i = 0; i < table.size(); ++i) {
        out << table.words()[i];
        for (double x : table.row(i)) {
            std::snprintf(buf, sizeof buf, " %.17g", x);
            out << buf;
        }
        out << '\n';
    }
}

/// Per vocabulary id: the k most cosine-similar other words (positive similarity only), best first.
struct NeighborIndex {
    std::vector<std::vector<std::pair<int, double>>> neighbors;

    const std::vector<std::pair<int, double>>& of(int id) const { return neighbors.at(static_cast<std::size_t>(id)); }
};

inline NeighborIndex build_neighbor_index(const EmbeddingTable& emb, const Vocabulary& vocab, std::size_t k) {
    NeighborIndex index;
    index.neighbors.resize(vocab.size());
    if (k == 0) return index;
    std::vector<std::optional<std::span<const double>>> rows(vocab.size());
    for (std::size_t id = Vocabulary::num_specials; id < vocab.size(); ++id) rows[id] = emb.find(vocab.token(static_cast<int>(id)));
    for (std::size_t a = Vocabulary::num_specials; a < vocab.size(); ++a) {
        if (!rows[a]) continue;
        std::vector<std::pair<int, double>> scored;
        for (std::size_t b = Vocabulary::num_specials; b < vocab.size(); ++b) {
            if (a == b || !rows[b]) continue;
            const double c = cosine(*rows[a], *rows[b]);
            if (c > 0) scored.emplace_back(static_cast<int>(b), c);
        }
        const std::size_t keep = std::min(k, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                          [](const auto& x, const auto& y) { return x.second != y.second ? x.second > y.second : x.first < y.first; });
        scored.resize(keep);
        index.neighbors[a] = std::move(scored);
    }
    return index;
}

} // namespace detox
