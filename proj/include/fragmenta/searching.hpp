#pragma once
// Global retrieval over per-fragment search embeddings.

#include "fragmenta/binary_io.hpp"
#include "fragmenta/errors.hpp"
#include "fragmenta/nn/tensor.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

namespace fragmenta::searching {

using nn::Matrix;

struct EmbeddingIndex {
    Matrix vectors;       ///< N x dim
    std::vector<int> ids; ///< fragment id of each row
    bool normalized = false;

    std::size_t size() const { return ids.size(); }

    std::size_t row_of(int id) const {
        auto it = std::find(ids.begin(), ids.end(), id);
        if (it == ids.end()) throw InvalidInput("embedding index: unknown fragment id " + std::to_string(id));
        return static_cast<std::size_t>(it - ids.begin());
    }
};

inline EmbeddingIndex make_index(Matrix vectors, std::vector<int> ids) {
    if (static_cast<std::size_t>(vectors.rows()) != ids.size()) throw InvalidInput("make_index: row/id count differ");
    for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
        const double n = vectors.row(i).norm();
        if (!(n > 0.0) || !std::isfinite(n)) throw InvalidInput("make_index: zero or non-finite embedding");
        vectors.row(i) /= n;
    }
    return {std::move(vectors), std::move(ids), true};
}

/// V V^T, built in blocks of 256 rows, then mirrored so it is exactly
/// symmetric with a unit diagonal.
inline Matrix cosine_similarity_matrix(const EmbeddingIndex& index, Eigen::Index block = 256) {
    if (!index.normalized) throw InvalidInput("cosine_similarity_matrix: index not normalized");
    const Eigen::Index n = index.vectors.rows();
    Matrix s(n, n);
    for (Eigen::Index r = 0; r < n; r += block) {
        const Eigen::Index rows = std::min(block, n - r);
        s.middleRows(r, rows).noalias() = index.vectors.middleRows(r, rows) * index.vectors.transpose();
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        s(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < n; ++j) s(j, i) = s(i, j);
    }
    return s;
}

/// Ranked ids of the k most similar other fragments; ties by id.
inline std::vector<int> rank_row(const Eigen::RowVectorXd& sims, const std::vector<int>& ids, std::size_t self,
                                 std::size_t k) {
    if (k < 1) throw InvalidInput("top_k: k must be >= 1");
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < ids.size(); ++j) {
        if (j != self) order.push_back(j);
    }
    auto better = [&](std::size_t a, std::size_t b) {
        const double sa = sims(static_cast<Eigen::Index>(a));
        const double sb = sims(static_cast<Eigen::Index>(b));
        if (sa != sb) return sa > sb;
        return ids[a] < ids[b];
    };
    k = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
    std::vector<int> out;
    for (std::size_t r = 0; r < k; ++r) out.push_back(ids[order[r]]);
    return out;
}

inline std::vector<int> top_k(const EmbeddingIndex& index, int query_id, std::size_t k) {
    if (!index.normalized) throw InvalidInput("top_k: index not normalized");
    const std::size_t row = index.row_of(query_id);
    const Eigen::RowVectorXd sims = index.vectors.row(static_cast<Eigen::Index>(row)) * index.vectors.transpose();
    return rank_row(sims, index.ids, row, k);
}

/// Rank table: for every row, its full ranked list of other ids.
inline std::vector<std::vector<int>> rank_table(const EmbeddingIndex& index, std::size_t k) {
    const Matrix sim = cosine_similarity_matrix(index);
    std::vector<std::vector<int>> out;
    out.reserve(index.size());
    for (std::size_t r = 0; r < index.size(); ++r) out.push_back(rank_row(sim.row(static_cast<Eigen::Index>(r)), index.ids, r, k));
    return out;
}

/// Unordered pairs (smaller id first) from the union of every query's top-k.
inline std::vector<std::pair<int, int>> retrieve_candidate_pairs(const EmbeddingIndex& index, std::size_t k) {
    std::set<std::pair<int, int>> pairs;
    const auto ranks = rank_table(index, k);
    for (std::size_t r = 0; r < index.size(); ++r) {
        for (int other : ranks[r]) {
            const int q = index.ids[r];
            pairs.insert({std::min(q, other), std::max(q, other)});
        }
    }
    return {pairs.begin(), pairs.end()};
}

/// Candidates whose cosine similarity reaches `min_similarity`.
inline std::vector<std::pair<int, int>> threshold_candidate_pairs(const EmbeddingIndex& index, double min_similarity) {
    const Matrix sim = cosine_similarity_matrix(index);
    std::vector<std::pair<int, int>> out;
    for (std::size_t a = 0; a < index.size(); ++a) {
        for (std::size_t b = a + 1; b < index.size(); ++b) {
            if (sim(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) >= min_similarity) {
                out.emplace_back(std::min(index.ids[a], index.ids[b]), std::max(index.ids[a], index.ids[b]));
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// "FSIX", u32 version, u32 N, u32 dim, N x i32 ids, N*dim float32 (row-major).
inline constexpr std::uint32_t kIndexVersion = 1;

inline void write_index(const std::filesystem::path& path, const EmbeddingIndex& index) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write '" + tmp + "'");
        bin::write_magic(out, "FSIX");
        bin::write_le(out, kIndexVersion);
        bin::write_le(out, static_cast<std::uint32_t>(index.size()));
        bin::write_le(out, static_cast<std::uint32_t>(index.vectors.cols()));
        for (int id : index.ids) bin::write_le(out, static_cast<std::uint32_t>(id));
        for (Eigen::Index i = 0; i < index.vectors.size(); ++i) {
            bin::write_f32(out, static_cast<float>(index.vectors.data()[i]));
        }
        if (!out) throw DataError("cannot write '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

/// Float32 payload; rows are renormalized on load.
inline EmbeddingIndex read_index(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open index '" + path.string() + "'");
    bin::expect_magic(in, "FSIX");
    const auto version = bin::read_le<std::uint32_t>(in);
    if (version != kIndexVersion) throw DataError("unsupported index version " + std::to_string(version));
    const auto n = bin::read_le<std::uint32_t>(in);
    const auto dim = bin::read_le<std::uint32_t>(in);
    std::vector<int> ids(n);
    for (auto& id : ids) id = static_cast<int>(bin::read_le<std::uint32_t>(in));
    Matrix v(n, dim);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = bin::read_f32(in);
    return make_index(std::move(v), std::move(ids));
}

} // namespace fragmenta::searching
