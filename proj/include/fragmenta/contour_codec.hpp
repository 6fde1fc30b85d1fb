#pragma once
// Rasters -> ordered contours -> per-point model inputs.

#include "fragmenta/binary_io.hpp"
#include "fragmenta/errors.hpp"
#include "fragmenta/geometry.hpp"
#include "fragmenta/raster.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fragmenta::codec {

// Moore neighbourhood in counter-clockwise screen order, starting at west.
inline constexpr std::array<std::array<int, 2>, 8> kMooreDirs{{
    {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1},
}};

inline int moore_index(int dx, int dy) {
    for (int i = 0; i < 8; ++i) {
        if (kMooreDirs[i][0] == dx && kMooreDirs[i][1] == dy) return i;
    }
    return -1;
}

/// Number of 8-connected foreground components.
inline int count_components(const Mask& mask, int stop_after = 2) {
    std::vector<std::uint8_t> seen(mask.bits.size(), 0);
    std::vector<std::pair<int, int>> stack;
    int components = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * mask.width + x;
            if (!mask.bits[idx] || seen[idx]) continue;
            if (++components >= stop_after) return components;
            seen[idx] = 1;
            stack.push_back({x, y});
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                for (const auto& d : kMooreDirs) {
                    const int nx = cx + d[0];
                    const int ny = cy + d[1];
                    if (!mask.get(nx, ny)) continue;
                    const std::size_t nidx = static_cast<std::size_t>(ny) * mask.width + nx;
                    if (seen[nidx]) continue;
                    seen[nidx] = 1;
                    stack.push_back({nx, ny});
                }
            }
        }
    }
    return components;
}

/// Outer boundary of a single 8-connected blob by Moore-neighbour tracing.
/// Counter-clockwise on screen, starting at the topmost-leftmost pixel.
inline OrderedContour trace_contour(const Mask& mask) {
    const int components = count_components(mask);
    if (components == 0) throw InvalidMask("trace_contour: empty mask");
    if (components > 1) throw InvalidMask("trace_contour: mask has more than one component");

    int sx = -1, sy = -1;
    for (int y = 0; y < mask.height && sx < 0; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.get(x, y)) {
                sx = x;
                sy = y;
                break;
            }
        }
    }

    OrderedContour contour;
    contour.points.push_back({static_cast<double>(sx), static_cast<double>(sy)});

    int cx = sx, cy = sy;
    int back = 0; // west of the start pixel is background
    int first_x = -1, first_y = -1;
    const std::size_t cap = 4 * mask.bits.size() + 8;
    for (std::size_t step = 0; step < cap; ++step) {
        int found = -1;
        for (int i = 1; i <= 8; ++i) {
            const int d = (back + i) % 8;
            if (mask.get(cx + kMooreDirs[d][0], cy + kMooreDirs[d][1])) {
                found = d;
                break;
            }
        }
        if (found < 0) return contour; // isolated pixel

        const int nx = cx + kMooreDirs[found][0];
        const int ny = cy + kMooreDirs[found][1];
        if (step == 0) {
            first_x = nx;
            first_y = ny;
        } else if (cx == sx && cy == sy) {
            if (nx == first_x && ny == first_y) return contour;
            contour.points.push_back({static_cast<double>(sx), static_cast<double>(sy)});
        }
        const int prev = (found + 7) % 8;
        const int bx = cx + kMooreDirs[prev][0];
        const int by = cy + kMooreDirs[prev][1];
        back = moore_index(bx - nx, by - ny);
        cx = nx;
        cy = ny;
        if (cx == sx && cy == sy) continue; // closing the loop; decided on the next move
        contour.points.push_back({static_cast<double>(cx), static_cast<double>(cy)});
    }
    throw InvalidMask("trace_contour: tracing did not terminate");
}

/// Foreground pixels with a 4-neighbour outside the mask.
inline Mask boundary_pixels(const Mask& mask) {
    Mask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.get(x, y)) continue;
            if (!mask.get(x - 1, y) || !mask.get(x + 1, y) || !mask.get(x, y - 1) || !mask.get(x, y + 1)) {
                out.set(x, y, true);
            }
        }
    }
    return out;
}

enum class ContourEncoding : std::uint32_t { EdgeOnly = 0, InsideOutside = 1, EdgePlusInsideOutside = 2 };

inline int channels_for(ContourEncoding mode) {
    return mode == ContourEncoding::EdgePlusInsideOutside ? 2 : 1;
}

/// Dense per-point patches, laid out as [point][row][col][channel].
struct PatchSet {
    std::size_t count = 0;
    int size = 0;
    int channels = 0;
    std::vector<double> values;

    std::size_t stride() const { return static_cast<std::size_t>(size) * size * channels; }
    double at(std::size_t j, int row, int col, int ch = 0) const {
        return values[j * stride() + (static_cast<std::size_t>(row) * size + col) * channels + ch];
    }
    const double* row_ptr(std::size_t j) const { return values.data() + j * stride(); }
};

struct ContourPatchSet : PatchSet {
    ContourEncoding mode = ContourEncoding::EdgeOnly;
};

using TexturePatchSet = PatchSet;

inline void require_odd(int size) {
    if (size < 3 || size % 2 == 0) throw InvalidInput("patch size must be odd and >= 3");
}

inline ContourPatchSet encode_contour_patches(const OrderedContour& contour, const Mask& mask, int size,
                                              ContourEncoding mode) {
    require_odd(size);
    ContourPatchSet out;
    out.mode = mode;
    out.count = contour.size();
    out.size = size;
    out.channels = channels_for(mode);
    out.values.assign(out.count * out.stride(), 0.0);

    Mask edge(mask.width, mask.height);
    for (const auto& p : contour.points) {
        const int x = static_cast<int>(std::lround(p.x));
        const int y = static_cast<int>(std::lround(p.y));
        if (edge.contains(x, y)) edge.set(x, y, true);
    }

    const int half = size / 2;
    const bool want_edge = mode != ContourEncoding::InsideOutside;
    const bool want_inside = mode != ContourEncoding::EdgeOnly;
    for (std::size_t j = 0; j < out.count; ++j) {
        const int cx = static_cast<int>(std::lround(contour[j].x));
        const int cy = static_cast<int>(std::lround(contour[j].y));
        double* dst = out.values.data() + j * out.stride();
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                const int x = cx + c - half;
                const int y = cy + r - half;
                double* cell = dst + (static_cast<std::size_t>(r) * size + c) * out.channels;
                int ch = 0;
                if (want_edge) cell[ch++] = edge.get(x, y) ? 1.0 : 0.0;
                if (want_inside) cell[ch] = mask.get(x, y) ? 1.0 : 0.0;
            }
        }
    }
    return out;
}

/// RGB crops around each contour point scaled to [0,1]; out-of-mask pixels are zero.
inline TexturePatchSet crop_texture_patches(const RgbImage& image, const Mask& mask,
                                            const OrderedContour& contour, int size) {
    require_odd(size);
    if (image.width != mask.width || image.height != mask.height) {
        throw InvalidInput("crop_texture_patches: image and mask dimensions differ");
    }
    TexturePatchSet out;
    out.count = contour.size();
    out.size = size;
    out.channels = 3;
    out.values.assign(out.count * out.stride(), 0.0);
    const int half = size / 2;
    for (std::size_t j = 0; j < out.count; ++j) {
        const int cx = static_cast<int>(std::lround(contour[j].x));
        const int cy = static_cast<int>(std::lround(contour[j].y));
        double* dst = out.values.data() + j * out.stride();
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                const int x = cx + c - half;
                const int y = cy + r - half;
                if (!mask.get(x, y)) continue;
                double* cell = dst + (static_cast<std::size_t>(r) * size + c) * 3;
                for (int ch = 0; ch < 3; ++ch) cell[ch] = image.at(x, y, ch) / 255.0;
            }
        }
    }
    return out;
}

/// Cyclic ring adjacency: node v links to v-k..v-1 and v+1..v+k.
struct RingGraph {
    std::size_t m = 0;
    std::size_t k = 0;

    /// True when the ring wraps onto itself and every node sees every other.
    bool complete() const { return 2 * k + 1 >= m; }
    std::size_t degree() const { return complete() ? m - 1 : 2 * k; }

    std::vector<std::size_t> neighbors(std::size_t v) const {
        std::vector<std::size_t> out;
        if (complete()) {
            for (std::size_t u = 0; u < m; ++u) {
                if (u != v) out.push_back(u);
            }
            return out;
        }
        for (std::size_t d = k; d >= 1; --d) out.push_back((v + m - d) % m);
        for (std::size_t d = 1; d <= k; ++d) out.push_back((v + d) % m);
        return out;
    }
};

inline RingGraph build_ring_graph(std::size_t m, std::size_t k = 8) {
    if (m < 1 || k < 1) throw InvalidInput("build_ring_graph: m and k must be >= 1");
    return {m, k};
}

enum class PadPolicy { ZeroPad, Truncate };
enum class TruncateMode { UniformStride, Prefix };

/// One item of a padded batch: l_max rows, the first `valid` of them real.
struct PaddedItem {
    std::size_t l_max = 0;
    std::size_t dim = 0;
    std::size_t original_length = 0;
    std::vector<double> features;     // l_max * dim
    std::vector<std::uint8_t> valid;  // l_max
    std::vector<std::size_t> source;  // source row of every valid row

    std::size_t valid_count() const {
        std::size_t n = 0;
        for (auto v : valid) n += v;
        return n;
    }
};

/// Rows kept when shrinking `m` rows to `l_max` (evenly spaced or prefix).
inline std::vector<std::size_t> truncation_indices(std::size_t m, std::size_t l_max, TruncateMode mode) {
    std::vector<std::size_t> idx;
    const std::size_t keep = std::min(m, l_max);
    idx.reserve(keep);
    for (std::size_t r = 0; r < keep; ++r) {
        idx.push_back(mode == TruncateMode::Prefix || m <= l_max ? r : (r * m) / l_max);
    }
    return idx;
}

inline PaddedItem pad_or_truncate(const std::vector<double>& features, std::size_t rows, std::size_t dim,
                                  std::size_t l_max, PadPolicy policy,
                                  TruncateMode mode = TruncateMode::UniformStride) {
    if (l_max < 1) throw InvalidInput("pad_or_truncate: l_max must be >= 1");
    if (features.size() != rows * dim) throw InvalidInput("pad_or_truncate: shape mismatch");
    if (policy == PadPolicy::ZeroPad && rows > l_max) {
        throw InvalidInput("pad_or_truncate: " + std::to_string(rows) + " rows exceed l_max " +
                           std::to_string(l_max) + " under zero-padding");
    }
    PaddedItem item;
    item.l_max = l_max;
    item.dim = dim;
    item.original_length = rows;
    item.features.assign(l_max * dim, 0.0);
    item.valid.assign(l_max, 0);
    item.source = truncation_indices(rows, l_max, mode);
    for (std::size_t r = 0; r < item.source.size(); ++r) {
        std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(item.source[r] * dim), dim,
                    item.features.begin() + static_cast<std::ptrdiff_t>(r * dim));
        item.valid[r] = 1;
    }
    return item;
}

// ---------------------------------------------------------------------------
// FRGC cache container: "FRGC", u32 version, u32 M, u32 D, u32 mode,
// then M*D little-endian float32 values.

inline constexpr std::uint32_t kFrgcVersion = 1;

struct EncodedArray {
    std::uint32_t rows = 0;
    std::uint32_t dim = 0;
    std::uint32_t mode = 0;
    std::vector<double> values;
};

inline void write_frgc(const std::filesystem::path& path, const EncodedArray& arr) {
    if (arr.values.size() != static_cast<std::size_t>(arr.rows) * arr.dim) {
        throw InvalidInput("write_frgc: shape mismatch");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    bin::write_magic(out, "FRGC");
    bin::write_le(out, kFrgcVersion);
    bin::write_le(out, arr.rows);
    bin::write_le(out, arr.dim);
    bin::write_le(out, arr.mode);
    for (double v : arr.values) bin::write_f32(out, static_cast<float>(v));
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

inline EncodedArray read_frgc(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    bin::expect_magic(in, "FRGC");
    const auto version = bin::read_le<std::uint32_t>(in);
    if (version != kFrgcVersion) throw DataError("unsupported FRGC version " + std::to_string(version));
    EncodedArray arr;
    arr.rows = bin::read_le<std::uint32_t>(in);
    arr.dim = bin::read_le<std::uint32_t>(in);
    arr.mode = bin::read_le<std::uint32_t>(in);
    arr.values.resize(static_cast<std::size_t>(arr.rows) * arr.dim);
    for (auto& v : arr.values) v = bin::read_f32(in);
    return arr;
}

} // namespace fragmenta::codec
