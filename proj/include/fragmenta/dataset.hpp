#pragma once
// Generated corpora: per-image tearing, image-level splits, the manifest and
// fragment rasters on disk.

#include "fragmenta/config.hpp"
#include "fragmenta/contour_codec.hpp"
#include "fragmenta/image_io.hpp"
#include "fragmenta/rng.hpp"
#include "fragmenta/tearing.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace fragmenta::dataset {

using nlohmann::json;

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "unknown";
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw DataError("unknown split '" + s + "'");
}

struct SourceImage {
    int id = 0;
    std::string name;
    int width = 0;
    int height = 0;
    Split split = Split::Train;
};

struct Corpus {
    std::string corpus_id;
    tearing::GeneratorConfig generator;
    std::uint64_t seed = 0;
    std::vector<SourceImage> images;
    std::vector<tearing::FragmentRecord> fragments; ///< fragments[i].id == i
    std::vector<tearing::PairGroundTruth> pairs;

    const tearing::FragmentRecord& fragment(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= fragments.size()) {
            throw DataError("unknown fragment id " + std::to_string(id));
        }
        return fragments[static_cast<std::size_t>(id)];
    }

    Split split_of_fragment(int id) const {
        return images.at(static_cast<std::size_t>(fragment(id).source_image_id)).split;
    }

    std::vector<int> fragment_ids(Split s) const {
        std::vector<int> out;
        for (const auto& f : fragments) {
            if (split_of_fragment(f.id) == s) out.push_back(f.id);
        }
        return out;
    }

    std::vector<tearing::PairGroundTruth> pairs_in(Split s) const {
        std::vector<tearing::PairGroundTruth> out;
        for (const auto& p : pairs) {
            if (split_of_fragment(p.id_m) == s) out.push_back(p);
        }
        return out;
    }
};

/// Image counts per split in 5:1:4 proportion (largest remainder, ties
/// favouring train, then test, then val).
inline std::array<std::size_t, 3> split_counts(std::size_t n) {
    const std::array<std::size_t, 3> weight{5, 1, 4};
    std::array<std::size_t, 3> count{};
    std::array<std::size_t, 3> rem{};
    std::size_t used = 0;
    for (int s = 0; s < 3; ++s) {
        count[s] = n * weight[s] / 10;
        rem[s] = n * weight[s] % 10;
        used += count[s];
    }
    const std::array<int, 3> tie_order{0, 2, 1};
    while (used < n) {
        int best = tie_order[0];
        for (int s : tie_order) {
            if (rem[s] > rem[best]) best = s;
        }
        ++count[best];
        rem[best] = 0;
        ++used;
    }
    return count;
}

/// Seeded shuffle of the images, then consecutive blocks train/val/test.
inline std::vector<Split> assign_splits(std::size_t n_images, std::uint64_t seed) {
    std::vector<std::size_t> order(n_images);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(seed, "splits");
    std::shuffle(order.begin(), order.end(), rng);
    const auto counts = split_counts(n_images);
    std::vector<Split> out(n_images);
    std::size_t k = 0;
    for (int s = 0; s < 3; ++s) {
        for (std::size_t c = 0; c < counts[s]; ++c) out[order[k++]] = static_cast<Split>(s);
    }
    return out;
}

/// Tears every image with its own sub-stream of the root seed.
inline Corpus generate_corpus(const std::vector<std::pair<std::string, RgbImage>>& images,
                              const tearing::GeneratorConfig& cfg, std::uint64_t seed,
                              std::string corpus_id = "corpus") {
    cfg.validate();
    if (images.empty()) throw DataError("generate_corpus: no usable images");
    Corpus c;
    c.corpus_id = std::move(corpus_id);
    c.generator = cfg;
    c.seed = seed;
    const auto splits = assign_splits(images.size(), seed);
    const std::uint64_t gen_root = derive_seed(seed, "generation");
    for (std::size_t k = 0; k < images.size(); ++k) {
        const auto& [name, img] = images[k];
        c.images.push_back({static_cast<int>(k), name, img.width, img.height, splits[k]});
        Rng rng(derive_seed(gen_root, static_cast<std::uint64_t>(k)));
        auto res = tearing::generate(img, cfg, rng, static_cast<int>(k), static_cast<int>(c.fragments.size()));
        for (auto& f : res.fragments) c.fragments.push_back(std::move(f));
        for (auto& p : res.pairs) c.pairs.push_back(std::move(p));
    }
    return c;
}

// ---------------------------------------------------------------------------
// Manifest

inline constexpr int kManifestVersion = 1;

inline std::string fragment_file(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frag_%06d.png", id);
    return buf;
}

inline json transform_to_json(const RigidTransform2D& t) { return {{"theta", t.theta}, {"tx", t.tx}, {"ty", t.ty}}; }

inline RigidTransform2D transform_from_json(const json& j) {
    return {j.at("theta").get<double>(), j.at("tx").get<double>(), j.at("ty").get<double>()};
}

/// Throws DataError on dangling ids, cross-split pairs or bad indices.
inline void validate_corpus(const Corpus& c) {
    for (std::size_t i = 0; i < c.fragments.size(); ++i) {
        const auto& f = c.fragments[i];
        if (f.id != static_cast<int>(i)) throw DataError("fragment ids must be dense and ordered");
        if (f.source_image_id < 0 || static_cast<std::size_t>(f.source_image_id) >= c.images.size()) {
            throw DataError("fragment " + std::to_string(f.id) + " references a missing image");
        }
    }
    for (const auto& p : c.pairs) {
        const auto& a = c.fragment(p.id_m);
        const auto& b = c.fragment(p.id_n);
        if (a.source_image_id != b.source_image_id) {
            throw DataError("pair " + std::to_string(p.id_m) + "/" + std::to_string(p.id_n) + " spans images");
        }
        for (const auto& m : p.matches) {
            if (m.m >= a.contour.size() || m.n >= b.contour.size()) {
                throw DataError("pair " + std::to_string(p.id_m) + "/" + std::to_string(p.id_n) +
                                " has a match outside its contours");
            }
        }
    }
}

inline json manifest_json(const Corpus& c) {
    json images = json::array();
    for (const auto& im : c.images) {
        images.push_back({{"id", im.id},
                          {"name", im.name},
                          {"width", im.width},
                          {"height", im.height},
                          {"split", to_string(im.split)}});
    }
    json frags = json::array();
    for (const auto& f : c.fragments) {
        frags.push_back({{"id", f.id},
                         {"source_image_id", f.source_image_id},
                         {"file", fragment_file(f.id)},
                         {"offset", {f.offset.x, f.offset.y}},
                         {"width", f.width()},
                         {"height", f.height()},
                         {"area", f.area()},
                         {"contour_length", f.contour.size()},
                         {"split", to_string(c.split_of_fragment(f.id))}});
    }
    json pairs = json::array();
    for (const auto& p : c.pairs) {
        json matches = json::array();
        for (const auto& m : p.matches) matches.push_back({m.m, m.n});
        pairs.push_back({{"id_m", p.id_m},
                         {"id_n", p.id_n},
                         {"split", to_string(c.split_of_fragment(p.id_m))},
                         {"difficulty", tearing::to_string(p.difficulty)},
                         {"overlap_proportion", p.overlap_proportion},
                         {"gt_transform", transform_to_json(p.gt_transform)},
                         {"matches", std::move(matches)}});
    }
    return {{"format", "fragmenta-manifest"},
            {"format_version", kManifestVersion},
            {"corpus_id", c.corpus_id},
            {"seed", c.seed},
            {"generator", config::to_json_object(c.generator)},
            {"images", std::move(images)},
            {"fragments", std::move(frags)},
            {"pairs", std::move(pairs)}};
}

/// Temp file + rename.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write '" + tmp + "'");
        out << text;
        if (!out) throw DataError("cannot write '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("malformed JSON in '" + path.string() + "': " + e.what());
    }
}

/// Checks "format" and the major version of a versioned JSON document.
inline void require_format(const json& j, const std::string& format, int version) {
    if (!j.contains("format") || j.at("format") != format) throw DataError("expected a " + format + " document");
    if (!j.contains("format_version") || j.at("format_version").get<int>() != version) {
        throw DataError("unsupported " + format + " version");
    }
}

inline io::RgbaImage fragment_rgba(const tearing::FragmentRecord& f) {
    io::RgbaImage img;
    img.width = f.width();
    img.height = f.height();
    img.data.assign(static_cast<std::size_t>(img.width) * img.height * 4, 0);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            if (!f.mask.get(x, y)) continue;
            std::uint8_t* px = img.data.data() + (static_cast<std::size_t>(y) * img.width + x) * 4;
            for (int c = 0; c < 3; ++c) px[c] = f.pixels.at(x, y, c);
            px[3] = 255;
        }
    }
    return img;
}

/// Writes manifest.json and one RGBA PNG per fragment (alpha = mask).
inline void write_corpus(const std::filesystem::path& dir, const Corpus& c) {
    validate_corpus(c);
    std::filesystem::create_directories(dir / "fragments");
    for (const auto& f : c.fragments) {
        const auto path = dir / "fragments" / fragment_file(f.id);
        const auto tmp = path.string() + ".tmp.png";
        io::write_png_rgba(tmp, fragment_rgba(f));
        std::filesystem::rename(tmp, path);
    }
    write_text_atomic(dir / "manifest.json", manifest_json(c).dump(1) + "\n");
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
    const json j = read_json(dir / "manifest.json");
    require_format(j, "fragmenta-manifest", kManifestVersion);
    Corpus c;
    try {
        c.corpus_id = j.at("corpus_id").get<std::string>();
        c.seed = j.at("seed").get<std::uint64_t>();
        config::from_json_object(j.at("generator"), c.generator, "generator");
        c.generator.validate();
        for (const auto& im : j.at("images")) {
            c.images.push_back({im.at("id").get<int>(), im.at("name").get<std::string>(), im.at("width").get<int>(),
                                im.at("height").get<int>(), split_from_string(im.at("split").get<std::string>())});
        }
        for (const auto& jf : j.at("fragments")) {
            tearing::FragmentRecord f;
            f.id = jf.at("id").get<int>();
            f.source_image_id = jf.at("source_image_id").get<int>();
            f.offset = {jf.at("offset").at(0).get<double>(), jf.at("offset").at(1).get<double>()};
            const auto rgba = io::read_png_rgba(dir / "fragments" / jf.at("file").get<std::string>());
            f.pixels = RgbImage(rgba.width, rgba.height);
            f.mask = Mask(rgba.width, rgba.height);
            for (int y = 0; y < rgba.height; ++y) {
                for (int x = 0; x < rgba.width; ++x) {
                    const std::uint8_t* px = rgba.data.data() + (static_cast<std::size_t>(y) * rgba.width + x) * 4;
                    if (px[3] == 0) continue;
                    f.mask.set(x, y, true);
                    for (int ch = 0; ch < 3; ++ch) f.pixels.at(x, y, ch) = px[ch];
                }
            }
            f.contour = codec::trace_contour(f.mask);
            if (f.contour.size() != jf.at("contour_length").get<std::size_t>()) {
                throw DataError("fragment " + std::to_string(f.id) + ": contour length differs from manifest");
            }
            c.fragments.push_back(std::move(f));
        }
        for (const auto& jp : j.at("pairs")) {
            tearing::PairGroundTruth p;
            p.id_m = jp.at("id_m").get<int>();
            p.id_n = jp.at("id_n").get<int>();
            p.difficulty = tearing::difficulty_from_string(jp.at("difficulty").get<std::string>());
            p.overlap_proportion = jp.at("overlap_proportion").get<double>();
            p.gt_transform = transform_from_json(jp.at("gt_transform"));
            for (const auto& m : jp.at("matches")) p.matches.push_back({m.at(0).get<std::size_t>(), m.at(1).get<std::size_t>()});
            c.pairs.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    } catch (const InvalidMask& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
    validate_corpus(c);
    return c;
}

/// Images in `dir` (sorted by file name) that decode; others are skipped with a warning.
inline std::vector<std::pair<std::string, RgbImage>> load_images(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw DataError("image directory '" + dir.string() + "' not found");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && io::is_supported_image(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<std::pair<std::string, RgbImage>> out;
    for (const auto& f : files) {
        try {
            out.emplace_back(f.filename().string(), io::read_rgb(f));
        } catch (const DataError& e) {
            spdlog::warn("skipping unreadable image {}: {}", f.string(), e.what());
        }
    }
    if (out.empty()) throw DataError("no readable images in '" + dir.string() + "'");
    return out;
}

} // namespace fragmenta::dataset
