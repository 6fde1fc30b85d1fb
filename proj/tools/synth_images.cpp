// Writes procedural PNG source images, for trying the pipeline without a photo set.

#include "fragmenta/image_io.hpp"
#include "fragmenta/synth.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>

int main(int argc, char** argv) {
    CLI::App app{"procedural source images"};
    std::string out;
    int count = 8, width = 512, height = 384;
    std::uint64_t first_seed = 1000;
    app.add_option("out", out, "output directory")->required();
    app.add_option("-n,--count", count)->check(CLI::PositiveNumber);
    app.add_option("--width", width)->check(CLI::PositiveNumber);
    app.add_option("--height", height)->check(CLI::PositiveNumber);
    app.add_option("--first-seed", first_seed);
    CLI11_PARSE(app, argc, argv);

    std::filesystem::create_directories(out);
    for (int k = 0; k < count; ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%03d.png", k);
        fragmenta::io::write_png_rgb(std::filesystem::path(out) / name,
                                 fragmenta::synth::procedural_image(width, height, first_seed + static_cast<std::uint64_t>(k)));
    }
    return 0;
}
