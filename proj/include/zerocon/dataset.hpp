#pragma once

#include <array>
#include <string>
#include <vector>

#include "zerocon/io.hpp"

namespace zerocon {

// Finite caption grammar: color x shape x background x modifier. Captions
// read "a [modifier] <color> <shape> on a <background> background".
struct ToyLabels {
    std::string color;
    std::string shape;
    std::string background;
    std::string modifier;  // "", "small" or "large"
};

const std::vector<std::string>& toy_colors();
const std::vector<std::string>& toy_shapes();
const std::vector<std::string>& toy_backgrounds();
const std::vector<std::string>& toy_modifiers();

std::array<uint8_t, 3> toy_color_rgb(const std::string& name);
std::array<uint8_t, 3> toy_background_rgb(const std::string& name);

std::string caption_for(const ToyLabels& labels);

struct CaptionedImage {
    Image image;
    std::string caption;
    std::vector<uint8_t> mask;  // 1 = foreground (shape), same dims as image
    ToyLabels labels;           // empty strings for externally loaded items
};

struct CaptionedImageSet {
    std::vector<CaptionedImage> items;

    const CaptionedImage* find(const std::string& id) const;
    // manifest.tsv: "<filename>\t<caption>" per line; masks stored as
    // <stem>.mask.png next to each image
    void save(const std::string& dir) const;
    static CaptionedImageSet load(const std::string& dir);
};

// Deterministic synthetic dataset: `count` images at size x size with seeded
// label choice, center jitter and light pixel noise.
CaptionedImageSet generate_toy_dataset(int count, int size, uint64_t seed);

// renders one labelled item; used by the generator and by tests
CaptionedImage render_toy_item(const ToyLabels& labels, int size, uint64_t seed);

// Nearest foreground palette color to the mean RGB over the mask. Used as the
// edit-success oracle in tests.
std::string classify_foreground_hue(const Image& img, const std::vector<uint8_t>& mask);

}  // namespace zerocon
