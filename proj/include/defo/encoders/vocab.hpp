#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "defo/errors.hpp"

namespace defo {

inline constexpr std::size_t kPadRow = 0;
inline constexpr std::size_t kUnkRow = 1;
inline constexpr std::size_t kReservedRows = 2;

/// Word list of the toy domain. Rows 0/1 are <pad> and <unk>.
inline const std::vector<std::string>& toy_vocabulary() {
  static const std::vector<std::string> words = {
      "<pad>", "<unk>",
      // function words and prompt fillers
      "a", "an", "the", "of", "on", "in", "with", "and", "over", "under", "near", "at", "to",
      "photo", "picture", "image", "drawing", "rendering", "painting", "sketch", "snapshot",
      "close", "up", "view", "example", "centered", "single", "one", "itself", "some", "this",
      "that", "there", "is", "very", "quite", "toy", "scene", "pattern", "background",
      "surface", "object", "shape", "thing", "item", "figure", "icon", "symbol", "mark",
      // colors
      "red", "blue", "green", "yellow", "orange", "purple", "cyan", "magenta", "white", "black",
      "gray", "pink", "brown", "gold", "silver", "teal",
      // shapes
      "circle", "square", "triangle", "cross", "diamond", "ring", "bar", "star", "disk", "box",
      "oval", "rectangle", "hexagon", "arrow", "line", "dot",
      // textures
      "stripes", "dots", "checkers", "plain", "noise", "grid", "waves", "speckles", "gradient",
      "blank", "smooth", "rough", "textured", "striped", "dotted", "checkered", "noisy",
      // sizes, positions, adjectives
      "small", "large", "big", "little", "tiny", "huge", "wide", "narrow", "tall", "short",
      "left", "right", "top", "bottom", "middle", "corner", "edge", "side", "bright", "dark",
      "light", "pale", "deep", "vivid", "dull", "shiny", "flat", "solid", "hollow", "thick",
      "thin", "sharp", "soft", "round", "pointy", "clean", "blurry", "faded", "bold", "simple",
      // unrelated nouns that stay untouched by the toy captions
      "cat", "dog", "bird", "fish", "horse", "car", "truck", "plane", "boat", "train", "house",
      "tree", "flower", "apple", "banana", "chair", "table", "cup", "bottle", "book", "phone",
      "clock", "lamp", "door", "window", "road", "river", "mountain", "cloud", "sun", "moon",
      "rock", "sand", "grass", "snow", "water", "fire", "stone", "wood", "metal", "paper",
      "glass", "cloth", "leaf", "sky", "sea", "field", "city", "street", "bridge", "garden",
      "kitchen", "room", "wall", "floor", "roof", "shoe", "hat", "bag", "ball", "kite",
      "guitar", "piano", "drum", "bell", "key", "coin", "ticket", "map", "card", "letter",
      "number", "word", "art", "craft", "model", "plastic", "rubber", "wool", "silk", "ink"};
  return words;
}

/// UTF-8, one word per line; line number = row index.
inline std::vector<std::string> load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open vocabulary " + path.string());
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    words.push_back(line);
  }
  if (words.size() < kReservedRows || words[kPadRow] != "<pad>" || words[kUnkRow] != "<unk>") {
    throw data_error(path.string() + ": rows 0 and 1 must be <pad> and <unk>");
  }
  return words;
}

inline void save_vocabulary(const std::filesystem::path& path,
                            const std::vector<std::string>& words) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot write vocabulary " + path.string());
  for (const auto& w : words) out << w << '\n';
}

}  // namespace defo
