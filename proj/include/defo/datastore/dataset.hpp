#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "defo/encoders/pack.hpp"
#include "defo/encoders/tokenizer.hpp"
#include "defo/io/keyvalue.hpp"
#include "defo/io/records.hpp"

namespace defo {

/// Labelled images in [0,1], laid out [N × w × h × 3], with optional captions.
struct Dataset {
  std::size_t width = 32;
  std::size_t height = 32;
  Tensor images;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  std::string split = "train";
  std::vector<std::string> captions;  // empty or one per example

  std::size_t size() const { return labels.size(); }
  std::size_t k() const { return class_names.size(); }
  std::size_t image_values() const { return width * height * 3; }

  std::span<const double> image(std::size_t i) const {
    return images.values().subspan(i * image_values(), image_values());
  }

  Tensor image_tensor(std::size_t i) const {
    auto px = image(i);
    return Tensor({width, height, 3}, std::vector<double>(px.begin(), px.end()));
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d;
    d.width = width;
    d.height = height;
    d.class_names = class_names;
    d.split = split;
    if (idx.empty()) return d;
    d.images = Tensor({idx.size(), width, height, 3});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto px = image(idx[i]);
      std::copy(px.begin(), px.end(), d.images.data() + i * image_values());
      d.labels.push_back(labels[idx[i]]);
      if (!captions.empty()) d.captions.push_back(captions[idx[i]]);
    }
    return d;
  }

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (class_names.empty()) out.push_back("dataset has no class names");
    if (labels.empty()) out.push_back("dataset is empty");
    if (!labels.empty() && images.shape() != shape_t{labels.size(), width, height, 3}) {
      out.push_back("image tensor " + shape_str(images.shape()) + " does not match " +
                    std::to_string(labels.size()) + " examples of " + std::to_string(width) + "x" +
                    std::to_string(height) + "x3");
    }
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] >= k()) {
        out.push_back("label " + std::to_string(labels[i]) + " at example " + std::to_string(i) +
                      " is not below k = " + std::to_string(k()));
        break;
      }
    if (!captions.empty() && captions.size() != labels.size()) {
      out.push_back("caption count differs from example count");
    }
    return out;
  }

  void validate() const {
    if (auto v = violations(); !v.empty()) throw data_error(v.front());
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Checks the dataset against an encoder: geometry and tokenizable class names.
inline void validate_for_pack(const Dataset& d, const EncoderPack& pack) {
  d.validate();
  if (d.width != pack.config.image_width || d.height != pack.config.image_height) {
    throw dimension_error("dataset images are " + std::to_string(d.width) + "x" +
                          std::to_string(d.height) + ", encoder expects " +
                          std::to_string(pack.config.image_width) + "x" +
                          std::to_string(pack.config.image_height));
  }
  for (const auto& name : d.class_names) {
    bool known = false;
    for (const auto& w : split_words(name)) known = known || pack.row_of(w).has_value();
    if (!known) throw data_error("class name '" + name + "' has no known vocabulary word");
  }
}

inline constexpr char kDataMagic[] = "DFODATA1";
inline constexpr int kDatasetVersion = 1;

namespace detail {

inline std::string join(const std::vector<std::string>& v, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

inline std::string crc_hex(std::string_view bytes) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", io::crc32_of(bytes));
  return buf;
}

}  // namespace detail

/// Writes `dir/manifest.txt` and `dir/data.bin`.
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  d.validate();
  for (const auto& n : d.class_names)
    if (n.find(',') != std::string::npos) throw data_error("class name contains a comma: " + n);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());

  io::RecordFile f;
  f.magic = kDataMagic;
  f.header = detail::join(d.captions, "\n");
  f.tensors.push_back({"images", d.images});
  Tensor labels({d.size()});
  for (std::size_t i = 0; i < d.size(); ++i) labels[i] = static_cast<double>(d.labels[i]);
  f.tensors.push_back({"labels", std::move(labels)});
  const std::string blob = io::encode(f);
  io::write_bytes(dir / "data.bin", blob);

  io::KeyValueDoc m;
  m.set("", "version", std::to_string(kDatasetVersion));
  m.set("", "kind", "dataset");
  m.set("", "split", d.split);
  m.set("", "n_examples", std::to_string(d.size()));
  m.set("", "k", std::to_string(d.k()));
  m.set("", "w", std::to_string(d.width));
  m.set("", "h", std::to_string(d.height));
  m.set("", "class_names", detail::join(d.class_names, ","));
  m.set("", "captions", d.captions.empty() ? "false" : "true");
  m.set("", "blob", "data.bin");
  m.set("", "blob_crc32", detail::crc_hex(blob));
  io::write_bytes(dir / "manifest.txt", m.str());
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.txt";
  const std::string ctx = mpath.string();
  const auto m = io::KeyValueDoc::parse(io::read_bytes(mpath), ctx);
  auto num = [&](const char* key) {
    auto v = io::parse_number<std::size_t>(m.require(key, ctx));
    if (!v) throw data_error(ctx + ": '" + key + "' is not a non-negative integer");
    return *v;
  };
  if (m.require("kind", ctx) != "dataset") throw data_error(ctx + ": kind is not 'dataset'");
  if (num("version") != std::size_t(kDatasetVersion)) {
    throw version_error(ctx + ": dataset version " + m.require("version", ctx) + ", expected " +
                        std::to_string(kDatasetVersion));
  }
  Dataset d;
  d.split = m.require("split", ctx);
  d.width = num("w");
  d.height = num("h");
  d.class_names = io::split_list(m.require("class_names", ctx));
  const std::size_t n = num("n_examples"), k = num("k");
  if (d.class_names.size() != k) {
    throw data_error(ctx + ": k = " + std::to_string(k) + " but " +
                     std::to_string(d.class_names.size()) + " class names");
  }

  const auto bpath = dir / m.require("blob", ctx);
  if (!std::filesystem::exists(bpath)) throw io_error("missing dataset blob " + bpath.string());
  const std::string blob = io::read_bytes(bpath);
  if (detail::crc_hex(blob) != m.require("blob_crc32", ctx)) {
    throw checksum_error(bpath.string() + ": CRC32 differs from manifest");
  }
  const auto f = io::decode(blob, kDataMagic, bpath.string());
  const Tensor* images = f.find("images");
  const Tensor* labels = f.find("labels");
  if (!images || !labels) throw data_error(bpath.string() + ": missing images or labels record");
  if (labels->size() != n) {
    throw data_error(ctx + ": n_examples = " + std::to_string(n) + " but blob holds " +
                     std::to_string(labels->size()) + " labels");
  }
  d.images = *images;
  for (double v : labels->values()) {
    if (v < 0 || v != std::floor(v)) throw data_error(bpath.string() + ": non-integer label");
    d.labels.push_back(static_cast<std::size_t>(v));
  }
  if (io::parse_bool(m.get("captions").value_or("false")).value_or(false)) {
    d.captions = io::split_list(f.header, '\n');
    for (auto& c : d.captions) c = io::trim(c);
  }
  d.validate();
  return d;
}

}  // namespace defo
