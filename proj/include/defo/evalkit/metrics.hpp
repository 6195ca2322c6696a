#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "defo/datastore/dataset.hpp"
#include "defo/io/records.hpp"
#include "defo/protocols/heads.hpp"

namespace defo {

/// Maps an image (w×h×3 values) to a prediction.
using HeadFn = std::function<Prediction(std::span<const double>)>;

struct EvalReport {
  std::size_t n = 0;
  double top1 = 0.0;
  double top5 = 0.0;
  std::vector<double> per_class;     // [k]; classes absent from the set report 0
  double classwise_std = 0.0;
  std::vector<std::size_t> confusion;  // [k × k], row = true label, column = predicted
  std::vector<Prediction> predictions;  // kept only when requested

  std::size_t k() const { return per_class.size(); }
  std::size_t count(std::size_t truth, std::size_t predicted) const {
    return confusion[truth * k() + predicted];
  }
};

/// Population std by default; `sample` divides by k − 1.
inline double classwise_std(std::span<const double> acc, bool sample = false) {
  const std::size_t k = acc.size();
  if (k < 2) throw config_error("classwise_std needs at least 2 classes, got " + std::to_string(k));
  double mean = 0.0;
  for (double a : acc) mean += a - acc[0];
  mean /= double(k);
  double ss = 0.0;
  for (double a : acc) ss += (a - acc[0] - mean) * (a - acc[0] - mean);
  return std::sqrt(ss / double(sample ? k - 1 : k));
}

/// Metrics from already-computed predictions. Top-5 membership uses each prediction's top5 list.
inline EvalReport evaluate_predictions(std::vector<Prediction> preds,
                                       std::span<const std::size_t> labels, std::size_t k,
                                       bool keep_predictions = false) {
  if (preds.empty()) throw data_error("cannot evaluate an empty dataset");
  if (preds.size() != labels.size()) throw dimension_error("evaluate: predictions and labels differ in count");
  EvalReport r;
  r.n = preds.size();
  r.confusion.assign(k * k, 0);
  std::vector<std::size_t> support(k), hits(k);
  std::size_t top1 = 0, top5 = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::size_t y = labels[i];
    const std::size_t p = preds[i].predicted;
    if (y >= k || p >= k) throw data_error("evaluate: class index out of range at example " + std::to_string(i));
    ++r.confusion[y * k + p];
    ++support[y];
    if (p == y) {
      ++top1;
      ++hits[y];
    }
    for (const auto& [c, prob] : preds[i].top5) {
      if (c == y) {
        ++top5;
        break;
      }
    }
  }
  r.top1 = double(top1) / double(r.n);
  r.top5 = double(top5) / double(r.n);
  r.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) r.per_class[c] = support[c] ? double(hits[c]) / double(support[c]) : 0.0;
  r.classwise_std = k >= 2 ? classwise_std(r.per_class) : 0.0;
  if (keep_predictions) r.predictions = std::move(preds);
  return r;
}

inline EvalReport evaluate(const HeadFn& head, const Dataset& data, bool keep_predictions = false) {
  if (data.size() == 0) throw data_error("cannot evaluate an empty dataset");
  std::vector<Prediction> preds;
  preds.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) preds.push_back(head(data.image(i)));
  return evaluate_predictions(std::move(preds), data.labels, data.k(), keep_predictions);
}

/// Batched path for a Predictor: encodes every image once.
inline EvalReport evaluate(const Predictor& predictor, const EncoderPack& pack, const Dataset& data,
                           bool keep_predictions = false) {
  if (data.size() == 0) throw data_error("cannot evaluate an empty dataset");
  const Tensor feats = encode_images(pack, data.images.values(), data.size());
  const Tensor probs = predictor.probabilities(feats);
  std::vector<Prediction> preds;
  preds.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) preds.push_back(make_prediction(probs.row(i)));
  return evaluate_predictions(std::move(preds), data.labels, data.k(), keep_predictions);
}

inline std::string format_sig6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// index,label,class_1,prob_1,…,class_5,prob_5; one row per example.
inline std::string top5_csv(const std::vector<Prediction>& preds, const Dataset& data) {
  std::string out = "index,label";
  for (int r = 1; r <= 5; ++r) out += ",class_" + std::to_string(r) + ",prob_" + std::to_string(r);
  out += '\n';
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out += std::to_string(i) + ',' + data.class_names[data.labels[i]];
    for (std::size_t r = 0; r < 5; ++r) {
      if (r < preds[i].top5.size()) {
        const auto& [c, p] = preds[i].top5[r];
        out += ',' + data.class_names[c] + ',' + format_sig6(p);
      } else {
        out += ",,";
      }
    }
    out += '\n';
  }
  return out;
}

inline void dump_top5(const HeadFn& head, const Dataset& data, const std::filesystem::path& path) {
  auto r = evaluate(head, data, true);
  io::write_bytes(path, top5_csv(r.predictions, data));
}

inline void dump_top5(const Predictor& predictor, const EncoderPack& pack, const Dataset& data,
                      const std::filesystem::path& path) {
  auto r = evaluate(predictor, pack, data, true);
  io::write_bytes(path, top5_csv(r.predictions, data));
}

}  // namespace defo
