#pragma once

#include <string>
#include <vector>

#include "defo/numcore/gradcheck.hpp"
#include "defo/numcore/ops.hpp"
#include "defo/numcore/rng.hpp"

namespace defo {

struct GradcheckEntry {
  std::string name;
  double error = 0.0;
};

namespace detail {

inline Tensor gaussian(shape_t shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

/// ⟨x, R⟩ for a fixed random R, so every output entry carries gradient.
inline Var projected(Tape& tape, Var x, std::uint64_t seed) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Tensor w({x.size(), 1});
  for (auto& v : w.values()) v = rng.normal();
  return matmul(reshape(x, {1, x.size()}), tape.constant(std::move(w)));
}

}  // namespace detail

/// Gradcheck of every differentiable op at double precision for one seed.
inline std::vector<GradcheckEntry> op_gradcheck_suite(std::uint64_t seed) {
  using detail::gaussian;
  using detail::projected;
  Rng rng = Rng::stream(seed, "gradcheck");
  std::vector<GradcheckEntry> out;
  auto check = [&](std::string name, scalar_fn<double> f, const Tensor& at) {
    out.push_back({std::move(name), gradcheck(f, at)});
  };

  const Tensor b = gaussian({4, 3}, rng), a = gaussian({3, 2}, rng);
  check("matmul.lhs", [&](Tape& t, Var x) { return projected(t, matmul(x, t.constant(b)), seed); },
        gaussian({2, 4}, rng));
  check("matmul.rhs", [&](Tape& t, Var x) { return projected(t, matmul(t.constant(a), x), seed); },
        gaussian({2, 5}, rng));
  check("add", [&](Tape& t, Var x) { return projected(t, add(x, gelu(x)), seed); }, gaussian({2, 3}, rng));
  check("scale", [&](Tape& t, Var x) { return projected(t, scale(x, -2.5), seed); }, gaussian({3}, rng));
  check("transpose", [&](Tape& t, Var x) { return projected(t, transpose(x), seed); }, gaussian({2, 3}, rng));
  check("l2_normalize", [&](Tape& t, Var x) { return projected(t, l2_normalize(x), seed); },
        gaussian({3, 5}, rng));
  check("softmax", [&](Tape& t, Var x) { return projected(t, softmax(x), seed); }, gaussian({2, 6}, rng));
  check("gelu", [&](Tape& t, Var x) { return projected(t, gelu(x), seed); }, gaussian({3, 4}, rng));

  const Tensor gain = gaussian({6}, rng), bias = gaussian({6}, rng), xin = gaussian({3, 6}, rng);
  check("layer_norm.x",
        [&](Tape& t, Var x) { return projected(t, layer_norm(x, t.constant(gain), t.constant(bias)), seed); },
        xin);
  check("layer_norm.gain",
        [&](Tape& t, Var g) { return projected(t, layer_norm(t.constant(xin), g, t.constant(bias)), seed); },
        gain);
  check("layer_norm.bias",
        [&](Tape& t, Var bb) { return projected(t, layer_norm(t.constant(xin), t.constant(gain), bb), seed); },
        bias);

  const Tensor q = gaussian({8, 4}, rng), k = gaussian({8, 4}, rng), v = gaussian({8, 4}, rng);
  check("attention.q",
        [&](Tape& t, Var x) { return projected(t, attention(x, t.constant(k), t.constant(v), 2, 4), seed); }, q);
  check("attention.k",
        [&](Tape& t, Var x) { return projected(t, attention(t.constant(q), x, t.constant(v), 2, 4), seed); }, k);
  check("attention.v",
        [&](Tape& t, Var x) { return projected(t, attention(t.constant(q), t.constant(k), x, 2, 4), seed); }, v);

  const std::vector<std::size_t> labels{2, 0, 4};
  check("cross_entropy", [&](Tape&, Var x) { return cross_entropy(x, labels); }, gaussian({3, 5}, rng));
  const std::vector<std::size_t> idx{2, 0, 2, 1};
  check("gather_rows", [&](Tape& t, Var x) { return projected(t, gather_rows(x, idx), seed); },
        gaussian({3, 4}, rng));
  check("mean_pool_rows", [&](Tape& t, Var x) { return projected(t, mean_pool_rows(x, 3), seed); },
        gaussian({6, 2}, rng));
  check("add_rowwise", [&](Tape& t, Var bb) { return projected(t, add_rowwise(t.constant(k), bb), seed); },
        gaussian({4}, rng));
  check("concat_rows",
        [&](Tape& t, Var x) {
          Var parts[] = {x, t.constant(k), x};
          return projected(t, concat_rows<double>(parts), seed);
        },
        gaussian({2, 4}, rng));
  check("reshape", [&](Tape& t, Var x) { return projected(t, reshape(x, {3, 2}), seed); }, gaussian({2, 3}, rng));
  check("sum", [&](Tape&, Var x) { return sum(gelu(x)); }, gaussian({5}, rng));
  const std::vector<std::uint8_t> open(6, 1);
  check("mask_grad", [&](Tape& t, Var x) { return projected(t, mask_grad(x, open), seed); },
        gaussian({2, 3}, rng));
  return out;
}

}  // namespace defo
