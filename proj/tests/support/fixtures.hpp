#pragma once

#include <cstdint>
#include <vector>

#include "fsnet/image.hpp"
#include "fsnet/synthetic.hpp"
#include "fsnet/trainer.hpp"

namespace fsnet::testing {

inline SyntheticSequence small_video(SyntheticKind kind, std::size_t side, double object,
                                     std::size_t frames, std::uint64_t seed) {
  SyntheticConfig c;
  c.kind = kind;
  c.width = c.height = side;
  c.object_size = object;
  c.frames = frames;
  c.seed = seed;
  return make_synthetic(c);
}

inline VideoDomain to_domain(const SyntheticSequence& s, std::size_t id) {
  VideoDomain v;
  v.id = id;
  for (const auto& f : s.frames) v.frames.push_back(to_tensor(f));
  v.gt_rects = s.gt;
  return v;
}

inline std::vector<Tensor<double>> to_tensors(const SyntheticSequence& s) {
  std::vector<Tensor<double>> out;
  for (const auto& f : s.frames) out.push_back(to_tensor(f));
  return out;
}

}  // namespace fsnet::testing
