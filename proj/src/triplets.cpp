#include <algorithm>
#include <map>

#include "tsgnn/error.hpp"
#include "tsgnn/rng.hpp"
#include "tsgnn/training.hpp"

namespace tsgnn {

TripletSample sample_triplets(std::span<const std::size_t> labels, std::span<const std::size_t> restricted_to,
                              std::uint64_t seed) {
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t idx : restricted_to) {
    if (idx >= labels.size()) {
      throw ContractViolation("sample_triplets: index " + std::to_string(idx) + " out of range");
    }
    members[labels[idx]].push_back(idx);
  }
  if (members.size() < 2) throw DomainError("sample_triplets: need at least two classes, got " + std::to_string(members.size()));

  // Pool of negatives per class: every restricted index of another class.
  std::map<std::size_t, std::vector<std::size_t>> others;
  for (const auto& [cls, _] : members) {
    auto& pool = others[cls];
    for (std::size_t idx : restricted_to)
      if (labels[idx] != cls) pool.push_back(idx);
  }

  Rng rng(seed);
  TripletSample out;
  out.triplets.reserve(restricted_to.size());
  for (std::size_t anchor : restricted_to) {
    const auto& same = members[labels[anchor]];
    const auto partners = static_cast<std::size_t>(std::count_if(same.begin(), same.end(), [&](std::size_t i) { return i != anchor; }));
    if (partners == 0) {
      ++out.skipped_anchors;
      continue;
    }
    std::size_t pick = rng.index(partners);
    std::size_t positive = anchor;
    for (std::size_t i : same) {
      if (i == anchor) continue;
      if (pick-- == 0) {
        positive = i;
        break;
      }
    }
    const auto& pool = others[labels[anchor]];
    out.triplets.push_back({anchor, positive, pool[rng.index(pool.size())]});
  }
  return out;
}

Tensor triplet_loss(Tape& tape, const Tensor& anchor, const Tensor& positive, const Tensor& negative, double margin) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw ContractViolation("triplet_loss: embedding lengths differ (" + std::to_string(anchor.size()) + ", " +
                            std::to_string(positive.size()) + ", " + std::to_string(negative.size()) + ")");
  }
  if (!(margin > 0.0)) throw ContractViolation("triplet_loss: margin must be positive");
  const Tensor d_ap = tape.squared_l2_distance(anchor, positive);
  const Tensor d_an = tape.squared_l2_distance(anchor, negative);
  return tape.relu(tape.add_scalar(tape.sub(d_ap, d_an), margin));
}

}  // namespace tsgnn
