#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "core/common.hpp"
#include "core/demos/demos.hpp"
#include "core/wm/worldmodel.hpp"

namespace mmr::train {

using num::Mat;
using num::Vec;

// One observation plus the transition that produced it. prev_action is -1 at
// an episode head; reward/collision are the outcome of prev_action.
struct StoredStep {
  std::array<uint8_t, sim::Observation::kGridCells / 8> grid{};
  std::array<float, sim::Observation::kProprio> proprio{};
  int16_t prev_action = -1;
  float reward = 0.0f;
  float collision = 0.0f;
};

struct StoredEpisode {
  bool demo = false;
  std::vector<StoredStep> steps;  // one per observation: env steps + 1

  long env_steps() const { return static_cast<long>(steps.size()) - 1; }
};

StoredStep pack_step(const sim::Observation& obs, int prev_action, float reward,
                     float collision);
StoredEpisode pack_episode(const demos::Episode& e);
void unpack_obs(const StoredStep& s, float* out);

// Fixed-capacity step store. Demo episodes are pinned; once total steps
// exceed capacity the oldest online episode is dropped.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(long capacity);

  void add(StoredEpisode ep);
  bool can_sample(int slice_len) const;
  wm::SeqBatch sample_slices(int n, int slice_len, Rng& rng) const;

  long capacity() const { return capacity_; }
  long total_steps() const { return total_steps_; }
  int episodes() const { return static_cast<int>(episodes_.size()); }
  int demo_episodes() const { return demo_episodes_; }
  const StoredEpisode& episode(int i) const { return episodes_[static_cast<size_t>(i)]; }

 private:
  long valid_starts(const StoredEpisode& ep, int slice_len) const;

  long capacity_;
  long total_steps_ = 0;
  int demo_episodes_ = 0;
  std::vector<StoredEpisode> episodes_;
};

}  // namespace mmr::train
