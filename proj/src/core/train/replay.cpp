#include "core/train/replay.hpp"

namespace mmr::train {

StoredStep pack_step(const sim::Observation& obs, int prev_action, float reward,
                     float collision) {
  MMR_REQUIRE(static_cast<int>(obs.grid.size()) == sim::Observation::kGridCells,
              "pack_step: grid size");
  MMR_REQUIRE(prev_action >= -1 && prev_action < sim::kNumActions,
              "pack_step: prev_action out of range");
  StoredStep s;
  for (int i = 0; i < sim::Observation::kGridCells; ++i) {
    if (obs.grid[static_cast<size_t>(i)])
      s.grid[static_cast<size_t>(i >> 3)] |= static_cast<uint8_t>(1u << (i & 7));
  }
  for (int i = 0; i < sim::Observation::kProprio; ++i)
    s.proprio[static_cast<size_t>(i)] = static_cast<float>(obs.proprio[static_cast<size_t>(i)]);
  s.prev_action = static_cast<int16_t>(prev_action);
  s.reward = reward;
  s.collision = collision;
  return s;
}

StoredEpisode pack_episode(const demos::Episode& e) {
  MMR_REQUIRE(e.obs.size() == e.action.size() + 1, "pack_episode: obs/action length");
  StoredEpisode ep;
  ep.demo = true;
  ep.steps.reserve(e.obs.size());
  for (size_t i = 0; i < e.obs.size(); ++i) {
    int prev = i == 0 ? -1 : e.action[i - 1];
    float r = i == 0 ? 0.0f : static_cast<float>(e.reward[i - 1]);
    float c = i == 0 ? 0.0f : static_cast<float>(e.collision[i - 1]);
    ep.steps.push_back(pack_step(e.obs[i], prev, r, c));
  }
  return ep;
}

void unpack_obs(const StoredStep& s, float* out) {
  for (int i = 0; i < sim::Observation::kGridCells; ++i)
    out[i] = (s.grid[static_cast<size_t>(i >> 3)] >> (i & 7)) & 1u ? 1.0f : 0.0f;
  for (int i = 0; i < sim::Observation::kProprio; ++i)
    out[sim::Observation::kGridCells + i] = s.proprio[static_cast<size_t>(i)];
}

ReplayBuffer::ReplayBuffer(long capacity) : capacity_(capacity) {
  MMR_REQUIRE(capacity >= 1, "ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add(StoredEpisode ep) {
  MMR_REQUIRE(ep.steps.size() >= 2, "ReplayBuffer::add: episode too short");
  total_steps_ += ep.env_steps();
  if (ep.demo) ++demo_episodes_;
  episodes_.push_back(std::move(ep));
  while (total_steps_ > capacity_) {
    auto it = episodes_.begin();
    while (it != episodes_.end() && it->demo) ++it;
    if (it == episodes_.end()) break;
    total_steps_ -= it->env_steps();
    episodes_.erase(it);
  }
}

long ReplayBuffer::valid_starts(const StoredEpisode& ep, int slice_len) const {
  long n = static_cast<long>(ep.steps.size()) - slice_len + 1;
  return n > 0 ? n : 0;
}

bool ReplayBuffer::can_sample(int slice_len) const {
  for (const auto& ep : episodes_)
    if (valid_starts(ep, slice_len) > 0) return true;
  return false;
}

wm::SeqBatch ReplayBuffer::sample_slices(int n, int slice_len, Rng& rng) const {
  MMR_REQUIRE(n >= 1 && slice_len >= 2, "sample_slices: bad shape");
  long total = 0;
  for (const auto& ep : episodes_) total += valid_starts(ep, slice_len);
  MMR_REQUIRE(total > 0, "sample_slices: no episode long enough");

  const int obs_dim = sim::Observation::kFlatDim;
  wm::SeqBatch b;
  b.batch = n;
  b.steps = slice_len;
  b.obs = Mat::Zero(n * slice_len, obs_dim);
  b.prev_action = Mat::Zero(n * slice_len, sim::kNumActions);
  b.reward = Vec::Zero(n * slice_len);
  b.collision = Vec::Zero(n * slice_len);
  b.demo_mask = Vec::Zero(n * slice_len);

  std::vector<float> row(static_cast<size_t>(obs_dim));
  for (int k = 0; k < n; ++k) {
    long pick = static_cast<long>(rng.uniform_int(total));
    const StoredEpisode* chosen = nullptr;
    long start = 0;
    for (const auto& ep : episodes_) {
      long v = valid_starts(ep, slice_len);
      if (pick < v) {
        chosen = &ep;
        start = pick;
        break;
      }
      pick -= v;
    }
    MMR_REQUIRE(chosen != nullptr, "sample_slices: index walk failed");
    for (int t = 0; t < slice_len; ++t) {
      const StoredStep& s = chosen->steps[static_cast<size_t>(start + t)];
      int r = t * n + k;
      unpack_obs(s, row.data());
      for (int j = 0; j < obs_dim; ++j) b.obs(r, j) = row[static_cast<size_t>(j)];
      if (s.prev_action >= 0) b.prev_action(r, s.prev_action) = 1.0f;
      b.reward(r) = s.reward;
      b.collision(r) = s.collision;
      b.demo_mask(r) = chosen->demo ? 1.0f : 0.0f;
    }
  }
  return b;
}

}  // namespace mmr::train
