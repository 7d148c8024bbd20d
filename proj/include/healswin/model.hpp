#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "healswin/fisheye.hpp"
#include "healswin/grid_plan.hpp"
#include "healswin/tensor.hpp"

namespace healswin::model {

struct ModelConfig {
  std::int64_t nside{16};
  int num_faces{8};
  std::int64_t patch_size{4};
  std::int64_t window_size{64};
  std::int64_t shift{4};
  plan::ShiftStrategy shift_strategy{plan::ShiftStrategy::spiral};
  std::vector<int> depths{2, 2, 2, 2};
  std::vector<int> dims{32, 64, 128, 256};
  std::vector<int> heads{2, 4, 8, 16};
  int in_channels{3};
  int out_channels{1};
  double tau_min{0.01};

  int stages() const { return static_cast<int>(depths.size()); }
  std::int64_t num_pixels() const { return static_cast<std::int64_t>(num_faces) * nside * nside; }
  void validate() const;  // throws std::invalid_argument
};

struct LayerInfo {
  std::string name;
  std::int64_t tokens{0};
  std::int64_t windows{0};
  std::int64_t windows_per_base{0};
  std::int64_t nside{0};
  std::string followed_by;
};

/// Token/window sizes of every layer, encoder through decoder.
std::vector<LayerInfo> layer_chain(const ModelConfig& cfg);
std::string layer_chain_json(const ModelConfig& cfg);

/// Pair-to-bias-row map for a window: positions from the bit de-interleave
/// of the in-window offset, row = (dx + sx - 1) * (2*sy - 1) + (dy + sy - 1).
/// Shared across windows, stages and faces with the same window size.
struct RelPosIndex {
  std::int64_t window_size{0};
  std::int64_t sx{0};  // local grid extents, sx * sy = window_size
  std::int64_t sy{0};
  std::int64_t rows{0};  // (2*sx - 1) * (2*sy - 1)
  std::vector<std::int64_t> index;  // window_size^2 entries
};
std::shared_ptr<const RelPosIndex> rel_pos_index(std::int64_t window_size);

/// The HEAL-SWIN UNet: patch embedding, alternating plain/shifted masked
/// window-attention blocks with relative position bias, patch merging and
/// expansion with skip connections, and a linear task head.
template <typename T>
class HealSwin {
 public:
  using Var = typename ad::Tape<T>::Var;

  HealSwin(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore<T>& params() { return store_; }
  const ad::ParamStore<T>& params() const { return store_; }

  /// Registers every parameter on the tape, in store order.
  std::vector<Var> register_params(ad::Tape<T>& tape) const;

  /// Builds the forward graph for one input map; returns per-pixel logits
  /// of shape (num_pixels, out_channels). Invalid input pixels read as 0.
  Var build(ad::Tape<T>& tape, const HealpixMap& input, const std::vector<Var>& pvars) const;

  /// Convenience inference (no gradient recording).
  HealpixMap forward(const HealpixMap& input) const;

  /// One attention+MLP block on raw tokens; used by the masking probes.
  /// prefix names the parameter group, e.g. "enc0.blk1".
  Var block_forward(ad::Tape<T>& tape, Var tokens, int stage, const std::string& prefix,
                    const std::vector<Var>& pvars, bool shifted) const;

  std::vector<LayerInfo> trace() const { return layer_chain(cfg_); }

  /// Stage geometry, exposed for tests and the masking probe.
  struct StageInfo {
    plan::PatchGrid grid;
    std::int64_t window_size{0};
    std::int64_t num_windows{0};
    std::int64_t shift{0};  // effective shift; 0 disables shifted blocks
    std::shared_ptr<const plan::ShiftPlan> shift_plan;        // null when shift == 0
    std::vector<std::uint8_t> blocked;                        // (nw, ws, ws), 1 = do not attend
    std::shared_ptr<const RelPosIndex> rel;
  };
  const StageInfo& stage(int s) const { return stages_[s]; }

 private:
  Var p(const std::vector<Var>& pvars, const std::string& name) const;

  ModelConfig cfg_;
  ad::ParamStore<T> store_;
  std::vector<StageInfo> stages_;
};

using HealSwinF = HealSwin<float>;
using HealSwinD = HealSwin<double>;

}  // namespace healswin::model
