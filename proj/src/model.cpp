#include "healswin/model.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include <json.hpp>

namespace healswin::model {

namespace {

bool is_pow4(std::int64_t v) {
  return v > 0 && (v & (v - 1)) == 0 && (v & 0x5555555555555555LL) != 0;
}

// Deterministic across platforms: splitmix64 + Box-Muller, no dependence on
// library distribution internals.
struct InitRng {
  std::uint64_t state;

  std::uint64_t next_u64() {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double u01() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }
  double normal() {
    double u1 = u01();
    while (u1 <= 1e-300) u1 = u01();
    const double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * hp::kPi * u2);
  }
  // standard transformer init: normal(0, sigma) truncated at +-2 sigma
  double trunc_normal(double sigma) {
    double x = normal();
    while (std::fabs(x) > 2.0) x = normal();
    return x * sigma;
  }
};

constexpr double kLogTauInit = -2.302585092994046;  // tau = 0.1

}  // namespace

void ModelConfig::validate() const {
  hp::NSide ns(nside);  // throws on non-power-of-two
  if (num_faces != 8 && num_faces != 12)
    throw std::invalid_argument("model: num_faces must be 8 or 12");
  if (!is_pow4(patch_size)) throw std::invalid_argument("model: patch_size must be a power of 4");
  if (!is_pow4(window_size))
    throw std::invalid_argument("model: window_size must be a power of 4");
  if (depths.empty() || depths.size() != dims.size() || depths.size() != heads.size())
    throw std::invalid_argument("model: depths, dims and heads must have equal nonzero length");
  for (std::size_t s = 0; s < depths.size(); ++s) {
    if (depths[s] < 1) throw std::invalid_argument("model: stage depth must be >= 1");
    if (dims[s] < 1 || heads[s] < 1 || dims[s] % heads[s] != 0)
      throw std::invalid_argument("model: dims must be positive and divisible by heads");
  }
  std::int64_t edge = 1;
  while (edge * edge < patch_size) edge *= 2;
  const std::int64_t nside_patches = nside / edge;
  if (nside_patches < 1 || nside % edge != 0)
    throw std::invalid_argument("model: patch_size too large for nside");
  if (nside_patches >> (stages() - 1) < 1)
    throw std::invalid_argument("model: too many stages, merging would go below nside 1");
  if (shift < 0) throw std::invalid_argument("model: shift must be >= 0");
  if (in_channels < 1 || out_channels < 1)
    throw std::invalid_argument("model: channel counts must be positive");
  if (tau_min <= 0) throw std::invalid_argument("model: tau_min must be positive");
}

std::vector<LayerInfo> layer_chain(const ModelConfig& cfg) {
  cfg.validate();
  const int S = cfg.stages();
  std::int64_t edge = 1;
  while (edge * edge < cfg.patch_size) edge *= 2;
  const std::int64_t nside_patches = cfg.nside / edge;

  auto row = [&](std::string name, std::int64_t nside_level, std::string next) {
    const std::int64_t tokens =
        static_cast<std::int64_t>(cfg.num_faces) * nside_level * nside_level;
    const std::int64_t ws = std::min(cfg.window_size, tokens);
    LayerInfo li;
    li.name = std::move(name);
    li.tokens = tokens;
    li.windows = tokens / ws;
    li.windows_per_base = li.windows / cfg.num_faces;
    li.nside = nside_level;
    li.followed_by = std::move(next);
    return li;
  };

  std::vector<LayerInfo> out;
  out.push_back(row("input", cfg.nside, "patch embedding"));
  int block = 1;
  for (int s = 0; s < S; ++s, ++block)
    out.push_back(row("block " + std::to_string(block), nside_patches >> s,
                      s < S - 1 ? "patch merging" : "patch expansion"));
  for (int s = S - 2; s >= 0; --s, ++block)
    out.push_back(
        row("block " + std::to_string(block), nside_patches >> s, "patch expansion"));
  out.push_back(row("output", cfg.nside, "---"));
  return out;
}

std::string layer_chain_json(const ModelConfig& cfg) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& li : layer_chain(cfg)) {
    arr.push_back({{"layer", li.name},
                   {"tokens", li.tokens},
                   {"windows", li.windows},
                   {"windows_per_base", li.windows_per_base},
                   {"nside", li.nside},
                   {"followed_by", li.followed_by}});
  }
  return arr.dump(2);
}

std::shared_ptr<const RelPosIndex> rel_pos_index(std::int64_t window_size) {
  if (window_size < 1 || (window_size & (window_size - 1)) != 0)
    throw std::invalid_argument("rel_pos_index: window size must be a power of two, got " +
                                std::to_string(window_size));
  static std::mutex mu;
  static std::map<std::int64_t, std::shared_ptr<const RelPosIndex>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(window_size);
  if (it != cache.end()) return it->second;

  auto rp = std::make_shared<RelPosIndex>();
  rp->window_size = window_size;
  std::vector<std::int64_t> xs(window_size), ys(window_size);
  std::int64_t sx = 1, sy = 1;
  for (std::int64_t o = 0; o < window_size; ++o) {
    std::uint64_t x, y;
    hp::deinterleave_bits(static_cast<std::uint64_t>(o), x, y);
    xs[o] = static_cast<std::int64_t>(x);
    ys[o] = static_cast<std::int64_t>(y);
    sx = std::max(sx, xs[o] + 1);
    sy = std::max(sy, ys[o] + 1);
  }
  rp->sx = sx;
  rp->sy = sy;
  rp->rows = (2 * sx - 1) * (2 * sy - 1);
  rp->index.resize(static_cast<std::size_t>(window_size * window_size));
  for (std::int64_t i = 0; i < window_size; ++i)
    for (std::int64_t j = 0; j < window_size; ++j) {
      const std::int64_t dx = xs[i] - xs[j];
      const std::int64_t dy = ys[i] - ys[j];
      rp->index[i * window_size + j] = (dx + sx - 1) * (2 * sy - 1) + (dy + sy - 1);
    }
  cache.emplace(window_size, rp);
  return rp;
}

template <typename T>
HealSwin<T>::HealSwin(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int S = cfg_.stages();
  std::int64_t edge = 1;
  while (edge * edge < cfg_.patch_size) edge *= 2;
  const std::int64_t nside_patches = cfg_.nside / edge;

  stages_.resize(S);
  for (int s = 0; s < S; ++s) {
    StageInfo& st = stages_[s];
    st.grid = plan::PatchGrid{nside_patches >> s, cfg_.patch_size << (2 * s), cfg_.num_faces};
    st.window_size = std::min(cfg_.window_size, st.grid.length());
    const auto part = plan::partition_windows(st.grid, st.window_size);
    st.num_windows = part.num_windows;
    st.rel = rel_pos_index(st.window_size);
    // A single window attends globally; shifting it would only mask pairs.
    std::int64_t shift = 0;
    if (st.num_windows > 1) {
      shift = cfg_.shift_strategy == plan::ShiftStrategy::spiral
                  ? cfg_.shift % st.grid.length()
                  : cfg_.shift % st.grid.nside;
    }
    st.shift = shift;
    if (shift > 0) {
      st.shift_plan = plan::cached_plan(st.grid, cfg_.shift_strategy, shift);
      const auto mask = plan::attention_mask(*st.shift_plan, part);
      st.blocked.resize(mask.attend.size());
      for (std::size_t i = 0; i < mask.attend.size(); ++i) st.blocked[i] = !mask.attend[i];
    }
  }

  InitRng rng{seed * 0x9e3779b97f4a7c15ULL + 0x6a09e667f3bcc908ULL};
  auto dense = [&](const std::string& name, std::int64_t in, std::int64_t out) {
    ad::Array<T> w = ad::Array<T>::zeros({in, out});
    for (auto& v : w.v) v = static_cast<T>(rng.trunc_normal(0.02));
    store_.add(name + ".w", std::move(w));
    store_.add(name + ".b", ad::Array<T>::zeros({out}));
  };
  auto norm = [&](const std::string& name, std::int64_t d) {
    store_.add(name + ".g", ad::Array<T>::full({d}, T(1)));
    store_.add(name + ".b", ad::Array<T>::zeros({d}));
  };
  auto block_params = [&](const std::string& pre, int s) {
    const std::int64_t d = cfg_.dims[s];
    const std::int64_t h = cfg_.heads[s];
    dense(pre + ".attn.q", d, d);
    dense(pre + ".attn.k", d, d);
    dense(pre + ".attn.v", d, d);
    dense(pre + ".attn.o", d, d);
    store_.add(pre + ".attn.log_tau", ad::Array<T>::full({h}, static_cast<T>(kLogTauInit)));
    store_.add(pre + ".attn.bias_table", ad::Array<T>::zeros({stages_[s].rel->rows, h}));
    norm(pre + ".norm1", d);
    dense(pre + ".mlp.fc1", d, 4 * d);
    dense(pre + ".mlp.fc2", 4 * d, d);
    norm(pre + ".norm2", d);
  };

  dense("embed", cfg_.patch_size * cfg_.in_channels, cfg_.dims[0]);
  norm("embed.norm", cfg_.dims[0]);
  for (int s = 0; s < S; ++s) {
    for (int dpt = 0; dpt < cfg_.depths[s]; ++dpt)
      block_params("enc" + std::to_string(s) + ".blk" + std::to_string(dpt), s);
    if (s < S - 1) {
      dense("merge" + std::to_string(s), 4 * cfg_.dims[s], cfg_.dims[s + 1]);
      norm("merge" + std::to_string(s) + ".norm", cfg_.dims[s + 1]);
    }
  }
  for (int s = S - 2; s >= 0; --s) {
    const std::string pre = "dec" + std::to_string(s);
    dense(pre + ".expand", cfg_.dims[s + 1], 4 * cfg_.dims[s]);
    norm(pre + ".expand.norm", cfg_.dims[s]);
    dense(pre + ".fuse", 2 * cfg_.dims[s], cfg_.dims[s]);
    for (int dpt = 0; dpt < cfg_.depths[s]; ++dpt)
      block_params(pre + ".blk" + std::to_string(dpt), s);
  }
  dense("head.expand", cfg_.dims[0], cfg_.patch_size * cfg_.dims[0]);
  norm("head.norm", cfg_.dims[0]);
  dense("head.out", cfg_.dims[0], cfg_.out_channels);
}

template <typename T>
std::vector<typename HealSwin<T>::Var> HealSwin<T>::register_params(ad::Tape<T>& tape) const {
  std::vector<Var> out;
  out.reserve(static_cast<std::size_t>(store_.size()));
  for (std::int64_t i = 0; i < store_.size(); ++i)
    out.push_back(tape.param(store_.entry(i).value));
  return out;
}

template <typename T>
typename HealSwin<T>::Var HealSwin<T>::p(const std::vector<Var>& pvars,
                                         const std::string& name) const {
  const std::int64_t i = store_.find(name);
  if (i < 0) throw std::logic_error("model parameter not found: " + name);
  return pvars[static_cast<std::size_t>(i)];
}

template <typename T>
typename HealSwin<T>::Var HealSwin<T>::block_forward(ad::Tape<T>& tape, Var x, int stage,
                                                     const std::string& prefix,
                                                     const std::vector<Var>& pvars,
                                                     bool shifted) const {
  const StageInfo& st = stages_[stage];
  const int dim = cfg_.dims[stage];
  const int num_heads = cfg_.heads[stage];
  if (shifted && !st.shift_plan)
    throw std::invalid_argument("block_forward: stage " + std::to_string(stage) +
                                " has no shift plan");
  const std::int64_t n = st.grid.length();
  const std::int64_t ws = st.window_size;
  const std::int64_t nw = st.num_windows;
  const std::int64_t hd = dim / num_heads;

  Var xa = x;
  if (shifted) xa = tape.gather_rows(xa, st.shift_plan->forward);

  auto split_heads = [&](Var t) {
    return tape.permute(tape.reshape(t, {nw, ws, num_heads, hd}), {0, 2, 1, 3});
  };
  Var q = split_heads(tape.linear(xa, p(pvars, prefix + ".attn.q.w"), p(pvars, prefix + ".attn.q.b")));
  Var k = split_heads(tape.linear(xa, p(pvars, prefix + ".attn.k.w"), p(pvars, prefix + ".attn.k.b")));
  Var v = split_heads(tape.linear(xa, p(pvars, prefix + ".attn.v.w"), p(pvars, prefix + ".attn.v.b")));

  Var tau = tape.clamp_min(tape.exp(p(pvars, prefix + ".attn.log_tau")),
                           static_cast<T>(cfg_.tau_min));
  Var bias = tape.permute(
      tape.reshape(tape.gather_rows(p(pvars, prefix + ".attn.bias_table"), st.rel->index),
                   {ws, ws, num_heads}),
      {2, 0, 1});

  static const std::vector<std::uint8_t> kNoMask;
  Var attn = ad::cosine_attention(tape, q, k, v, tau, bias, shifted ? st.blocked : kNoMask,
                                  static_cast<T>(cfg_.tau_min));
  attn = tape.reshape(tape.permute(attn, {0, 2, 1, 3}), {n, dim});
  attn = tape.linear(attn, p(pvars, prefix + ".attn.o.w"), p(pvars, prefix + ".attn.o.b"));
  if (shifted) attn = tape.gather_rows(attn, st.shift_plan->inverse);

  x = tape.add(x, tape.layer_norm(attn, p(pvars, prefix + ".norm1.g"),
                                  p(pvars, prefix + ".norm1.b")));

  Var m = tape.linear(x, p(pvars, prefix + ".mlp.fc1.w"), p(pvars, prefix + ".mlp.fc1.b"));
  m = tape.gelu(m);
  m = tape.linear(m, p(pvars, prefix + ".mlp.fc2.w"), p(pvars, prefix + ".mlp.fc2.b"));
  return tape.add(x, tape.layer_norm(m, p(pvars, prefix + ".norm2.g"),
                                     p(pvars, prefix + ".norm2.b")));
}

template <typename T>
typename HealSwin<T>::Var HealSwin<T>::build(ad::Tape<T>& tape, const HealpixMap& input,
                                             const std::vector<Var>& pvars) const {
  if (input.nside != cfg_.nside || input.num_faces != cfg_.num_faces ||
      input.channels != cfg_.in_channels)
    throw std::invalid_argument("model input does not match config (nside/faces/channels)");
  if (pvars.size() != static_cast<std::size_t>(store_.size()))
    throw std::invalid_argument("model: register_params result expected");

  const std::int64_t npix = cfg_.num_pixels();
  ad::Array<T> px = ad::Array<T>::zeros({npix, cfg_.in_channels});
  for (std::int64_t i = 0; i < npix; ++i) {
    if (!input.valid(i)) continue;  // uncovered pixels enter as zeros
    for (int c = 0; c < cfg_.in_channels; ++c)
      px.v[i * cfg_.in_channels + c] = static_cast<T>(input.at(i, c));
  }

  const int S = cfg_.stages();
  const std::int64_t n0 = stages_[0].grid.length();

  Var x = tape.constant(std::move(px));
  x = tape.reshape(x, {n0, cfg_.patch_size * cfg_.in_channels});
  x = tape.linear(x, p(pvars, "embed.w"), p(pvars, "embed.b"));
  x = tape.layer_norm(x, p(pvars, "embed.norm.g"), p(pvars, "embed.norm.b"));

  std::vector<Var> skips(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    for (int d = 0; d < cfg_.depths[s]; ++d)
      x = block_forward(tape, x, s, "enc" + std::to_string(s) + ".blk" + std::to_string(d),
                        pvars, (d & 1) && stages_[s].shift > 0);
    skips[s] = x;
    if (s < S - 1) {
      const std::int64_t n = stages_[s].grid.length();
      x = tape.reshape(x, {n / 4, 4 * cfg_.dims[s]});
      x = tape.linear(x, p(pvars, "merge" + std::to_string(s) + ".w"),
                      p(pvars, "merge" + std::to_string(s) + ".b"));
      x = tape.layer_norm(x, p(pvars, "merge" + std::to_string(s) + ".norm.g"),
                          p(pvars, "merge" + std::to_string(s) + ".norm.b"));
    }
  }

  for (int s = S - 2; s >= 0; --s) {
    const std::string pre = "dec" + std::to_string(s);
    const std::int64_t n = stages_[s].grid.length();
    x = tape.linear(x, p(pvars, pre + ".expand.w"), p(pvars, pre + ".expand.b"));
    x = tape.reshape(x, {n, cfg_.dims[s]});
    x = tape.layer_norm(x, p(pvars, pre + ".expand.norm.g"), p(pvars, pre + ".expand.norm.b"));
    x = tape.concat_last(x, skips[s]);
    x = tape.linear(x, p(pvars, pre + ".fuse.w"), p(pvars, pre + ".fuse.b"));
    for (int d = 0; d < cfg_.depths[s]; ++d)
      x = block_forward(tape, x, s, pre + ".blk" + std::to_string(d), pvars,
                        (d & 1) && stages_[s].shift > 0);
  }

  x = tape.linear(x, p(pvars, "head.expand.w"), p(pvars, "head.expand.b"));
  x = tape.reshape(x, {npix, cfg_.dims[0]});
  x = tape.layer_norm(x, p(pvars, "head.norm.g"), p(pvars, "head.norm.b"));
  return tape.linear(x, p(pvars, "head.out.w"), p(pvars, "head.out.b"));
}

template <typename T>
HealpixMap HealSwin<T>::forward(const HealpixMap& input) const {
  ad::Tape<T> tape;
  tape.set_recording(false);
  const auto pvars = register_params(tape);
  const Var logits = build(tape, input, pvars);
  const auto& lv = tape.value(logits);
  HealpixMap out = HealpixMap::zeros(cfg_.nside, cfg_.num_faces, cfg_.out_channels);
  for (std::size_t i = 0; i < lv.size(); ++i) out.data[i] = static_cast<float>(lv[i]);
  out.validity = input.validity;
  return out;
}

template class HealSwin<float>;
template class HealSwin<double>;

}  // namespace healswin::model
