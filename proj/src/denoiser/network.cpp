// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "trafficdiff/simd/kernels.hpp"

namespace trafficdiff {

SizePreset size_preset_from_string(const std::string& name) {
  if (name == "S" || name == "s") return SizePreset::kS;
  if (name == "M" || name == "m") return SizePreset::kM;
  if (name == "L" || name == "l") return SizePreset::kL;
  throw std::invalid_argument("unknown size preset: " + name);
}

const char* to_string(SizePreset preset) {
  switch (preset) {
    case SizePreset::kS: return "S";
    case SizePreset::kM: return "M";
    case SizePreset::kL: return "L";
  }
  return "S";
}

namespace {

struct PresetDims {
  int dim, layers, heads;
};

PresetDims preset_dims(SizePreset p) {
  switch (p) {
    case SizePreset::kS: return {128, 2, 2};
    case SizePreset::kM: return {256, 4, 4};
    case SizePreset::kL: return {512, 8, 8};
  }
  return {128, 2, 2};
}

}  // namespace

int NetworkConfig::resolved_token_dim() const {
  if (token_dim > 0) return token_dim;
  const PresetDims p = preset_dims(preset);
  // Round to a multiple of 2*heads so heads split evenly and the positional
  // encoding has sin/cos pairs.
  const int unit = 2 * resolved_heads();
  const int scaled = static_cast<int>(std::lround(p.dim * width_factor));
  return std::max(unit, (scaled + unit - 1) / unit * unit);
}

int NetworkConfig::resolved_layers() const {
  return layers > 0 ? layers : preset_dims(preset).layers;
}

int NetworkConfig::resolved_heads() const {
  return heads > 0 ? heads : preset_dims(preset).heads;
}

void NetworkConfig::validate() const {
  if (agents < 1 || history < 0 || future < 1 || features < 1)
    throw std::invalid_argument("network config: invalid scene extents");
  if (patch != 1 && patch != 2 && patch != 4 && patch != 8)
    throw std::invalid_argument("network config: patch size must be one of 8, 4, 2, 1");
  if (steps() % patch != 0)
    throw std::invalid_argument("network config: steps must be divisible by the patch size");
  if (!(width_factor > 0.0)) throw std::invalid_argument("network config: width factor must be > 0");
  const int e = resolved_token_dim();
  if (e % resolved_heads() != 0 || e % 2 != 0)
    throw std::invalid_argument("network config: token dim must split evenly across heads");
  if (noise_freqs < 1 || road_tokens < 1)
    throw std::invalid_argument("network config: noise_freqs and road_tokens must be >= 1");
}

// ---------------------------------------------------------------------------
// Dense helpers. Matrices are row-major.

namespace {

struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
  double* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }
  double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

const simd::KernelTable& K() { return simd::active(); }

// Y = X W + b, W is [in x out].
Mat linear(const Mat& x, const double* w, const double* b, int out) {
  Mat y(x.rows, out);
  if (x.rows == 0) return y;
  K().gemm_nn(x.rows, out, x.cols, x.v.data(), w, y.v.data(), false);
  if (b)
    for (int r = 0; r < y.rows; ++r) {
      double* yr = y.row(r);
      for (int c = 0; c < out; ++c) yr[c] += b[c];
    }
  return y;
}

// Accumulates dW, db and (if dx) dX for Y = X W + b.
void linear_backward(const Mat& x, const Mat& dy, const double* w, double* dw, double* db,
                     Mat* dx) {
  if (x.rows == 0) return;
  K().gemm_tn(x.cols, dy.cols, x.rows, x.v.data(), dy.v.data(), dw, true);
  if (db)
    for (int r = 0; r < dy.rows; ++r) {
      const double* g = dy.row(r);
      for (int c = 0; c < dy.cols; ++c) db[c] += g[c];
    }
  if (dx) K().gemm_nt(dy.rows, x.cols, dy.cols, dy.v.data(), w, dx->v.data(), true);
}

void add_into(Mat& a, const Mat& b) {
  K().axpby(a.v.size(), 1.0, a.v.data(), 1.0, b.v.data(), a.v.data());
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }
double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}
double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

Mat map(const Mat& x, double (*f)(double)) {
  Mat y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = f(x.v[i]);
  return y;
}

// dX = dY * f'(X)
Mat map_backward(const Mat& x, const Mat& dy, double (*fprime)(double)) {
  Mat dx(x.rows, x.cols);
  for (std::size_t i = 0; i < x.v.size(); ++i) dx.v[i] = dy.v[i] * fprime(x.v[i]);
  return dx;
}

constexpr double kLnEps = 1e-5;

struct LnCache {
  Mat y;
  std::vector<double> rstd;
};

// Layer norm without affine parameters.
LnCache layer_norm(const Mat& x) {
  LnCache c{Mat(x.rows, x.cols), std::vector<double>(x.rows)};
  for (int r = 0; r < x.rows; ++r) {
    const double* xr = x.row(r);
    double mean = 0.0;
    for (int i = 0; i < x.cols; ++i) mean += xr[i];
    mean /= x.cols;
    double var = 0.0;
    for (int i = 0; i < x.cols; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= x.cols;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    c.rstd[r] = rstd;
    double* yr = c.y.row(r);
    for (int i = 0; i < x.cols; ++i) yr[i] = (xr[i] - mean) * rstd;
  }
  return c;
}

Mat layer_norm_backward(const LnCache& c, const Mat& dy) {
  Mat dx(dy.rows, dy.cols);
  const double n = dy.cols;
  for (int r = 0; r < dy.rows; ++r) {
    const double* g = dy.row(r);
    const double* y = c.y.row(r);
    double mg = 0.0, mgy = 0.0;
    for (int i = 0; i < dy.cols; ++i) {
      mg += g[i];
      mgy += g[i] * y[i];
    }
    mg /= n;
    mgy /= n;
    double* d = dx.row(r);
    for (int i = 0; i < dy.cols; ++i) d[i] = c.rstd[r] * (g[i] - mg - y[i] * mgy);
  }
  return dx;
}

struct Group {
  std::vector<int> q_rows;
  std::vector<int> k_rows;
};

struct AttnCache {
  Mat xq;  // query-side input
  Mat q, k, v, o;
  // probs[g * heads + h] is |q_rows| x |k_rows|
  std::vector<Mat> probs;
};

struct AttnParams {
  const double *wq, *wk, *wv, *wo, *bo;
};

struct AttnGrads {
  double *wq, *wk, *wv, *wo, *bo;
};

// Multi-head attention: Q from xq, K/V from xk. Keys with key_valid == 0
// are masked; a query row with no valid key outputs zero before the
// output projection.
Mat attention(const Mat& xq, const Mat& xk, const std::vector<Group>& groups,
              const std::vector<std::uint8_t>& key_valid, int heads, const AttnParams& p,
              AttnCache& c) {
  const int e = xq.cols;
  const int dh = e / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.xq = xq;
  c.q = linear(xq, p.wq, nullptr, e);
  c.k = linear(xk, p.wk, nullptr, e);
  c.v = linear(xk, p.wv, nullptr, e);
  c.o = Mat(xq.rows, e);
  c.probs.assign(groups.size() * heads, Mat());
  std::vector<double> scores;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& qr = groups[g].q_rows;
    const auto& kr = groups[g].k_rows;
    for (int h = 0; h < heads; ++h) {
      Mat& pr = c.probs[g * heads + h];
      pr = Mat(static_cast<int>(qr.size()), static_cast<int>(kr.size()));
      for (std::size_t i = 0; i < qr.size(); ++i) {
        const double* qi = c.q.row(qr[i]) + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        scores.assign(kr.size(), 0.0);
        for (std::size_t j = 0; j < kr.size(); ++j) {
          if (!key_valid[kr[j]]) continue;
          scores[j] = K().dot(dh, qi, c.k.row(kr[j]) + h * dh) * scale;
          mx = std::max(mx, scores[j]);
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;
        double total = 0.0;
        for (std::size_t j = 0; j < kr.size(); ++j) {
          const double w = key_valid[kr[j]] ? std::exp(scores[j] - mx) : 0.0;
          pr(static_cast<int>(i), static_cast<int>(j)) = w;
          total += w;
        }
        double* oi = c.o.row(qr[i]) + h * dh;
        for (std::size_t j = 0; j < kr.size(); ++j) {
          double& w = pr(static_cast<int>(i), static_cast<int>(j));
          w /= total;
          if (w == 0.0) continue;
          K().axpby(dh, 1.0, oi, w, c.v.row(kr[j]) + h * dh, oi);
        }
      }
    }
  }
  return linear(c.o, p.wo, p.bo, e);
}

// Returns dxq; accumulates dxk into *dxk (may alias the returned matrix's
// meaning when xq and xk are the same tensor; caller adds them).
Mat attention_backward(const AttnCache& c, const Mat& xk, const std::vector<Group>& groups,
                       int heads, const AttnParams& p, const AttnGrads& gr, const Mat& dy,
                       Mat& dxk) {
  const int e = c.q.cols;
  const int dh = e / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat d_o(c.o.rows, e);
  linear_backward(c.o, dy, p.wo, gr.wo, gr.bo, &d_o);
  Mat dq(c.q.rows, e), dk(c.k.rows, e), dv(c.v.rows, e);
  std::vector<double> dp;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& qr = groups[g].q_rows;
    const auto& kr = groups[g].k_rows;
    for (int h = 0; h < heads; ++h) {
      const Mat& pr = c.probs[g * heads + h];
      for (std::size_t i = 0; i < qr.size(); ++i) {
        const double* doi = d_o.row(qr[i]) + h * dh;
        dp.assign(kr.size(), 0.0);
        double sum = 0.0;
        for (std::size_t j = 0; j < kr.size(); ++j) {
          const double pij = pr(static_cast<int>(i), static_cast<int>(j));
          if (pij == 0.0) continue;
          dp[j] = K().dot(dh, doi, c.v.row(kr[j]) + h * dh);
          sum += pij * dp[j];
          double* dvj = dv.row(kr[j]) + h * dh;
          K().axpby(dh, 1.0, dvj, pij, doi, dvj);
        }
        double* dqi = dq.row(qr[i]) + h * dh;
        const double* qi = c.q.row(qr[i]) + h * dh;
        for (std::size_t j = 0; j < kr.size(); ++j) {
          const double pij = pr(static_cast<int>(i), static_cast<int>(j));
          if (pij == 0.0) continue;
          const double ds = pij * (dp[j] - sum) * scale;
          K().axpby(dh, 1.0, dqi, ds, c.k.row(kr[j]) + h * dh, dqi);
          double* dkj = dk.row(kr[j]) + h * dh;
          K().axpby(dh, 1.0, dkj, ds, qi, dkj);
        }
      }
    }
  }
  Mat dxq(c.xq.rows, c.xq.cols);
  linear_backward(c.xq, dq, p.wq, gr.wq, nullptr, &dxq);
  linear_backward(xk, dk, p.wk, gr.wk, nullptr, &dxk);
  linear_backward(xk, dv, p.wv, gr.wv, nullptr, &dxk);
  return dxq;
}

std::vector<double> sinusoid(double position, int dims, double max_period) {
  std::vector<double> out(dims);
  const int half = dims / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(max_period) * i / half);
    out[2 * i] = std::sin(position * freq);
    out[2 * i + 1] = std::cos(position * freq);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

struct BlockCache {
  LnCache ln;
  Mat modulated;
  Mat f;        // block output before gating
  AttnCache attn;
  Mat pre_act;  // MLP hidden before GELU
  Mat act;
};

struct LayerCache {
  std::vector<BlockCache> blocks;  // time, agent, mlp
};

struct ForwardCache {
  int agents = 0, steps = 0, patches = 0;
  Mat u;  // patch inputs
  // noise embedding
  Mat noise_in, noise_h1, noise_a1, noise_h2, cond;
  // road encoder
  bool has_road = false;
  Mat road_in, road_h1, road_a1, road_h2, road_tokens;
  std::vector<std::pair<int, int>> road_chunks;
  LnCache cross_ln;
  AttnCache cross;
  std::vector<Mat> mods;  // per layer, patches x 9E
  std::vector<LayerCache> layers;
  Mat final_mod;
  LnCache final_ln;
  Mat final_y;
  std::vector<std::uint8_t> token_valid;
  std::vector<Group> time_groups, agent_groups, cross_groups;
};

void ForwardCacheDeleter::operator()(ForwardCache* cache) const { delete cache; }
ForwardCachePtr make_forward_cache() { return ForwardCachePtr(new ForwardCache()); }

TransformerDenoiser::TransformerDenoiser(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  dim_ = config_.resolved_token_dim();
  layers_ = config_.resolved_layers();
  heads_ = config_.resolved_heads();
  const int e = dim_;
  const int in = config_.patch * (3 * config_.features + 1);
  add_param("in.w", {in, e});
  add_param("in.b", {e});
  add_param("noise.w1", {2 * config_.noise_freqs, e});
  add_param("noise.b1", {e});
  add_param("noise.w2", {e, e});
  add_param("noise.b2", {e});
  add_param("road.w1", {2, e});
  add_param("road.b1", {e});
  add_param("road.w2", {e, e});
  add_param("road.b2", {e});
  for (const char* n : {"cross.wq", "cross.wk", "cross.wv", "cross.wo"}) add_param(n, {e, e});
  add_param("cross.bo", {e});
  for (int l = 0; l < layers_; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add_param(p + "mod.w", {e, 9 * e});
    add_param(p + "mod.b", {9 * e});
    for (const char* blk : {"time.", "agent."}) {
      for (const char* n : {"wq", "wk", "wv", "wo"}) add_param(p + blk + n, {e, e});
      add_param(p + blk + "bo", {e});
    }
    add_param(p + "mlp.w1", {e, 4 * e});
    add_param(p + "mlp.b1", {4 * e});
    add_param(p + "mlp.w2", {4 * e, e});
    add_param(p + "mlp.b2", {e});
  }
  add_param("final.mod.w", {e, 2 * e});
  add_param("final.mod.b", {2 * e});
  add_param("out.w", {e, config_.patch * config_.features});
  add_param("out.b", {config_.patch * config_.features});
}

void TransformerDenoiser::add_param(const std::string& name, std::vector<int> shape) {
  std::size_t size = 1;
  for (int s : shape) size *= static_cast<std::size_t>(s);
  layout_.push_back({name, std::move(shape), params_.size(), size});
  params_.resize(params_.size() + size, 0.0);
}

const ParamTensor& TransformerDenoiser::param(const std::string& name) const {
  for (const auto& p : layout_)
    if (p.name == name) return p;
  throw std::invalid_argument("unknown parameter: " + name);
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void TransformerDenoiser::init(Rng& rng) {
  for (const auto& p : layout_) {
    double* w = params_.data() + p.offset;
    const bool zero = p.shape.size() == 1 || p.name.find("mod.") != std::string::npos ||
                      p.name.rfind("out.", 0) == 0;
    if (zero) {
      std::fill_n(w, p.size, 0.0);
      continue;
    }
    // Xavier-uniform on [fan_in x fan_out].
    const double limit = std::sqrt(6.0 / (p.shape[0] + p.shape[1]));
    for (std::size_t i = 0; i < p.size; ++i) w[i] = rng.uniform(-limit, limit);
  }
}

void TransformerDenoiser::init_dense(Rng& rng, double scale) {
  for (const auto& p : layout_) {
    double* w = params_.data() + p.offset;
    const double fan = p.shape.size() == 2 ? p.shape[0] : 1.0;
    const double s = ends_with(p.name, ".b") || ends_with(p.name, "bo") ||
                             ends_with(p.name, "b1") || ends_with(p.name, "b2")
                         ? scale
                         : scale / std::sqrt(fan) * 2.0;
    for (std::size_t i = 0; i < p.size; ++i) w[i] = rng.uniform(-s, s);
  }
}

SceneTensor TransformerDenoiser::forward(const SceneTensor& z, const NoiseVector& t,
                                         const ConditioningContext& ctx,
                                         ForwardCache* cache_out) const {
  const int A = z.agents();
  const int T = z.steps();
  const int D = z.features();
  const int P = config_.patch;
  if (A != config_.agents || z.history() != config_.history || z.future() != config_.future ||
      D != config_.features || T % P != 0)
    throw std::invalid_argument("network forward: scene shape incompatible with config");
  if (t.steps() != T) throw std::invalid_argument("network forward: noise vector length mismatch");
  const int N = T / P;
  const int R = A * N;
  const int e = dim_;
  auto W = [&](const std::string& n) { return params_.data() + param(n).offset; };

  ForwardCache local;
  ForwardCache& c = cache_out ? *cache_out : local;
  c = ForwardCache();
  c.agents = A;
  c.steps = T;
  c.patches = N;

  const bool has_validity = ctx.validity.agents() == A && ctx.validity.steps() == T;
  const bool has_mask = ctx.inpaint.mask.any();
  Mask mask;
  if (has_mask) {
    if (!(ctx.inpaint.context.shape() == z.shape()))
      throw std::invalid_argument("network forward: context shape mismatch");
    mask = ctx.inpaint.mask.expand(z.shape());
  }

  // Patch inputs [z, x̄ m̄, m̄, v̄] per step.
  const int per_step = 3 * D + 1;
  c.u = Mat(R, P * per_step);
  c.token_valid.assign(R, 0);
  for (int a = 0; a < A; ++a)
    for (int p = 0; p < N; ++p) {
      const int r = a * N + p;
      double* ur = c.u.row(r);
      for (int j = 0; j < P; ++j) {
        const int tau = p * P + j;
        double* blk = ur + j * per_step;
        const bool valid = has_validity ? ctx.validity(a, tau) : true;
        c.token_valid[r] |= valid ? 1 : 0;
        for (int d = 0; d < D; ++d) {
          blk[d] = z.at(a, tau, d);
          const bool m = has_mask && mask(a, tau, d);
          blk[D + d] = m ? ctx.inpaint.context.at(a, tau, d) : 0.0;
          blk[2 * D + d] = m ? 1.0 : 0.0;
        }
        blk[3 * D] = valid ? 1.0 : 0.0;
      }
    }

  Mat h = linear(c.u, W("in.w"), W("in.b"), e);
  for (int a = 0; a < A; ++a)
    for (int p = 0; p < N; ++p) {
      const auto pe = sinusoid(p, e, 10000.0);
      double* hr = h.row(a * N + p);
      for (int i = 0; i < e; ++i) hr[i] += pe[i];
    }

  // Per-patch noise conditioning.
  const int nf = config_.noise_freqs;
  c.noise_in = Mat(N, 2 * nf);
  for (int p = 0; p < N; ++p) {
    const auto s = sinusoid(1000.0 * t.mean_t(p * P, (p + 1) * P), 2 * nf, 1000.0);
    std::copy(s.begin(), s.end(), c.noise_in.row(p));
  }
  c.noise_h1 = linear(c.noise_in, W("noise.w1"), W("noise.b1"), e);
  c.noise_a1 = map(c.noise_h1, silu);
  c.noise_h2 = linear(c.noise_a1, W("noise.w2"), W("noise.b2"), e);
  c.cond = map(c.noise_h2, silu);

  // Road tokens and one cross-attention block.
  const int M = static_cast<int>(ctx.road_points.size());
  c.has_road = M > 0;
  if (c.has_road) {
    c.road_in = Mat(M, 2);
    for (int i = 0; i < M; ++i) {
      c.road_in(i, 0) = ctx.road_points[i].x;
      c.road_in(i, 1) = ctx.road_points[i].y;
    }
    c.road_h1 = linear(c.road_in, W("road.w1"), W("road.b1"), e);
    c.road_a1 = map(c.road_h1, silu);
    c.road_h2 = linear(c.road_a1, W("road.w2"), W("road.b2"), e);
    const int nc = std::min(config_.road_tokens, M);
    c.road_tokens = Mat(nc, e);
    for (int k = 0; k < nc; ++k) {
      const int b = static_cast<int>(static_cast<long>(k) * M / nc);
      const int en = static_cast<int>(static_cast<long>(k + 1) * M / nc);
      c.road_chunks.emplace_back(b, en);
      double* tk = c.road_tokens.row(k);
      for (int i = b; i < en; ++i)
        K().axpby(e, 1.0, tk, 1.0 / (en - b), c.road_h2.row(i), tk);
    }
    c.cross_ln = layer_norm(h);
    Group all;
    for (int r = 0; r < R; ++r) all.q_rows.push_back(r);
    for (int k = 0; k < nc; ++k) all.k_rows.push_back(k);
    c.cross_groups = {all};
    const std::vector<std::uint8_t> road_valid(nc, 1);
    const AttnParams ap{W("cross.wq"), W("cross.wk"), W("cross.wv"), W("cross.wo"), W("cross.bo")};
    add_into(h, attention(c.cross_ln.y, c.road_tokens, c.cross_groups, road_valid, heads_, ap,
                          c.cross));
  }

  for (int a = 0; a < A; ++a) {
    Group g;
    for (int p = 0; p < N; ++p) g.q_rows.push_back(a * N + p);
    g.k_rows = g.q_rows;
    c.time_groups.push_back(std::move(g));
  }
  for (int p = 0; p < N; ++p) {
    Group g;
    for (int a = 0; a < A; ++a) g.q_rows.push_back(a * N + p);
    g.k_rows = g.q_rows;
    c.agent_groups.push_back(std::move(g));
  }

  c.layers.resize(layers_);
  c.mods.resize(layers_);
  for (int l = 0; l < layers_; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    c.mods[l] = linear(c.cond, W(pre + "mod.w"), W(pre + "mod.b"), 9 * e);
    const Mat& mod = c.mods[l];
    LayerCache& lc = c.layers[l];
    lc.blocks.resize(3);
    for (int b = 0; b < 3; ++b) {
      BlockCache& bc = lc.blocks[b];
      bc.ln = layer_norm(h);
      bc.modulated = Mat(R, e);
      for (int r = 0; r < R; ++r) {
        const double* m = mod.row(r % N);
        const double* shift = m + (3 * b) * e;
        const double* scl = m + (3 * b + 1) * e;
        const double* y = bc.ln.y.row(r);
        double* o = bc.modulated.row(r);
        for (int i = 0; i < e; ++i) o[i] = y[i] * (1.0 + scl[i]) + shift[i];
      }
      if (b < 2) {
        const std::string blk = pre + (b == 0 ? "time." : "agent.");
        const AttnParams ap{W(blk + "wq"), W(blk + "wk"), W(blk + "wv"), W(blk + "wo"),
                            W(blk + "bo")};
        bc.f = attention(bc.modulated, bc.modulated, b == 0 ? c.time_groups : c.agent_groups,
                         c.token_valid, heads_, ap, bc.attn);
      } else {
        bc.pre_act = linear(bc.modulated, W(pre + "mlp.w1"), W(pre + "mlp.b1"), 4 * e);
        bc.act = map(bc.pre_act, gelu);
        bc.f = linear(bc.act, W(pre + "mlp.w2"), W(pre + "mlp.b2"), e);
      }
      for (int r = 0; r < R; ++r) {
        const double* gate = mod.row(r % N) + (3 * b + 2) * e;
        double* hr = h.row(r);
        const double* fr = bc.f.row(r);
        for (int i = 0; i < e; ++i) hr[i] += gate[i] * fr[i];
      }
    }
  }

  c.final_mod = linear(c.cond, W("final.mod.w"), W("final.mod.b"), 2 * e);
  c.final_ln = layer_norm(h);
  c.final_y = Mat(R, e);
  for (int r = 0; r < R; ++r) {
    const double* m = c.final_mod.row(r % N);
    const double* y = c.final_ln.y.row(r);
    double* o = c.final_y.row(r);
    for (int i = 0; i < e; ++i) o[i] = y[i] * (1.0 + m[e + i]) + m[i];
  }
  const Mat out = linear(c.final_y, W("out.w"), W("out.b"), P * D);
  SceneTensor v(z.shape());
  for (int a = 0; a < A; ++a)
    for (int p = 0; p < N; ++p)
      for (int j = 0; j < P; ++j)
        for (int d = 0; d < D; ++d) v.at(a, p * P + j, d) = out(a * N + p, j * D + d);
  return v;
}

void TransformerDenoiser::backward(const ForwardCache& c, const SceneTensor& grad_v,
                                   std::vector<double>& grad) const {
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
  const int A = c.agents, N = c.patches, P = config_.patch, D = config_.features;
  const int R = A * N;
  const int e = dim_;
  auto W = [&](const std::string& n) { return params_.data() + param(n).offset; };
  auto G = [&](const std::string& n) { return grad.data() + param(n).offset; };

  Mat d_out(R, P * D);
  for (int a = 0; a < A; ++a)
    for (int p = 0; p < N; ++p)
      for (int j = 0; j < P; ++j)
        for (int d = 0; d < D; ++d) d_out(a * N + p, j * D + d) = grad_v.at(a, p * P + j, d);

  Mat d_y(R, e);
  linear_backward(c.final_y, d_out, W("out.w"), G("out.w"), G("out.b"), &d_y);
  Mat d_cond(N, e);
  Mat d_fmod(N, 2 * e);
  Mat d_ln(R, e);
  for (int r = 0; r < R; ++r) {
    const double* m = c.final_mod.row(r % N);
    const double* y = c.final_ln.y.row(r);
    const double* g = d_y.row(r);
    double* dm = d_fmod.row(r % N);
    double* dl = d_ln.row(r);
    for (int i = 0; i < e; ++i) {
      dm[i] += g[i];
      dm[e + i] += g[i] * y[i];
      dl[i] = g[i] * (1.0 + m[e + i]);
    }
  }
  linear_backward(c.cond, d_fmod, W("final.mod.w"), G("final.mod.w"), G("final.mod.b"), &d_cond);
  Mat d_h = layer_norm_backward(c.final_ln, d_ln);

  for (int l = layers_ - 1; l >= 0; --l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    const Mat& mod = c.mods[l];
    Mat d_mod(N, 9 * e);
    const LayerCache& lc = c.layers[l];
    for (int b = 2; b >= 0; --b) {
      const BlockCache& bc = lc.blocks[b];
      // h_out = h_in + gate * f
      Mat d_f(R, e);
      for (int r = 0; r < R; ++r) {
        const double* gate = mod.row(r % N) + (3 * b + 2) * e;
        double* dg = d_mod.row(r % N) + (3 * b + 2) * e;
        const double* fr = bc.f.row(r);
        const double* dh = d_h.row(r);
        double* df = d_f.row(r);
        for (int i = 0; i < e; ++i) {
          dg[i] += dh[i] * fr[i];
          df[i] = dh[i] * gate[i];
        }
      }
      Mat d_modulated(R, e);
      if (b < 2) {
        const std::string blk = pre + (b == 0 ? "time." : "agent.");
        const AttnParams ap{W(blk + "wq"), W(blk + "wk"), W(blk + "wv"), W(blk + "wo"),
                            W(blk + "bo")};
        const AttnGrads ag{G(blk + "wq"), G(blk + "wk"), G(blk + "wv"), G(blk + "wo"),
                           G(blk + "bo")};
        Mat d_kv(R, e);
        d_modulated = attention_backward(bc.attn, bc.modulated,
                                         b == 0 ? c.time_groups : c.agent_groups, heads_, ap, ag,
                                         d_f, d_kv);
        add_into(d_modulated, d_kv);
      } else {
        Mat d_act(R, 4 * e);
        linear_backward(bc.act, d_f, W(pre + "mlp.w2"), G(pre + "mlp.w2"), G(pre + "mlp.b2"),
                        &d_act);
        const Mat d_pre = map_backward(bc.pre_act, d_act, gelu_grad);
        linear_backward(bc.modulated, d_pre, W(pre + "mlp.w1"), G(pre + "mlp.w1"),
                        G(pre + "mlp.b1"), &d_modulated);
      }
      Mat d_lnb(R, e);
      for (int r = 0; r < R; ++r) {
        const double* m = mod.row(r % N);
        const double* scl = m + (3 * b + 1) * e;
        double* dsh = d_mod.row(r % N) + (3 * b) * e;
        double* dsc = d_mod.row(r % N) + (3 * b + 1) * e;
        const double* y = bc.ln.y.row(r);
        const double* g = d_modulated.row(r);
        double* dl = d_lnb.row(r);
        for (int i = 0; i < e; ++i) {
          dsh[i] += g[i];
          dsc[i] += g[i] * y[i];
          dl[i] = g[i] * (1.0 + scl[i]);
        }
      }
      add_into(d_h, layer_norm_backward(bc.ln, d_lnb));
    }
    linear_backward(c.cond, d_mod, W(pre + "mod.w"), G(pre + "mod.w"), G(pre + "mod.b"), &d_cond);
  }

  if (c.has_road) {
    const AttnParams ap{W("cross.wq"), W("cross.wk"), W("cross.wv"), W("cross.wo"), W("cross.bo")};
    const AttnGrads ag{G("cross.wq"), G("cross.wk"), G("cross.wv"), G("cross.wo"), G("cross.bo")};
    Mat d_tokens(c.road_tokens.rows, e);
    const Mat d_lnx =
        attention_backward(c.cross, c.road_tokens, c.cross_groups, heads_, ap, ag, d_h, d_tokens);
    add_into(d_h, layer_norm_backward(c.cross_ln, d_lnx));
    Mat d_h2(c.road_h2.rows, e);
    for (std::size_t k = 0; k < c.road_chunks.size(); ++k) {
      const auto [b, en] = c.road_chunks[k];
      for (int i = b; i < en; ++i)
        K().axpby(e, 1.0, d_h2.row(i), 1.0 / (en - b), d_tokens.row(static_cast<int>(k)),
                  d_h2.row(i));
    }
    Mat d_a1(c.road_a1.rows, e);
    linear_backward(c.road_a1, d_h2, W("road.w2"), G("road.w2"), G("road.b2"), &d_a1);
    const Mat d_h1 = map_backward(c.road_h1, d_a1, silu_grad);
    linear_backward(c.road_in, d_h1, W("road.w1"), G("road.w1"), G("road.b1"), nullptr);
  }

  // Noise embedding.
  const Mat d_n2 = map_backward(c.noise_h2, d_cond, silu_grad);
  Mat d_na1(N, e);
  linear_backward(c.noise_a1, d_n2, W("noise.w2"), G("noise.w2"), G("noise.b2"), &d_na1);
  const Mat d_n1 = map_backward(c.noise_h1, d_na1, silu_grad);
  linear_backward(c.noise_in, d_n1, W("noise.w1"), G("noise.w1"), G("noise.b1"), nullptr);

  linear_backward(c.u, d_h, W("in.w"), G("in.w"), G("in.b"), nullptr);
}

SceneTensor TransformerDenoiser::compute_v(const SceneTensor& z, const NoiseVector& t,
                                           const ConditioningContext& ctx) const {
  return forward(z, t, ctx, nullptr);
}

double masked_v_loss(const SceneTensor& v_hat, const SceneTensor& v_target,
                     const ValidityMask& validity, SceneTensor* grad_v) {
  if (!(v_hat.shape() == v_target.shape())) throw std::invalid_argument("loss: shape mismatch");
  const bool has_validity =
      validity.agents() == v_hat.agents() && validity.steps() == v_hat.steps();
  std::size_t count = 0;
  for (int a = 0; a < v_hat.agents(); ++a)
    for (int t = 0; t < v_hat.steps(); ++t)
      if (!has_validity || validity(a, t)) count += v_hat.features();
  if (grad_v) *grad_v = SceneTensor(v_hat.shape());
  if (count == 0) return 0.0;
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  for (int a = 0; a < v_hat.agents(); ++a)
    for (int t = 0; t < v_hat.steps(); ++t) {
      if (has_validity && !validity(a, t)) continue;
      for (int d = 0; d < v_hat.features(); ++d) {
        const double r = v_hat.at(a, t, d) - v_target.at(a, t, d);
        loss += r * r * inv;
        if (grad_v) grad_v->at(a, t, d) = 2.0 * r * inv;
      }
    }
  return loss;
}

ConditioningContext make_training_context(const TrainingExample& example, const Mask& mask) {
  ConditioningContext ctx;
  ctx.inpaint.mask = mask;
  ctx.inpaint.context = example.scene;
  ctx.validity = example.validity;
  ctx.road_points = example.road_points;
  return ctx;
}

TrainingDraw draw_training_task(const TrainingExample& example, const TrainConfig& config,
                                Rng& rng) {
  const SceneShape& shape = example.scene.shape();
  TrainingDraw draw;
  draw.monotone = rng.bernoulli(config.monotone_prob);
  draw.t = draw.monotone ? monotone_schedule(shape.history, shape.future)
                         : NoiseVector::constant(shape.steps(), rng.uniform());
  draw.behavior_prediction = rng.bernoulli(config.bp_prob);
  const auto rows = example.validity.agent_rows();
  Mask base = draw.behavior_prediction ? make_bp_mask(shape.history, shape.steps())
                                       : sample_scenegen_mask(rows, rng);
  if (rng.bernoulli(config.control_prob)) {
    std::vector<double> probs = config.control_feature_probs;
    if (probs.empty()) probs.assign(shape.features, 0.5);
    const Mask control = sample_control_mask(rows, shape.steps(), probs, rng);
    draw.mask = mask_and(base, control, shape);
  } else {
    draw.mask = std::move(base);
  }
  return draw;
}

Trainer::Trainer(TransformerDenoiser& model, TrainConfig config)
    : model_(model), config_(std::move(config)) {
  if (config_.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
}

TrainStepResult Trainer::step(const std::vector<const TrainingExample*>& batch, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  TrainStepResult result;
  std::vector<double> grad(model_.param_count(), 0.0);
  std::vector<double> sample_grad;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const TrainingExample* ex : batch) {
    const TrainingDraw draw = draw_training_task(*ex, config_, rng);
    result.monotone_count += draw.monotone ? 1 : 0;
    const ConditioningContext ctx = make_training_context(*ex, draw.mask);
    const SceneTensor eps = sample_normal(ex->scene.shape(), rng);
    const SceneTensor z = forward_noise(ex->scene, draw.t, eps);
    const SceneTensor target = v_from_x_eps(ex->scene, eps, draw.t);
    auto cache = make_forward_cache();
    const SceneTensor v_hat = model_.forward(z, draw.t, ctx, cache.get());
    SceneTensor grad_v;
    result.loss += masked_v_loss(v_hat, target, ex->validity, &grad_v) * inv_b;
    for (double& g : grad_v.values()) g *= inv_b;
    model_.backward(*cache, grad_v, grad);
  }
  double norm2 = 0.0;
  for (double g : grad) norm2 += g * g;
  result.grad_norm = std::sqrt(norm2);
  if (!std::isfinite(result.loss) || !std::isfinite(result.grad_norm)) return result;
  const double clip =
      result.grad_norm > config_.grad_clip ? config_.grad_clip / result.grad_norm : 1.0;
  auto& params = model_.params();
  ++steps_;
  if (config_.optimizer == OptimizerKind::kSgdMomentum) {
    if (velocity_.size() != params.size()) velocity_.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity_[i] = config_.momentum * velocity_[i] + clip * grad[i];
      params[i] -= config_.learning_rate * velocity_[i];
    }
  } else {
    if (velocity_.size() != params.size()) velocity_.assign(params.size(), 0.0);
    if (second_moment_.size() != params.size()) second_moment_.assign(params.size(), 0.0);
    const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = clip * grad[i];
      velocity_[i] = b1 * velocity_[i] + (1.0 - b1) * g;
      second_moment_[i] = b2 * second_moment_[i] + (1.0 - b2) * g * g;
      params[i] -= config_.learning_rate * (velocity_[i] / c1) /
                   (std::sqrt(second_moment_[i] / c2) + config_.adam_eps);
    }
  }
  result.applied = true;
  return result;
}

}  // namespace trafficdiff
