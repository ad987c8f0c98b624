#include "grokkit/model.hpp"

#include <cmath>
#include <sstream>

#include "grokkit/rng.hpp"

namespace grokkit::model {

namespace {
constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (n_layers < 1 || hidden_dim < 1 || n_heads < 1 || max_seq_len < 1 || vocab_size < 1)
    throw ConfigError("model config: all dimensions must be positive");
  if (hidden_dim % n_heads != 0)
    throw ConfigError("model config: hidden_dim must be divisible by n_heads");
  if (!share_map.empty()) {
    if (static_cast<int>(share_map.size()) != n_layers)
      throw ConfigError("model config: share_map must name every layer");
    for (int l = 0; l < n_layers; ++l) {
      const int s = share_map[l];
      if (s < 0 || s > l || share_map[s] != s)
        throw ConfigError("model config: share_map entries must point at earlier storage layers");
    }
  }
}

std::vector<int> ModelConfig::half_sharing(int n_layers) {
  std::vector<int> m(n_layers);
  const int mid = n_layers / 2;
  for (int l = 0; l < n_layers; ++l) m[l] = l < mid ? 0 : mid;
  return m;
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "n_layers=" << n_layers << ";hidden_dim=" << hidden_dim << ";n_heads=" << n_heads
     << ";max_seq_len=" << max_seq_len << ";vocab_size=" << vocab_size << ";share_map=";
  for (std::size_t i = 0; i < share_map.size(); ++i) {
    if (i) os << ',';
    os << share_map[i];
  }
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("model config record: malformed field " + item);
    const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
    if (key == "n_layers")
      cfg.n_layers = std::stoi(val);
    else if (key == "hidden_dim")
      cfg.hidden_dim = std::stoi(val);
    else if (key == "n_heads")
      cfg.n_heads = std::stoi(val);
    else if (key == "max_seq_len")
      cfg.max_seq_len = std::stoi(val);
    else if (key == "vocab_size")
      cfg.vocab_size = std::stoi(val);
    else if (key == "share_map") {
      cfg.share_map.clear();
      std::istringstream vs(val);
      std::string tok;
      while (std::getline(vs, tok, ','))
        if (!tok.empty()) cfg.share_map.push_back(std::stoi(tok));
    } else
      throw ConfigError("model config record: unknown field " + key);
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

template <class S>
std::vector<NamedTensor<S>> Weights<S>::named_tensors() {
  std::vector<NamedTensor<S>> out;
  out.push_back({"tok_emb", &tok_emb, nullptr, false});
  out.push_back({"pos_emb", &pos_emb, nullptr, false});
  for (int l = 0; l < cfg.n_layers; ++l) {
    if (!cfg.is_storage(l)) continue;
    BlockParams<S>& b = *blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    out.push_back({p + "ln1_g", nullptr, &b.ln1_g, false});
    out.push_back({p + "ln1_b", nullptr, &b.ln1_b, false});
    out.push_back({p + "w_qkv", &b.w_qkv, nullptr, true});
    out.push_back({p + "b_qkv", nullptr, &b.b_qkv, false});
    out.push_back({p + "w_attn_out", &b.w_attn_out, nullptr, true});
    out.push_back({p + "b_attn_out", nullptr, &b.b_attn_out, false});
    out.push_back({p + "ln2_g", nullptr, &b.ln2_g, false});
    out.push_back({p + "ln2_b", nullptr, &b.ln2_b, false});
    out.push_back({p + "w_mlp_in", &b.w_mlp_in, nullptr, true});
    out.push_back({p + "b_mlp_in", nullptr, &b.b_mlp_in, false});
    out.push_back({p + "w_mlp_out", &b.w_mlp_out, nullptr, true});
    out.push_back({p + "b_mlp_out", nullptr, &b.b_mlp_out, false});
  }
  out.push_back({"lnf_g", nullptr, &lnf_g, false});
  out.push_back({"lnf_b", nullptr, &lnf_b, false});
  return out;
}

template <class S>
std::int64_t Weights<S>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& t : const_cast<Weights<S>*>(this)->named_tensors()) n += t.size();
  return n;
}

template <class S>
static void allocate(Weights<S>& w) {
  const ModelConfig& cfg = w.cfg;
  const int d = cfg.hidden_dim;
  w.tok_emb.resize(cfg.vocab_size, d);
  w.pos_emb.resize(cfg.max_seq_len, d);
  w.lnf_g.resize(d);
  w.lnf_b.resize(d);
  w.blocks.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    if (!cfg.is_storage(l)) continue;
    auto b = std::make_shared<BlockParams<S>>();
    b->ln1_g.resize(d);
    b->ln1_b.resize(d);
    b->w_qkv.resize(d, 3 * d);
    b->b_qkv.resize(3 * d);
    b->w_attn_out.resize(d, d);
    b->b_attn_out.resize(d);
    b->ln2_g.resize(d);
    b->ln2_b.resize(d);
    b->w_mlp_in.resize(d, 4 * d);
    b->b_mlp_in.resize(4 * d);
    b->w_mlp_out.resize(4 * d, d);
    b->b_mlp_out.resize(d);
    w.blocks[l] = std::move(b);
  }
  for (int l = 0; l < cfg.n_layers; ++l)
    if (!cfg.is_storage(l)) w.blocks[l] = w.blocks[cfg.storage_layer(l)];
}

template <class S>
void set_zero(Weights<S>& w) {
  for (auto& t : w.named_tensors()) {
    if (t.mat) t.mat->setZero();
    if (t.vec) t.vec->setZero();
  }
}

template <class S>
Weights<S> make_zero_like(const Weights<S>& w) {
  Weights<S> g;
  g.cfg = w.cfg;
  allocate(g);
  set_zero(g);
  return g;
}

template <class S>
Weights<S> init_model(const ModelConfig& cfg, Seed seed) {
  cfg.validate();
  Weights<S> w;
  w.cfg = cfg;
  allocate(w);
  Rng rng(Rng::mix(seed, 0x6d6f646c));

  const double base_std = 0.02;
  const double resid_std = base_std / std::sqrt(2.0 * cfg.n_layers);
  auto fill_normal = [&](Mat<S>& m, double std_dev) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = static_cast<S>(rng.normal() * std_dev);
  };

  fill_normal(w.tok_emb, base_std);
  fill_normal(w.pos_emb, base_std);
  for (int l = 0; l < cfg.n_layers; ++l) {
    if (!cfg.is_storage(l)) continue;
    BlockParams<S>& b = *w.blocks[l];
    b.ln1_g.setOnes();
    b.ln1_b.setZero();
    fill_normal(b.w_qkv, base_std);
    b.b_qkv.setZero();
    fill_normal(b.w_attn_out, resid_std);
    b.b_attn_out.setZero();
    b.ln2_g.setOnes();
    b.ln2_b.setZero();
    fill_normal(b.w_mlp_in, base_std);
    b.b_mlp_in.setZero();
    fill_normal(b.w_mlp_out, resid_std);
    b.b_mlp_out.setZero();
  }
  w.lnf_g.setOnes();
  w.lnf_b.setZero();
  return w;
}

template <class T, class F>
Weights<T> cast_weights(const Weights<F>& w) {
  Weights<T> out;
  out.cfg = w.cfg;
  allocate(out);
  auto src = const_cast<Weights<F>&>(w).named_tensors();
  auto dst = out.named_tensors();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].mat) *dst[i].mat = src[i].mat->template cast<T>();
    if (src[i].vec) *dst[i].vec = src[i].vec->template cast<T>();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward machinery
// ---------------------------------------------------------------------------

namespace {

template <class S>
using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;

template <class S>
struct LnCache {
  Mat<S> xhat;   // normalized input
  Arr<S> rstd;   // per-row 1/std
};

/// y = g * xhat + b; xhat = (x - mean) * rstd.
template <class S>
void layernorm_fwd(const Mat<S>& x, const Vec<S>& g, const Vec<S>& b, Mat<S>& y, LnCache<S>& c) {
  const Arr<S> mu = x.array().rowwise().mean();
  c.xhat = x;
  c.xhat.array().colwise() -= mu;
  c.rstd = (c.xhat.array().square().rowwise().mean() + static_cast<S>(kLnEps)).rsqrt();
  c.xhat.array().colwise() *= c.rstd;
  y = c.xhat;
  y.array().rowwise() *= g.array();
  y.array().rowwise() += b.array();
}

/// Backward through layernorm; accumulates into dg/db, writes dx (adds when
/// accumulate is set).
template <class S>
void layernorm_bwd(const Mat<S>& dy, const LnCache<S>& c, const Vec<S>& g, Mat<S>& dx,
                   Vec<S>& dg, Vec<S>& db, bool accumulate) {
  dg.array() += (dy.array() * c.xhat.array()).colwise().sum();
  db.array() += dy.array().colwise().sum();
  Mat<S> dxhat = dy;
  dxhat.array().rowwise() *= g.array();
  const Arr<S> m1 = dxhat.array().rowwise().mean();
  const Arr<S> m2 = (dxhat.array() * c.xhat.array()).rowwise().mean();
  Mat<S> t = dxhat;
  t.array().colwise() -= m1;
  t.array() -= c.xhat.array().colwise() * m2;
  t.array().colwise() *= c.rstd;
  if (accumulate)
    dx += t;
  else
    dx = std::move(t);
}

template <class S>
void gelu_fwd(const Mat<S>& x, Mat<S>& y) {
  const auto xa = x.array();
  y = (S(0.5) * xa * (S(1) + ((S(kGeluC) * (xa + S(kGeluA) * xa.cube())).tanh()))).matrix();
}

template <class S>
void gelu_bwd(const Mat<S>& x, const Mat<S>& dy, Mat<S>& dx) {
  const auto xa = x.array();
  const auto u = (S(kGeluC) * (xa + S(kGeluA) * xa.cube())).tanh();
  dx = (dy.array() * (S(0.5) * (S(1) + u) +
                      S(0.5) * xa * (S(1) - u.square()) * S(kGeluC) *
                          (S(1) + S(3) * S(kGeluA) * xa.square())))
           .matrix();
}

/// Causal multi-head attention over qkv rows of one batch.
/// probs: [batch * heads, T * T] row-major per (example, head).
template <class S>
void attention_fwd(const Mat<S>& qkv, int batch, int T, int n_heads, int head_dim, Mat<S>& ctx,
                   Mat<S>& probs) {
  const int d = n_heads * head_dim;
  const S scale = S(1) / std::sqrt(static_cast<S>(head_dim));
  ctx.resize(qkv.rows(), d);
  probs.resize(static_cast<Eigen::Index>(batch) * n_heads, static_cast<Eigen::Index>(T) * T);
  probs.setZero();
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * T;
    for (int h = 0; h < n_heads; ++h) {
      const int qo = h * head_dim, ko = d + h * head_dim, vo = 2 * d + h * head_dim;
      S* prow = probs.row(static_cast<Eigen::Index>(b) * n_heads + h).data();
      for (int i = 0; i < T; ++i) {
        S scores[64];
        S mx = std::numeric_limits<S>::lowest();
        for (int j = 0; j <= i; ++j) {
          S s = qkv.row(r0 + i).segment(qo, head_dim).dot(qkv.row(r0 + j).segment(ko, head_dim)) *
                scale;
          scores[j] = s;
          mx = std::max(mx, s);
        }
        S denom = 0;
        for (int j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          denom += scores[j];
        }
        auto out = ctx.row(r0 + i).segment(qo, head_dim);
        out.setZero();
        for (int j = 0; j <= i; ++j) {
          const S p = scores[j] / denom;
          prow[i * T + j] = p;
          out += p * qkv.row(r0 + j).segment(vo, head_dim);
        }
      }
    }
  }
}

template <class S>
void attention_bwd(const Mat<S>& qkv, const Mat<S>& probs, const Mat<S>& dctx, int batch, int T,
                   int n_heads, int head_dim, Mat<S>& dqkv) {
  const int d = n_heads * head_dim;
  const S scale = S(1) / std::sqrt(static_cast<S>(head_dim));
  dqkv.resize(qkv.rows(), 3 * d);
  dqkv.setZero();
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * T;
    for (int h = 0; h < n_heads; ++h) {
      const int qo = h * head_dim, ko = d + h * head_dim, vo = 2 * d + h * head_dim;
      const S* prow = probs.row(static_cast<Eigen::Index>(b) * n_heads + h).data();
      for (int i = 0; i < T; ++i) {
        const auto dout = dctx.row(r0 + i).segment(qo, head_dim);
        // dv and dp
        S dp[64];
        for (int j = 0; j <= i; ++j) {
          dqkv.row(r0 + j).segment(vo, head_dim) += prow[i * T + j] * dout;
          dp[j] = dout.dot(qkv.row(r0 + j).segment(vo, head_dim));
        }
        // softmax backward
        S inner = 0;
        for (int j = 0; j <= i; ++j) inner += prow[i * T + j] * dp[j];
        for (int j = 0; j <= i; ++j) {
          const S ds = prow[i * T + j] * (dp[j] - inner) * scale;
          dqkv.row(r0 + i).segment(qo, head_dim) += ds * qkv.row(r0 + j).segment(ko, head_dim);
          dqkv.row(r0 + j).segment(ko, head_dim) += ds * qkv.row(r0 + i).segment(qo, head_dim);
        }
      }
    }
  }
}

template <class S>
void add_bias(Mat<S>& m, const Vec<S>& b) {
  m.array().rowwise() += b.array();
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward (analysis path: capture + patches)
// ---------------------------------------------------------------------------

template <class S>
ForwardResult<S> forward(const Weights<S>& w, const TokenBatch& batch,
                         const ForwardOptions<S>& opts) {
  const ModelConfig& cfg = w.cfg;
  const int T = batch.seq_len, B = batch.batch, d = cfg.hidden_dim;
  if (T > cfg.max_seq_len) throw DataError("forward: sequence longer than max_seq_len");
  const Eigen::Index N = static_cast<Eigen::Index>(B) * T;

  ForwardResult<S> res;
  res.cache.batch = B;
  res.cache.seq_len = T;
  auto& resid = res.cache.resid;
  resid.resize(1);
  resid[0].resize(N, d);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      const std::int32_t tok = batch.token_at(b, t);
      if (tok < 0 || tok >= cfg.vocab_size) throw DataError("forward: token id out of range");
      resid[0].row(static_cast<Eigen::Index>(b) * T + t) = w.tok_emb.row(tok) + w.pos_emb.row(t);
    }

  auto apply_patches = [&](int layer, Mat<S>& x) {
    if (!opts.patches) return;
    for (const Patch<S>& p : *opts.patches) {
      if (p.layer != layer) continue;
      if (p.position < 0 || p.position >= T || p.replacement.rows() != B ||
          p.replacement.cols() != d)
        throw DataError("forward: patch site or replacement shape out of range");
      for (int b = 0; b < B; ++b)
        x.row(static_cast<Eigen::Index>(b) * T + p.position) = p.replacement.row(b);
    }
  };
  apply_patches(0, resid[0]);

  const int last_layer = opts.stop_layer >= 0 ? std::min(opts.stop_layer, cfg.n_layers)
                                              : cfg.n_layers;
  Mat<S> a, qkv, ctx, probs, att, bmat, hpre, gout;
  LnCache<S> ln1, ln2;
  for (int l = 0; l < last_layer; ++l) {
    const BlockParams<S>& blk = *w.blocks[l];
    const Mat<S>& x0 = resid[l];
    layernorm_fwd(x0, blk.ln1_g, blk.ln1_b, a, ln1);
    qkv.noalias() = a * blk.w_qkv;
    add_bias(qkv, blk.b_qkv);
    attention_fwd(qkv, B, T, cfg.n_heads, cfg.head_dim(), ctx, probs);
    att.noalias() = ctx * blk.w_attn_out;
    add_bias(att, blk.b_attn_out);
    Mat<S> x1 = x0 + att;
    layernorm_fwd(x1, blk.ln2_g, blk.ln2_b, bmat, ln2);
    hpre.noalias() = bmat * blk.w_mlp_in;
    add_bias(hpre, blk.b_mlp_in);
    gelu_fwd(hpre, gout);
    Mat<S> x2 = x1;
    x2.noalias() += gout * blk.w_mlp_out;
    add_bias(x2, blk.b_mlp_out);
    resid.push_back(std::move(x2));
    apply_patches(l + 1, resid.back());
  }

  if (opts.stop_layer < 0 && !batch.target_positions.empty()) {
    const int P = static_cast<int>(batch.target_positions.size());
    Mat<S> rows(static_cast<Eigen::Index>(B) * P, d);
    for (int b = 0; b < B; ++b)
      for (int p = 0; p < P; ++p)
        rows.row(static_cast<Eigen::Index>(b) * P + p) =
            resid[cfg.n_layers].row(static_cast<Eigen::Index>(b) * T + batch.target_positions[p]);
    LnCache<S> lnf;
    Mat<S> normed;
    layernorm_fwd(rows, w.lnf_g, w.lnf_b, normed, lnf);
    res.logits.noalias() = normed * w.tok_emb.transpose();
  }
  if (!opts.capture && opts.stop_layer < 0) res.cache.resid.clear();
  return res;
}

template <class S>
Vec<S> lens_logits(const Weights<S>& w, const S* state) {
  Mat<S> row = Eigen::Map<const Vec<S>>(state, w.cfg.hidden_dim);
  LnCache<S> c;
  Mat<S> normed;
  layernorm_fwd(row, w.lnf_g, w.lnf_b, normed, c);
  Vec<S> out;
  out.noalias() = normed * w.tok_emb.transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Loss and gradients (training path)
// ---------------------------------------------------------------------------

template <class S>
S loss_and_grads(const Weights<S>& w, const TokenBatch& batch, Weights<S>& grads) {
  const ModelConfig& cfg = w.cfg;
  const int T = batch.seq_len, B = batch.batch, d = cfg.hidden_dim;
  if (B < 1) throw DataError("loss_and_grads: empty batch");
  if (T > cfg.max_seq_len) throw DataError("loss_and_grads: sequence longer than max_seq_len");
  const Eigen::Index N = static_cast<Eigen::Index>(B) * T;
  const int P = static_cast<int>(batch.target_positions.size());
  if (P < 1) throw DataError("loss_and_grads: batch has no scored positions");

  set_zero(grads);

  // ---- forward, saving per-layer intermediates ----
  struct LayerSave {
    LnCache<S> ln1, ln2;
    Mat<S> qkv, probs, ctx, x1, hpre, gout;
  };
  std::vector<LayerSave> sv(cfg.n_layers);
  std::vector<Mat<S>> resid(cfg.n_layers + 1);

  resid[0].resize(N, d);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      const std::int32_t tok = batch.token_at(b, t);
      if (tok < 0 || tok >= cfg.vocab_size) throw DataError("loss_and_grads: token out of range");
      resid[0].row(static_cast<Eigen::Index>(b) * T + t) = w.tok_emb.row(tok) + w.pos_emb.row(t);
    }

  Mat<S> a, att, bmat;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const BlockParams<S>& blk = *w.blocks[l];
    LayerSave& s = sv[l];
    layernorm_fwd(resid[l], blk.ln1_g, blk.ln1_b, a, s.ln1);
    s.qkv.noalias() = a * blk.w_qkv;
    add_bias(s.qkv, blk.b_qkv);
    attention_fwd(s.qkv, B, T, cfg.n_heads, cfg.head_dim(), s.ctx, s.probs);
    att.noalias() = s.ctx * blk.w_attn_out;
    add_bias(att, blk.b_attn_out);
    s.x1 = resid[l] + att;
    layernorm_fwd(s.x1, blk.ln2_g, blk.ln2_b, bmat, s.ln2);
    s.hpre.noalias() = bmat * blk.w_mlp_in;
    add_bias(s.hpre, blk.b_mlp_in);
    gelu_fwd(s.hpre, s.gout);
    resid[l + 1] = s.x1;
    resid[l + 1].noalias() += s.gout * blk.w_mlp_out;
    add_bias(resid[l + 1], blk.b_mlp_out);
  }

  // ---- head: final norm + tied unembedding at scored rows ----
  const Eigen::Index M = static_cast<Eigen::Index>(B) * P;
  Mat<S> rows(M, d);
  for (int b = 0; b < B; ++b)
    for (int p = 0; p < P; ++p)
      rows.row(static_cast<Eigen::Index>(b) * P + p) =
          resid[cfg.n_layers].row(static_cast<Eigen::Index>(b) * T + batch.target_positions[p]);
  LnCache<S> lnf;
  Mat<S> normed;
  layernorm_fwd(rows, w.lnf_g, w.lnf_b, normed, lnf);
  Mat<S> logits;
  logits.noalias() = normed * w.tok_emb.transpose();

  // Cross entropy (mean over scored rows); dlogits reuses the logits buffer.
  S loss = 0;
  for (Eigen::Index m = 0; m < M; ++m) {
    auto row = logits.row(m);
    const S mx = row.maxCoeff();
    const S lse = mx + std::log((row.array() - mx).exp().sum());
    const std::int32_t gold = batch.target_tokens[m];
    if (gold < 0 || gold >= cfg.vocab_size) throw DataError("loss_and_grads: target out of range");
    const S row_loss = lse - row[gold];
    if (!std::isfinite(static_cast<double>(row_loss)))
      throw NumericError("loss_and_grads: non-finite loss at batch example " +
                         std::to_string(m / P));
    loss += row_loss;
    row = ((row.array() - lse).exp() / static_cast<S>(M)).matrix();
    row[gold] -= S(1) / static_cast<S>(M);
  }
  loss /= static_cast<S>(M);

  // ---- backward ----
  Mat<S>& dlogits = logits;
  grads.tok_emb.noalias() += dlogits.transpose() * normed;
  Mat<S> dnormed;
  dnormed.noalias() = dlogits * w.tok_emb;
  Mat<S> drows;
  layernorm_bwd(dnormed, lnf, w.lnf_g, drows, grads.lnf_g, grads.lnf_b, false);

  Mat<S> dx = Mat<S>::Zero(N, d);
  for (int b = 0; b < B; ++b)
    for (int p = 0; p < P; ++p)
      dx.row(static_cast<Eigen::Index>(b) * T + batch.target_positions[p]) +=
          drows.row(static_cast<Eigen::Index>(b) * P + p);

  Mat<S> dgout, dhpre, dbmat, dx1, dctx, dqkv, dlnout, da;
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const BlockParams<S>& blk = *w.blocks[l];
    BlockParams<S>& g = *grads.blocks[l];
    LayerSave& s = sv[l];

    // MLP branch: x2 = x1 + gelu(ln2(x1) W_in + b) W_out + b
    dgout.noalias() = dx * blk.w_mlp_out.transpose();
    // ln2 output is recomputed from its cache rather than stored.
    bmat = s.ln2.xhat;
    bmat.array().rowwise() *= blk.ln2_g.array();
    bmat.array().rowwise() += blk.ln2_b.array();
    g.w_mlp_out.noalias() += s.gout.transpose() * dx;
    g.b_mlp_out.array() += dx.array().colwise().sum();
    gelu_bwd(s.hpre, dgout, dhpre);
    g.w_mlp_in.noalias() += bmat.transpose() * dhpre;
    g.b_mlp_in.array() += dhpre.array().colwise().sum();
    dbmat.noalias() = dhpre * blk.w_mlp_in.transpose();
    dx1 = dx;  // residual path
    layernorm_bwd(dbmat, s.ln2, blk.ln2_g, dx1, g.ln2_g, g.ln2_b, true);

    // Attention branch: x1 = x0 + attn(ln1(x0)) W_o + b
    dctx.noalias() = dx1 * blk.w_attn_out.transpose();
    g.w_attn_out.noalias() += s.ctx.transpose() * dx1;
    g.b_attn_out.array() += dx1.array().colwise().sum();
    attention_bwd(s.qkv, s.probs, dctx, B, T, cfg.n_heads, cfg.head_dim(), dqkv);
    a = s.ln1.xhat;
    a.array().rowwise() *= blk.ln1_g.array();
    a.array().rowwise() += blk.ln1_b.array();
    g.w_qkv.noalias() += a.transpose() * dqkv;
    g.b_qkv.array() += dqkv.array().colwise().sum();
    dlnout.noalias() = dqkv * blk.w_qkv.transpose();
    dx = dx1;  // residual path
    layernorm_bwd(dlnout, s.ln1, blk.ln1_g, dx, g.ln1_g, g.ln1_b, true);
  }

  // Embedding scatter (token embedding is tied with the head).
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      const Eigen::Index n = static_cast<Eigen::Index>(b) * T + t;
      grads.tok_emb.row(batch.token_at(b, t)) += dx.row(n);
      grads.pos_emb.row(t) += dx.row(n);
    }
  return loss;
}

// ---------------------------------------------------------------------------

template struct Weights<float>;
template struct Weights<double>;
template void set_zero<float>(Weights<float>&);
template void set_zero<double>(Weights<double>&);
template Weights<float> make_zero_like<float>(const Weights<float>&);
template Weights<double> make_zero_like<double>(const Weights<double>&);
template Weights<float> init_model<float>(const ModelConfig&, Seed);
template Weights<double> init_model<double>(const ModelConfig&, Seed);
template Weights<double> cast_weights<double, float>(const Weights<float>&);
template Weights<float> cast_weights<float, double>(const Weights<double>&);
template Weights<float> cast_weights<float, float>(const Weights<float>&);
template ForwardResult<float> forward<float>(const Weights<float>&, const TokenBatch&,
                                             const ForwardOptions<float>&);
template ForwardResult<double> forward<double>(const Weights<double>&, const TokenBatch&,
                                               const ForwardOptions<double>&);
template float loss_and_grads<float>(const Weights<float>&, const TokenBatch&, Weights<float>&);
template double loss_and_grads<double>(const Weights<double>&, const TokenBatch&,
                                       Weights<double>&);
template Vec<float> lens_logits<float>(const Weights<float>&, const float*);
template Vec<double> lens_logits<double>(const Weights<double>&, const double*);

}  // namespace grokkit::model
