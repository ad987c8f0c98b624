#include "grokkit/interp.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <tuple>

namespace grokkit::interp {

using model::ForwardOptions;
using model::Patch;
using model::TokenBatch;
using vocab::TokenSequence;

// ---------------------------------------------------------------------------
// Logit lens
// ---------------------------------------------------------------------------

namespace {

int rank_in(const model::Vec<float>& logits, TokenId token) {
  const float v = logits[token];
  int rank = 1;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (logits[i] > v) ++rank;
    else if (logits[i] == v && i < token) ++rank;  // ties by ascending id
  }
  return rank;
}

TokenId top1_in(const model::Vec<float>& logits) {
  TokenId best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<TokenId>(i);
  return best;
}

}  // namespace

int lens_rank(const Weights<float>& w, const float* state, TokenId token) {
  return rank_in(model::lens_logits(w, state), token);
}

TokenId lens_top1(const Weights<float>& w, const float* state) {
  return top1_in(model::lens_logits(w, state));
}

double mrr(const std::vector<int>& ranks) {
  if (ranks.empty()) throw DataError("mrr: empty rank list");
  double s = 0;
  for (int r : ranks) {
    if (r < 1) throw DataError("mrr: ranks are 1-based");
    s += 1.0 / r;
  }
  return s / static_cast<double>(ranks.size());
}

double recall_at_k(const std::vector<std::vector<int>>& rank_sets, int k) {
  if (rank_sets.empty()) throw DataError("recall_at_k: empty input");
  double total = 0, hit = 0;
  for (const auto& set : rank_sets) {
    if (set.empty()) throw DataError("recall_at_k: empty rank set");
    for (int r : set) {
      total += 1;
      if (r <= k) hit += 1;
    }
  }
  return hit / total;
}

// ---------------------------------------------------------------------------
// TracingContext
// ---------------------------------------------------------------------------

TracingContext TracingContext::make(const datagen::Dataset& d, const Vocab& v) {
  if (v.mode() != vocab::Mode::Single)
    throw DataError("tracing requires the single-token vocabulary mode");
  TracingContext ctx;
  ctx.vocab_ = &v;
  if (const auto* c = std::get_if<datagen::CompositionDataset>(&d)) {
    ctx.comp_ = c;
    ctx.roles_ = {Role::H, Role::R1, Role::R2};
    for (const auto& e : c->atomic_id) ctx.hop_id_[{e.subject, e.relation}] = e.object;
    for (const auto& e : c->atomic_ood) ctx.hop_ood_[{e.subject, e.relation}] = e.object;
    std::set<EntityId> hs;
    std::set<RelationId> rs;
    for (const auto& e : c->atomic_id) {
      hs.insert(e.subject);
      rs.insert(e.relation);
    }
    ctx.heads_id_.assign(hs.begin(), hs.end());
    ctx.rels_id_.assign(rs.begin(), rs.end());
  } else if (const auto* c = std::get_if<datagen::ComparisonDataset>(&d)) {
    ctx.cmp_ = c;
    ctx.roles_ = {Role::A, Role::E1, Role::E2};
    ctx.n_entities_ = c->n_entities;
    ctx.n_attributes_ = c->n_attributes;
    ctx.values_ = &c->values;
    ctx.fact_ood_.assign(c->values.size(), 0);
    for (const auto& f : c->atomic_ood)
      ctx.fact_ood_[std::size_t{f.entity} * c->n_attributes + f.attribute] = 1;
  } else if (const auto* c = std::get_if<datagen::ComplexDataset>(&d)) {
    ctx.cpx_ = c;
    ctx.roles_ = {Role::A, Role::E1, Role::E2};
    ctx.n_entities_ = c->n_entities;
    ctx.n_attributes_ = c->n_attributes;
    ctx.values_ = &c->values;
    ctx.fact_ood_.assign(c->values.size(), 0);
    for (const auto& f : c->eval_atomic_ood)
      ctx.fact_ood_[std::size_t{f.entity} * c->n_attributes + f.attribute] = 1;
  }
  return ctx;
}

int TracingContext::position_of(Role r) const {
  for (std::size_t i = 0; i < roles_.size(); ++i)
    if (roles_[i] == r) return static_cast<int>(i);
  throw DataError(std::string("tracing: role ") + vocab::role_name(r) +
                  " is not an input position of this task");
}

bool TracingContext::pair_in_side(EntityId e, AttributeId a) const {
  const bool ood = fact_ood_[std::size_t{e} * n_attributes_ + a] != 0;
  return ood == ood_side_;
}

std::vector<AnyFact> TracingContext::sample_examples(int n, Seed seed) const {
  Rng rng(Rng::mix(seed, 0x74726163));
  std::vector<AnyFact> out;
  auto pick = [&](const auto& pool) {
    if (pool.empty()) throw DataError("tracing: empty example pool");
    const std::size_t k = std::min<std::size_t>(n, pool.size());
    for (auto i : rng.sample_without_replacement(pool.size(), k)) out.push_back(pool[i]);
  };
  if (comp_) pick(comp_->train_inferred_id);
  else if (cmp_) pick(cmp_->train_inferred_id);
  else pick(cpx_->train_comp_id_id);
  return out;
}

std::vector<AnyFact> TracingContext::sample_ood_examples(int n, Seed seed) const {
  Rng rng(Rng::mix(seed, 0x6f6f6474));
  std::vector<AnyFact> out;
  auto pick = [&](const auto& pool) {
    if (pool.empty()) throw DataError("tracing: empty OOD example pool");
    const std::size_t k = std::min<std::size_t>(n, pool.size());
    for (auto i : rng.sample_without_replacement(pool.size(), k)) out.push_back(pool[i]);
  };
  if (comp_) pick(comp_->test_inferred_ood);
  else if (cmp_) pick(cmp_->test_inferred_ood);
  else pick(cpx_->test_queries);
  return out;
}

TokenId TracingContext::gold_token(const AnyFact& example) const {
  const TokenSequence s = vocab::encode_fact(example, *vocab_);
  return s.targets.back().second;
}

std::optional<AnyFact> TracingContext::perturb(const AnyFact& example, Role site_role, Rng& rng,
                                               int max_attempts) const {
  if (comp_) {
    const auto& f = std::get<datagen::ComposedFact>(example);
    const auto& hop = hops();
    const auto find = [&](EntityId s, RelationId r) -> std::optional<EntityId> {
      auto it = hop.find({s, r});
      if (it == hop.end()) return std::nullopt;
      return it->second;
    };
    const auto tail_of = [&](EntityId h, RelationId r1, RelationId r2) -> std::optional<EntityId> {
      auto b = find(h, r1);
      if (!b) return std::nullopt;
      return find(*b, r2);
    };
    for (int a = 0; a < max_attempts; ++a) {
      datagen::ComposedFact p = f;
      if (site_role == Role::H)
        p.head = heads_id_[rng.below(heads_id_.size())];
      else if (site_role == Role::R1)
        p.r1 = rels_id_[rng.below(rels_id_.size())];
      else if (site_role == Role::R2)
        p.r2 = rels_id_[rng.below(rels_id_.size())];
      else
        throw DataError("perturb: invalid site role for the composition task");
      if (p.head == f.head && p.r1 == f.r1 && p.r2 == f.r2) continue;
      const auto t = tail_of(p.head, p.r1, p.r2);
      if (!t || *t == f.tail) continue;
      p.tail = *t;
      return p;
    }
    return std::nullopt;
  }

  const auto& f = std::get<datagen::CompFact>(example);
  for (int a = 0; a < max_attempts; ++a) {
    datagen::CompFact p = f;
    if (site_role == Role::A)
      p.attribute = static_cast<AttributeId>(rng.below(n_attributes_));
    else if (site_role == Role::E1)
      p.e1 = static_cast<EntityId>(rng.below(n_entities_));
    else if (site_role == Role::E2)
      p.e2 = static_cast<EntityId>(rng.below(n_entities_));
    else
      throw DataError("perturb: invalid site role for the comparison task");
    if (p.e1 == p.e2) continue;
    if (p.attribute == f.attribute && p.e1 == f.e1 && p.e2 == f.e2) continue;
    if (!pair_in_side(p.e1, p.attribute) || !pair_in_side(p.e2, p.attribute)) continue;
    p.label = compare_label(value_of(p.e1, p.attribute), value_of(p.e2, p.attribute));
    if (p.label == f.label) continue;
    return p;
  }
  return std::nullopt;
}

std::vector<TracingContext::Tracked> TracingContext::tracked_symbols(const AnyFact& example) const {
  std::vector<Tracked> out;
  if (comp_) {
    const auto& f = std::get<datagen::ComposedFact>(example);
    const auto& hop = hops();
    auto it = hop.find({f.head, f.r1});
    if (it != hop.end()) out.push_back({Role::R1, vocab_->entity_token(it->second), "bridge"});
    out.push_back({Role::R2, vocab_->relation_token(f.r2), "r2"});
    out.push_back({Role::R2, vocab_->entity_token(f.tail), "answer"});
  } else {
    const auto& f = std::get<datagen::CompFact>(example);
    out.push_back({Role::E1, vocab_->value_token(value_of(f.e1, f.attribute)), "v1"});
    out.push_back({Role::E2, vocab_->value_token(value_of(f.e2, f.attribute)), "v2"});
    out.push_back({Role::E2, vocab_->label_token(f.label), "answer"});
  }
  return out;
}

std::vector<TokenId> TracingContext::label_space() const {
  if (comp_) return {};
  return {vocab_->label_token(Label::Less), vocab_->label_token(Label::Equal),
          vocab_->label_token(Label::Greater)};
}

// ---------------------------------------------------------------------------
// Causal tracing
// ---------------------------------------------------------------------------

namespace {

TokenBatch batch_of(const std::vector<TokenSequence>& seqs) {
  TokenBatch b;
  b.batch = static_cast<int>(seqs.size());
  b.seq_len = static_cast<int>(seqs[0].tokens.size());
  b.tokens.reserve(seqs.size() * b.seq_len);
  for (const auto& s : seqs) {
    if (static_cast<int>(s.tokens.size()) != b.seq_len)
      throw DataError("tracing batch: mixed sequence lengths");
    b.tokens.insert(b.tokens.end(), s.tokens.begin(), s.tokens.end());
  }
  return b;
}

}  // namespace

const CausalCell* CausalGrid::cell(int layer, Role role, const TracingContext& ctx) const {
  const int pos = ctx.position_of(role);
  for (const auto& c : cells)
    if (c.layer == layer && c.position == pos) return &c;
  return nullptr;
}

CausalGrid causal_trace(const Weights<float>& w, const TracingContext& ctx,
                        const std::vector<AnyFact>& examples, const std::vector<StateRef>& sites,
                        StateRef target, Seed seed, int max_attempts) {
  if (examples.empty()) throw DataError("causal_trace: no examples");
  const int B = static_cast<int>(examples.size());
  const int target_pos = ctx.position_of(target.role);

  std::vector<TokenSequence> normal_seqs;
  normal_seqs.reserve(B);
  for (const auto& e : examples) normal_seqs.push_back(vocab::encode_fact(e, ctx.vocab()));
  const TokenBatch normal_batch = batch_of(normal_seqs);

  ForwardOptions<float> cap;
  cap.capture = true;
  const auto normal = model::forward(w, normal_batch, cap);

  std::vector<TokenId> normal_top1(B);
  for (int b = 0; b < B; ++b)
    normal_top1[b] =
        lens_top1(w, normal.cache.resid[target.layer].row(normal.cache.row(b, target_pos)).data());

  CausalGrid grid;
  grid.target = target;
  grid.target_position = target_pos;
  grid.n_examples = B;

  // Group requested sites by input position: one perturbed run per position.
  std::map<int, std::vector<int>> layers_by_pos;  // position -> site layers
  for (const auto& s : sites) layers_by_pos[ctx.position_of(s.role)].push_back(s.layer);

  Rng rng(Rng::mix(seed, 0x70657274));
  for (auto& [pos, layers] : layers_by_pos) {
    const Role site_role = ctx.input_roles()[pos];
    // Perturb every example at this position; skipped examples keep their
    // original tokens in the batch but are excluded from the counts.
    std::vector<char> usable(B, 1);
    std::vector<TokenSequence> pert_seqs = normal_seqs;
    int skipped = 0;
    for (int b = 0; b < B; ++b) {
      auto p = ctx.perturb(examples[b], site_role, rng, max_attempts);
      if (!p) {
        usable[b] = 0;
        ++skipped;
        continue;
      }
      pert_seqs[b] = vocab::encode_fact(*p, ctx.vocab());
    }
    const TokenBatch pert_batch = batch_of(pert_seqs);
    const auto pert = model::forward(w, pert_batch, cap);

    for (int layer : layers) {
      CausalCell cell;
      cell.layer = layer;
      cell.position = pos;
      cell.role = vocab::role_name(site_role);
      cell.skipped = skipped;
      cell.used = B - skipped;
      cell.reachable = layer < target.layer && pos <= target_pos;

      Patch<float> patch;
      patch.layer = layer;
      patch.position = pos;
      patch.replacement.resize(B, w.cfg.hidden_dim);
      for (int b = 0; b < B; ++b)
        patch.replacement.row(b) = pert.cache.resid[layer].row(pert.cache.row(b, pos));
      std::vector<Patch<float>> patches = {std::move(patch)};
      ForwardOptions<float> popts;
      popts.patches = &patches;
      popts.stop_layer = target.layer;
      const auto patched = model::forward(w, normal_batch, popts);

      int altered = 0;
      for (int b = 0; b < B; ++b) {
        if (!usable[b]) continue;
        const TokenId t = lens_top1(
            w, patched.cache.resid[target.layer].row(patched.cache.row(b, target_pos)).data());
        altered += t != normal_top1[b];
      }
      cell.strength = cell.used > 0 ? static_cast<double>(altered) / cell.used : 0.0;
      grid.cells.push_back(std::move(cell));
    }
  }
  std::sort(grid.cells.begin(), grid.cells.end(), [](const CausalCell& a, const CausalCell& b) {
    return std::tie(a.layer, a.position) < std::tie(b.layer, b.position);
  });
  return grid;
}

void save_grid_csv(const CausalGrid& grid, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << "layer,position,role,strength,n_used,n_skipped,reachable\n";
  for (const auto& c : grid.cells)
    os << c.layer << ',' << c.position << ',' << c.role << ',' << c.strength << ',' << c.used
       << ',' << c.skipped << ',' << (c.reachable ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------------------
// Lens statistics
// ---------------------------------------------------------------------------

const LensSiteStats* LensStats::site(int layer, Role role, const TracingContext& ctx) const {
  const int pos = ctx.position_of(role);
  for (const auto& s : sites)
    if (s.layer == layer && s.position == pos) return &s;
  return nullptr;
}

LensStats lens_stats(const Weights<float>& w, const TracingContext& ctx,
                     const std::vector<AnyFact>& examples) {
  if (examples.empty()) throw DataError("lens_stats: no examples");
  const int B = static_cast<int>(examples.size());
  std::vector<TokenSequence> seqs;
  seqs.reserve(B);
  for (const auto& e : examples) seqs.push_back(vocab::encode_fact(e, ctx.vocab()));
  const TokenBatch batch = batch_of(seqs);
  ForwardOptions<float> cap;
  cap.capture = true;
  const auto res = model::forward(w, batch, cap);

  const int n_pos = static_cast<int>(ctx.input_roles().size());
  const int n_layers = w.cfg.n_layers;
  const auto labels = ctx.label_space();

  LensStats stats;
  stats.n_examples = B;
  for (int layer = 0; layer <= n_layers; ++layer) {
    for (int pos = 0; pos < n_pos; ++pos) {
      LensSiteStats site;
      site.layer = layer;
      site.position = pos;
      site.role = vocab::role_name(ctx.input_roles()[pos]);

      std::map<TokenId, int> top_counts;
      std::map<std::string, std::vector<int>> ranks;
      std::vector<std::vector<int>> label_ranks;
      for (int b = 0; b < B; ++b) {
        const auto logits =
            model::lens_logits(w, res.cache.resid[layer].row(res.cache.row(b, pos)).data());
        ++top_counts[top1_in(logits)];
        for (const auto& t : ctx.tracked_symbols(examples[b]))
          if (ctx.position_of(t.position_role) == pos)
            ranks[t.tag].push_back(rank_in(logits, t.token));
        if (!labels.empty()) {
          std::vector<int> rs;
          for (TokenId l : labels) rs.push_back(rank_in(logits, l));
          label_ranks.push_back(std::move(rs));
        }
      }
      int best_count = 0;
      TokenId best_tok = 0;
      for (auto [tok, n] : top_counts)
        if (n > best_count) {
          best_count = n;
          best_tok = tok;
        }
      site.top_token = ctx.vocab().token_name(best_tok);
      site.top_fraction = static_cast<double>(best_count) / B;
      for (auto& [tag, rs] : ranks) site.symbol_mrr[tag] = mrr(rs);
      if (!labels.empty()) site.label_space_recall3 = recall_at_k(label_ranks, 3);
      stats.sites.push_back(std::move(site));
    }
  }
  return stats;
}

void save_lens_csv(const LensStats& stats, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << "layer,position,role,top_token,top_fraction,metric,value\n";
  for (const auto& s : stats.sites) {
    for (const auto& [tag, v] : s.symbol_mrr)
      os << s.layer << ',' << s.position << ',' << s.role << ',' << s.top_token << ','
         << s.top_fraction << ",mrr_" << tag << ',' << v << '\n';
    if (s.label_space_recall3 >= 0)
      os << s.layer << ',' << s.position << ',' << s.role << ',' << s.top_token << ','
         << s.top_fraction << ",label_space_recall3," << s.label_space_recall3 << '\n';
  }
}

// ---------------------------------------------------------------------------
// Circuit pruning
// ---------------------------------------------------------------------------

CircuitReport prune_circuit(const std::vector<CausalGrid>& grids, const LensStats& lens,
                            double tau) {
  CircuitReport rep;
  rep.tau = tau;
  std::set<std::pair<int, int>> kept_nodes;
  for (const auto& grid : grids) {
    for (const auto& c : grid.cells) {
      const bool topology_ok = c.layer < grid.target.layer && c.position <= grid.target_position;
      if (!topology_ok) continue;  // eliminated outright
      if (c.strength < tau) continue;
      rep.edges.push_back(
          {c.layer, c.position, grid.target.layer, grid.target_position, c.strength});
      kept_nodes.insert({c.layer, c.position});
      kept_nodes.insert({grid.target.layer, grid.target_position});
    }
  }
  for (auto [layer, pos] : kept_nodes) {
    CircuitNode node;
    node.layer = layer;
    node.position = pos;
    for (const auto& s : lens.sites)
      if (s.layer == layer && s.position == pos) {
        node.role = s.role;
        node.top_token = s.top_token;
        node.symbol_mrr = s.symbol_mrr;
      }
    rep.nodes.push_back(std::move(node));
  }
  return rep;
}

void save_circuit_report(const CircuitReport& rep, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << "circuit tau=" << rep.tau << "\n\nnodes (layer, position, role, lens top token):\n";
  for (const auto& n : rep.nodes) {
    os << "  S[" << n.layer << ',' << (n.role.empty() ? "?" : n.role) << "] pos=" << n.position
       << " top=" << n.top_token;
    for (const auto& [tag, v] : n.symbol_mrr) os << " mrr_" << tag << '=' << v;
    os << '\n';
  }
  os << "\nedges (source -> target, strength):\n";
  for (const auto& e : rep.edges)
    os << "  S[" << e.src_layer << ",pos" << e.src_position << "] -> S[" << e.dst_layer << ",pos"
       << e.dst_position << "]  " << e.strength << '\n';
}

// ---------------------------------------------------------------------------
// Linear probing
// ---------------------------------------------------------------------------

model::Mat<float> collect_states(const Weights<float>& w, const TracingContext& ctx,
                                 const std::vector<AnyFact>& examples, int layer, Role role) {
  if (examples.empty()) throw DataError("collect_states: no examples");
  std::vector<TokenSequence> seqs;
  seqs.reserve(examples.size());
  for (const auto& e : examples) seqs.push_back(vocab::encode_fact(e, ctx.vocab()));
  // Position comes from the encoded role layout (multi-token aware).
  int pos = -1;
  for (std::size_t i = 0; i < seqs[0].roles.size(); ++i)
    if (seqs[0].roles[i] == role) pos = static_cast<int>(i);
  if (pos < 0) throw DataError("collect_states: role not present in the encoded layout");
  const TokenBatch batch = batch_of(seqs);
  ForwardOptions<float> cap;
  cap.capture = true;
  const auto res = model::forward(w, batch, cap);
  model::Mat<float> out(examples.size(), w.cfg.hidden_dim);
  for (int b = 0; b < static_cast<int>(examples.size()); ++b)
    out.row(b) = res.cache.resid[layer].row(res.cache.row(b, pos));
  return out;
}

double linear_probe(const model::Mat<float>& states, const std::vector<int>& labels,
                    double train_fraction, Seed seed) {
  const Eigen::Index n = states.rows();
  if (n < 2 || labels.size() != static_cast<std::size_t>(n))
    throw DataError("linear_probe: need at least two labeled states");
  const int n_classes = 1 + *std::max_element(labels.begin(), labels.end());
  {
    std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) throw DataError("linear_probe: single-class input is degenerate");
  }

  Rng rng(Rng::mix(seed, 0x70726f62));
  std::vector<std::uint64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const Eigen::Index n_train = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(train_fraction * static_cast<double>(n)));
  if (n_train >= n) throw DataError("linear_probe: no held-out examples");

  const Eigen::Index d = states.cols();
  model::Mat<float> xtr(n_train, d), xte(n - n_train, d);
  std::vector<int> ytr(n_train), yte(n - n_train);
  for (Eigen::Index i = 0; i < n_train; ++i) {
    xtr.row(i) = states.row(order[i]);
    ytr[i] = labels[order[i]];
  }
  for (Eigen::Index i = n_train; i < n; ++i) {
    xte.row(i - n_train) = states.row(order[i]);
    yte[i - n_train] = labels[order[i]];
  }

  // Standardize by training statistics.
  model::Vec<float> mean = xtr.colwise().mean();
  model::Vec<float> sd =
      ((xtr.rowwise() - mean).array().square().colwise().mean() + 1e-6f).sqrt();
  auto norm = [&](model::Mat<float>& x) {
    x.rowwise() -= mean;
    x.array().rowwise() /= sd.array();
  };
  norm(xtr);
  norm(xte);

  // Full-batch softmax regression with momentum.
  model::Mat<float> W = model::Mat<float>::Zero(d, n_classes);
  model::Vec<float> b = model::Vec<float>::Zero(n_classes);
  model::Mat<float> mW = W;
  model::Vec<float> mb = b;
  const float lr = 0.5f, mom = 0.9f;
  model::Mat<float> logits, probs;
  for (int it = 0; it < 400; ++it) {
    logits.noalias() = xtr * W;
    logits.rowwise() += b;
    probs = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp();
    probs.array().colwise() /= probs.rowwise().sum().array();
    for (Eigen::Index i = 0; i < n_train; ++i) probs(i, ytr[i]) -= 1.0f;
    probs /= static_cast<float>(n_train);
    mW = mom * mW - lr * (xtr.transpose() * probs);
    mb = mom * mb - lr * probs.colwise().sum();
    W += mW;
    b += mb;
  }

  logits.noalias() = xte * W;
  logits.rowwise() += b;
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best;
    logits.row(i).maxCoeff(&best);
    correct += static_cast<int>(best) == yte[i];
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

}  // namespace grokkit::interp
