#include "udmt/decode.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "udmt/ops.hpp"
#include "udmt/special_tokens.hpp"

namespace udmt {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const Mat>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using CVecMap = Eigen::Map<const RowVec>;

class Weights {
 public:
  explicit Weights(const TransformerModel& m) : params_(m.params()) {}

  CMap mat(const std::string& name) const {
    const auto& t = params_.at(name);
    return CMap(t.ptr(), static_cast<long>(t.dim(0)), static_cast<long>(t.dim(1)));
  }
  CVecMap vec(const std::string& name) const {
    const auto& t = params_.at(name);
    return CVecMap(t.ptr(), static_cast<long>(t.numel()));
  }

 private:
  const ParameterSet& params_;
};

void layer_norm_rows(Mat& x, const Weights& w, const std::string& prefix) {
  const auto g = w.vec(prefix + ".g");
  const auto b = w.vec(prefix + ".b");
  const auto width = static_cast<double>(x.cols());
  for (long r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (long j = 0; j < x.cols(); ++j) mean += row(j);
    mean /= width;
    double var = 0.0;
    for (long j = 0; j < x.cols(); ++j) var += (row(j) - mean) * (row(j) - mean);
    var /= width;
    const double rstd = 1.0 / std::sqrt(var + ops::kLayerNormEps);
    for (long j = 0; j < x.cols(); ++j) row(j) = (row(j) - mean) * rstd * g(j) + b(j);
  }
}

Mat normed(const Mat& x, const Weights& w, const std::string& prefix) {
  Mat h = x;
  layer_norm_rows(h, w, prefix);
  return h;
}

Mat affine(const Mat& x, const Weights& w, const std::string& wname, const std::string& bname) {
  Mat y = x * w.mat(wname);
  y.rowwise() += w.vec(bname);
  return y;
}

// Scaled dot-product attention of one query row over `len` cached key/value rows.
void attend(const double* q, const Mat& keys, const Mat& values, std::size_t len, std::size_t heads,
            std::size_t dh, double* out) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> p(len);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto off = h * dh;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < len; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < dh; ++k) s += q[off + k] * keys(static_cast<long>(j), static_cast<long>(off + k));
      p[j] = s * scale;
      mx = std::max(mx, p[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      p[j] = std::exp(p[j] - mx);
      z += p[j];
    }
    for (std::size_t k = 0; k < dh; ++k) out[off + k] = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      const double pj = p[j] / z;
      for (std::size_t k = 0; k < dh; ++k) out[off + k] += pj * values(static_cast<long>(j), static_cast<long>(off + k));
    }
  }
}

Mat embed_rows(const TransformerConfig& c, const Weights& w, std::span<const int> ids, std::size_t first_position,
               bool same_position) {
  const auto d = c.d_model;
  const auto table = w.mat("embed");
  Mat x(static_cast<long>(ids.size()), static_cast<long>(d));
  const double s = std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= c.vocab_size) {
      throw std::out_of_range(fmt::format("decode: token id {} outside vocab {}", ids[i], c.vocab_size));
    }
    auto pe = position_encoding(same_position ? first_position : first_position + i, d);
    for (std::size_t j = 0; j < d; ++j) x(static_cast<long>(i), static_cast<long>(j)) = table(ids[i], static_cast<long>(j)) * s + pe[j];
  }
  return x;
}

struct EncodedSource {
  std::size_t len = 0;
  std::vector<Mat> cross_k;
  std::vector<Mat> cross_v;
};

EncodedSource encode_source(const TransformerConfig& c, const Weights& w, std::span<const int> src) {
  if (src.empty()) throw std::invalid_argument("decode: empty source");
  if (src.size() > c.max_seq_len) {
    throw std::length_error(fmt::format("decode: source length {} exceeds max_seq_len {}", src.size(), c.max_seq_len));
  }
  for (int id : src) {
    if (id == kPadId) throw std::invalid_argument("decode: source must not contain padding");
  }
  const auto heads = c.num_heads, dh = c.d_model / c.num_heads, n = src.size();
  Mat x = embed_rows(c, w, src, 0, false);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto pre = fmt::format("enc.{}", l);
    Mat h = normed(x, w, pre + ".ln1");
    Mat q = affine(h, w, pre + ".attn.wq", pre + ".attn.bq");
    Mat k = h * w.mat(pre + ".attn.wk");
    Mat v = affine(h, w, pre + ".attn.wv", pre + ".attn.bv");
    Mat ctx(static_cast<long>(n), static_cast<long>(c.d_model));
    for (std::size_t i = 0; i < n; ++i) attend(q.row(static_cast<long>(i)).data(), k, v, n, heads, dh, ctx.row(static_cast<long>(i)).data());
    x += affine(ctx, w, pre + ".attn.wo", pre + ".attn.bo");
    h = normed(x, w, pre + ".ln2");
    Mat f = affine(h, w, pre + ".ff.w1", pre + ".ff.b1").cwiseMax(0.0);
    x += affine(f, w, pre + ".ff.w2", pre + ".ff.b2");
  }
  layer_norm_rows(x, w, "enc.ln_final");
  EncodedSource e;
  e.len = n;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto pre = fmt::format("dec.{}.cross", l);
    e.cross_k.push_back(x * w.mat(pre + ".wk"));
    e.cross_v.push_back(affine(x, w, pre + ".wv", pre + ".bv"));
  }
  return e;
}

struct RowState {
  std::size_t source = 0;
  std::size_t steps = 0;
  std::vector<Mat> self_k;
  std::vector<Mat> self_v;
};

class CachedDecoder {
 public:
  CachedDecoder(const TransformerModel& model) : c_(model.config()), w_(model) {}

  std::size_t add_source(std::span<const int> src) {
    sources_.push_back(encode_source(c_, w_, src));
    return sources_.size() - 1;
  }

  RowState new_row(std::size_t source) const {
    RowState r;
    r.source = source;
    r.self_k.assign(c_.num_layers, Mat(0, static_cast<long>(c_.d_model)));
    r.self_v.assign(c_.num_layers, Mat(0, static_cast<long>(c_.d_model)));
    return r;
  }

  /// Feeds one token per row at the row's next position; returns log-probs [rows, vocab].
  Mat step(std::vector<RowState*>& rows, std::span<const int> tokens) {
    const auto R = rows.size();
    const auto d = c_.d_model, heads = c_.num_heads, dh = d / heads;
    const auto pos = rows.front()->steps;
    for (auto* r : rows) {
      if (r->steps != pos) throw std::logic_error("CachedDecoder: rows out of step");
    }
    if (pos >= c_.max_seq_len) throw std::length_error("decode: decoder input exceeds max_seq_len");
    Mat x = embed_rows(c_, w_, tokens, pos, true);
    Mat ctx(static_cast<long>(R), static_cast<long>(d));
    for (std::size_t l = 0; l < c_.num_layers; ++l) {
      const auto pre = fmt::format("dec.{}", l);
      Mat h = normed(x, w_, pre + ".ln1");
      Mat q = affine(h, w_, pre + ".self.wq", pre + ".self.bq");
      Mat k = h * w_.mat(pre + ".self.wk");
      Mat v = affine(h, w_, pre + ".self.wv", pre + ".self.bv");
      for (std::size_t i = 0; i < R; ++i) {
        auto& sk = rows[i]->self_k[l];
        auto& sv = rows[i]->self_v[l];
        sk.conservativeResize(sk.rows() + 1, Eigen::NoChange);
        sv.conservativeResize(sv.rows() + 1, Eigen::NoChange);
        sk.row(sk.rows() - 1) = k.row(static_cast<long>(i));
        sv.row(sv.rows() - 1) = v.row(static_cast<long>(i));
        attend(q.row(static_cast<long>(i)).data(), sk, sv, static_cast<std::size_t>(sk.rows()), heads, dh,
               ctx.row(static_cast<long>(i)).data());
      }
      x += affine(ctx, w_, pre + ".self.wo", pre + ".self.bo");
      h = normed(x, w_, pre + ".ln2");
      q = affine(h, w_, pre + ".cross.wq", pre + ".cross.bq");
      for (std::size_t i = 0; i < R; ++i) {
        const auto& src = sources_[rows[i]->source];
        attend(q.row(static_cast<long>(i)).data(), src.cross_k[l], src.cross_v[l], src.len, heads, dh,
               ctx.row(static_cast<long>(i)).data());
      }
      x += affine(ctx, w_, pre + ".cross.wo", pre + ".cross.bo");
      h = normed(x, w_, pre + ".ln3");
      Mat f = affine(h, w_, pre + ".ff.w1", pre + ".ff.b1").cwiseMax(0.0);
      x += affine(f, w_, pre + ".ff.w2", pre + ".ff.b2");
    }
    layer_norm_rows(x, w_, "dec.ln_final");
    Mat logits = x * w_.mat("embed").transpose();
    for (long r = 0; r < logits.rows(); ++r) {
      auto row = logits.row(r);
      const double mx = row.maxCoeff();
      double z = 0.0;
      for (long j = 0; j < row.cols(); ++j) z += std::exp(row(j) - mx);
      const double lse = mx + std::log(z);
      for (long j = 0; j < row.cols(); ++j) row(j) -= lse;
    }
    for (auto* r : rows) r->steps += 1;
    return logits;
  }

  bool allowed(int id) const {
    return id == kEosId || static_cast<std::size_t>(id) >= c_.num_special_tokens;
  }

  int argmax_allowed(const Mat& logp, long row) const {
    int best = -1;
    double bv = -std::numeric_limits<double>::infinity();
    for (long j = 0; j < logp.cols(); ++j) {
      if (!allowed(static_cast<int>(j))) continue;
      if (best < 0 || logp(row, j) > bv) {
        best = static_cast<int>(j);
        bv = logp(row, j);
      }
    }
    return best;
  }

  const TransformerConfig& config() const { return c_; }

 private:
  const TransformerConfig& c_;
  Weights w_;
  std::vector<EncodedSource> sources_;
};

std::size_t clamp_len(const TransformerConfig& c, std::size_t max_len) { return std::min(max_len, c.max_seq_len); }

}  // namespace

std::vector<std::vector<int>> greedy_decode_batch(const TransformerModel& model,
                                                  const std::vector<std::vector<int>>& srcs,
                                                  const std::vector<std::size_t>& max_lens) {
  if (srcs.size() != max_lens.size()) throw std::invalid_argument("greedy_decode_batch: sources and lengths differ");
  CachedDecoder dec(model);
  std::vector<RowState> rows;
  rows.reserve(srcs.size());
  for (const auto& s : srcs) rows.push_back(dec.new_row(dec.add_source(s)));
  std::vector<std::vector<int>> out(srcs.size());
  std::vector<std::size_t> alive;
  std::vector<int> last(srcs.size(), kBosId);
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    if (clamp_len(model.config(), max_lens[i]) > 0) alive.push_back(i);
  }
  while (!alive.empty()) {
    std::vector<RowState*> ptrs;
    std::vector<int> toks;
    for (auto i : alive) {
      ptrs.push_back(&rows[i]);
      toks.push_back(last[i]);
    }
    Mat logp = dec.step(ptrs, toks);
    std::vector<std::size_t> next;
    for (std::size_t k = 0; k < alive.size(); ++k) {
      const auto i = alive[k];
      const int tok = dec.argmax_allowed(logp, static_cast<long>(k));
      if (tok == kEosId) continue;
      out[i].push_back(tok);
      last[i] = tok;
      if (rows[i].steps < clamp_len(model.config(), max_lens[i])) next.push_back(i);
    }
    alive = std::move(next);
  }
  return out;
}

std::vector<int> greedy_decode(const TransformerModel& model, std::span<const int> src, std::size_t max_len) {
  return greedy_decode_batch(model, {std::vector<int>(src.begin(), src.end())}, {max_len}).front();
}

BeamHypothesis beam_decode(const TransformerModel& model, std::span<const int> src, std::size_t beam,
                           std::size_t max_len) {
  if (beam < 1) throw std::invalid_argument("beam_decode: beam must be at least 1");
  max_len = clamp_len(model.config(), max_len);
  if (max_len == 0) throw std::invalid_argument("beam_decode: max_len must be positive");
  CachedDecoder dec(model);
  const auto source = dec.add_source(src);

  struct Live {
    RowState state;
    std::vector<int> tokens;
    double log_prob;
  };
  std::vector<Live> alive;
  alive.push_back({dec.new_row(source), {}, 0.0});
  std::vector<BeamHypothesis> finished;

  for (std::size_t step = 0; step < max_len && !alive.empty(); ++step) {
    std::vector<RowState*> ptrs;
    std::vector<int> toks;
    for (auto& h : alive) {
      ptrs.push_back(&h.state);
      toks.push_back(h.tokens.empty() ? kBosId : h.tokens.back());
    }
    Mat logp = dec.step(ptrs, toks);

    struct Cand {
      double score;
      std::size_t parent;
      double step_log_prob;
      int token;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      for (long j = 0; j < logp.cols(); ++j) {
        if (!dec.allowed(static_cast<int>(j))) continue;
        const double lp = logp(static_cast<long>(i), j);
        cands.push_back({alive[i].log_prob + lp, i, lp, static_cast<int>(j)});
      }
    }
    const auto keep = std::min(beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        // Rounding can merge cumulative scores; fall back to the
                        // step's own log-prob so beam 1 matches greedy exactly.
                        if (a.step_log_prob != b.step_log_prob) return a.step_log_prob > b.step_log_prob;
                        return a.token < b.token;
                      });
    std::vector<Live> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& cd = cands[k];
      const auto& parent = alive[cd.parent];
      if (cd.token == kEosId) {
        finished.push_back({parent.tokens, cd.score, step + 1, true});
      } else {
        Live h{parent.state, parent.tokens, cd.score};
        h.tokens.push_back(cd.token);
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }
  for (auto& h : alive) finished.push_back({h.tokens, h.log_prob, max_len, false});

  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (finished[i].normalized_score() > finished[best].normalized_score()) best = i;
  }
  return finished[best];
}

std::vector<std::vector<double>> cached_decoder_log_probs(const TransformerModel& model, std::span<const int> src,
                                                          std::span<const int> dec_in) {
  CachedDecoder dec(model);
  auto row = dec.new_row(dec.add_source(src));
  std::vector<RowState*> ptrs{&row};
  std::vector<std::vector<double>> out;
  for (int tok : dec_in) {
    std::vector<int> t{tok};
    Mat logp = dec.step(ptrs, t);
    out.emplace_back(logp.data(), logp.data() + logp.cols());
  }
  return out;
}

}  // namespace udmt
