#include "freeml/encode.hpp"

#include <cctype>
#include <cmath>
#include <set>

namespace freeml {

namespace {
constexpr double kLnEps = 1e-5;
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  std::set<std::string> seen;
  for (const auto& text : texts) {
    for (auto& tok : tokenize_text(text)) seen.insert(std::move(tok));
  }
  Vocabulary v;
  int next = 3;
  for (const auto& tok : seen) v.ids_.emplace(tok, next++);
  v.size_ = next;
  return v;
}

int Vocabulary::id_of(std::string_view token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  j["<pad>"] = kPad;
  j["<unk>"] = kUnk;
  j["<bos>"] = kBos;
  for (const auto& [tok, id] : ids_) j[tok] = id;
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  int max_id = 2;
  for (auto it = j.begin(); it != j.end(); ++it) {
    int id = it.value().get<int>();
    max_id = std::max(max_id, id);
    if (it.key() == "<pad>" || it.key() == "<unk>" || it.key() == "<bos>") continue;
    if (id < 3) throw std::invalid_argument("vocabulary id below reserved range");
    v.ids_.emplace(it.key(), id);
  }
  v.size_ = max_id + 1;
  if (static_cast<int>(v.ids_.size()) + 3 != v.size_) {
    throw std::invalid_argument("vocabulary ids are not dense");
  }
  return v;
}

std::uint64_t Vocabulary::content_hash() const {
  HashStream hs;
  for (const auto& [tok, id] : ids_) {
    hs.field(tok).field(std::to_string(id));
  }
  return hs.digest();
}

std::vector<std::string> tokenize_text(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isalpha(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else if (std::isspace(c)) {
      flush();
    } else {
      // digits and punctuation become per-character tokens
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab, int max_len) {
  if (text.empty()) throw std::invalid_argument("cannot tokenize empty text");
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  std::vector<int> ids;
  ids.push_back(Vocabulary::kBos);
  for (const auto& tok : tokenize_text(text)) {
    if (static_cast<int>(ids.size()) >= max_len) break;
    ids.push_back(vocab.id_of(tok));
  }
  if (static_cast<int>(ids.size()) > max_len) ids.resize(max_len);
  return ids;
}

void EncoderConfig::validate() const {
  if (vocab_size < 3) throw std::invalid_argument("vocab_size must cover reserved tokens");
  if (dim < 1 || layers < 0 || heads < 1 || ffn_dim < 1 || max_positions < 1) {
    throw std::invalid_argument("encoder dimensions must be positive");
  }
  if (dim % heads != 0) throw std::invalid_argument("dim must be divisible by heads");
}

template <class T>
EncoderParams<T> EncoderParams<T>::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  EncoderParams<T> p;
  p.cfg = cfg;
  p.token_emb.resize(cfg.vocab_size, cfg.dim);
  init_fan_in<T>(rng, p.token_emb, cfg.dim);
  p.pos_emb.resize(cfg.max_positions, cfg.dim);
  init_fan_in<T>(rng, p.pos_emb, cfg.dim);
  p.blocks.resize(cfg.layers);
  for (auto& b : p.blocks) {
    b.ln1_gain = Vec<T>::Ones(cfg.dim);
    b.ln1_bias = Vec<T>::Zero(cfg.dim);
    for (Mat<T>* w : {&b.wq, &b.wk, &b.wv, &b.wo}) {
      w->resize(cfg.dim, cfg.dim);
      init_fan_in<T>(rng, *w, cfg.dim);
    }
    b.bq = Vec<T>::Zero(cfg.dim);
    b.bk = Vec<T>::Zero(cfg.dim);
    b.bv = Vec<T>::Zero(cfg.dim);
    b.bo = Vec<T>::Zero(cfg.dim);
    b.ln2_gain = Vec<T>::Ones(cfg.dim);
    b.ln2_bias = Vec<T>::Zero(cfg.dim);
    b.w1.resize(cfg.dim, cfg.ffn_dim);
    init_fan_in<T>(rng, b.w1, cfg.dim);
    b.b1 = Vec<T>::Zero(cfg.ffn_dim);
    b.w2.resize(cfg.ffn_dim, cfg.dim);
    init_fan_in<T>(rng, b.w2, cfg.ffn_dim);
    b.b2 = Vec<T>::Zero(cfg.dim);
  }
  return p;
}

template <class T>
EncoderParams<T> EncoderParams<T>::zeros_like(const EncoderConfig& cfg) {
  cfg.validate();
  EncoderParams<T> p;
  p.cfg = cfg;
  p.token_emb = Mat<T>::Zero(cfg.vocab_size, cfg.dim);
  p.pos_emb = Mat<T>::Zero(cfg.max_positions, cfg.dim);
  p.blocks.resize(cfg.layers);
  for (auto& b : p.blocks) {
    b.ln1_gain = Vec<T>::Zero(cfg.dim);
    b.ln1_bias = Vec<T>::Zero(cfg.dim);
    b.wq = Mat<T>::Zero(cfg.dim, cfg.dim);
    b.wk = Mat<T>::Zero(cfg.dim, cfg.dim);
    b.wv = Mat<T>::Zero(cfg.dim, cfg.dim);
    b.wo = Mat<T>::Zero(cfg.dim, cfg.dim);
    b.bq = Vec<T>::Zero(cfg.dim);
    b.bk = Vec<T>::Zero(cfg.dim);
    b.bv = Vec<T>::Zero(cfg.dim);
    b.bo = Vec<T>::Zero(cfg.dim);
    b.ln2_gain = Vec<T>::Zero(cfg.dim);
    b.ln2_bias = Vec<T>::Zero(cfg.dim);
    b.w1 = Mat<T>::Zero(cfg.dim, cfg.ffn_dim);
    b.b1 = Vec<T>::Zero(cfg.ffn_dim);
    b.w2 = Mat<T>::Zero(cfg.ffn_dim, cfg.dim);
    b.b2 = Vec<T>::Zero(cfg.dim);
  }
  return p;
}

template <class T>
void EncoderParams<T>::for_each_tensor(const TensorVisitor<T>& visit) {
  visit("encoder.token_emb", token_emb.data(), token_emb.size());
  visit("encoder.pos_emb", pos_emb.data(), pos_emb.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    std::string base = "encoder.block" + std::to_string(i) + ".";
    visit(base + "ln1_gain", b.ln1_gain.data(), b.ln1_gain.size());
    visit(base + "ln1_bias", b.ln1_bias.data(), b.ln1_bias.size());
    visit(base + "wq", b.wq.data(), b.wq.size());
    visit(base + "bq", b.bq.data(), b.bq.size());
    visit(base + "wk", b.wk.data(), b.wk.size());
    visit(base + "bk", b.bk.data(), b.bk.size());
    visit(base + "wv", b.wv.data(), b.wv.size());
    visit(base + "bv", b.bv.data(), b.bv.size());
    visit(base + "wo", b.wo.data(), b.wo.size());
    visit(base + "bo", b.bo.data(), b.bo.size());
    visit(base + "ln2_gain", b.ln2_gain.data(), b.ln2_gain.size());
    visit(base + "ln2_bias", b.ln2_bias.data(), b.ln2_bias.size());
    visit(base + "w1", b.w1.data(), b.w1.size());
    visit(base + "b1", b.b1.data(), b.b1.size());
    visit(base + "w2", b.w2.data(), b.w2.size());
    visit(base + "b2", b.b2.data(), b.b2.size());
  }
}

template <class T>
void EncoderParams<T>::for_each_tensor_const(const TensorVisitor<const T>& visit) const {
  const_cast<EncoderParams<T>*>(this)->for_each_tensor(
      [&](const std::string& name, T* data, std::size_t size) { visit(name, data, size); });
}

template <class T>
std::size_t EncoderParams<T>::parameter_count() const {
  std::size_t n = 0;
  const_cast<EncoderParams<T>*>(this)->for_each_tensor(
      [&](const std::string&, T*, std::size_t size) { n += size; });
  return n;
}

namespace {

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <class T>
T gelu_grad(T x) {
  T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
  return cdf + x * pdf;
}

// y = gain .* xhat + bias, where xhat = (x - mean) / sqrt(var + eps).
// Caches xhat and 1/sqrt(var + eps) per row.
template <class T>
void layer_norm(const Mat<T>& x, const Vec<T>& gain, const Vec<T>& bias, Mat<T>& hat,
                Vec<T>& inv_std, Mat<T>& out) {
  const auto rows = x.rows();
  const auto cols = x.cols();
  hat.resize(rows, cols);
  inv_std.resize(rows);
  out.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    T mu = x.row(r).mean();
    T var = (x.row(r).array() - mu).square().mean();
    T inv = T(1) / std::sqrt(var + T(kLnEps));
    inv_std(r) = inv;
    hat.row(r) = ((x.row(r).array() - mu) * inv).matrix();
    out.row(r) = (hat.row(r).array() * gain.transpose().array() + bias.transpose().array()).matrix();
  }
}

// Backward through layer norm given upstream d(out); returns d(x) and
// accumulates gain/bias gradients.
template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dout, const Mat<T>& hat, const Vec<T>& inv_std,
                           const Vec<T>& gain, Vec<T>& ggain, Vec<T>& gbias) {
  const auto rows = dout.rows();
  const auto cols = dout.cols();
  Mat<T> dx(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto dy = dout.row(r).array();
    auto xh = hat.row(r).array();
    ggain.array() += (dy * xh).transpose();
    gbias.array() += dy.transpose();
    auto dhat = dy * gain.transpose().array();
    T m1 = dhat.mean();
    T m2 = (dhat * xh).mean();
    dx.row(r) = (inv_std(r) * (dhat - m1 - xh * m2)).matrix();
  }
  return dx;
}

template <class T>
void softmax_rows_masked(Mat<T>& scores, const std::vector<char>& nonpad) {
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    if (!nonpad[static_cast<std::size_t>(j)]) {
      scores.col(j).setConstant(T(-1e30));
    }
  }
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    T mx = scores.row(r).maxCoeff();
    scores.row(r) = (scores.row(r).array() - mx).exp();
    T sum = scores.row(r).sum();
    scores.row(r) /= sum;
  }
}

void validate_tokens(std::span<const int> tokens, const EncoderConfig& cfg) {
  if (tokens.empty()) throw std::invalid_argument("token sequence must be nonempty");
  if (static_cast<int>(tokens.size()) > cfg.max_positions) {
    throw std::invalid_argument("token sequence longer than max_positions");
  }
  for (int id : tokens) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw std::invalid_argument("token id " + std::to_string(id) + " outside vocabulary of " +
                                  std::to_string(cfg.vocab_size));
    }
  }
}

}  // namespace

template <class T>
const Vec<T>& encode(std::span<const int> tokens, const EncoderParams<T>& params,
                     EncoderWorkspace<T>& ws) {
  const auto& cfg = params.cfg;
  validate_tokens(tokens, cfg);

  const int S = static_cast<int>(tokens.size());
  const int D = cfg.dim;
  const int H = cfg.heads;
  const int Dh = D / H;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(Dh));

  ws.tokens.assign(tokens.begin(), tokens.end());
  ws.nonpad.resize(static_cast<std::size_t>(S));
  ws.nonpad_count = 0;
  for (int i = 0; i < S; ++i) {
    ws.nonpad[static_cast<std::size_t>(i)] = tokens[static_cast<std::size_t>(i)] != Vocabulary::kPad;
    ws.nonpad_count += ws.nonpad[static_cast<std::size_t>(i)];
  }
  if (ws.nonpad_count == 0) throw std::invalid_argument("all tokens are padding");

  Mat<T> h(S, D);
  for (int i = 0; i < S; ++i) {
    h.row(i) = params.token_emb.row(tokens[static_cast<std::size_t>(i)]) + params.pos_emb.row(i);
  }

  ws.blocks.resize(params.blocks.size());
  for (std::size_t bi = 0; bi < params.blocks.size(); ++bi) {
    const auto& b = params.blocks[bi];
    auto& c = ws.blocks[bi];
    c.x_in = h;

    Mat<T> a;
    layer_norm(c.x_in, b.ln1_gain, b.ln1_bias, c.ln1_hat, c.ln1_inv, a);

    c.q.noalias() = a * b.wq;
    c.q.rowwise() += b.bq.transpose();
    c.k.noalias() = a * b.wk;
    c.k.rowwise() += b.bk.transpose();
    c.v.noalias() = a * b.wv;
    c.v.rowwise() += b.bv.transpose();

    c.attn_w.assign(static_cast<std::size_t>(H), Mat<T>());
    c.attn_concat.resize(S, D);
    for (int hd = 0; hd < H; ++hd) {
      auto qh = c.q.middleCols(hd * Dh, Dh);
      auto kh = c.k.middleCols(hd * Dh, Dh);
      auto vh = c.v.middleCols(hd * Dh, Dh);
      Mat<T>& w = c.attn_w[static_cast<std::size_t>(hd)];
      w.noalias() = qh * kh.transpose();
      w *= inv_sqrt_dh;
      softmax_rows_masked(w, ws.nonpad);
      c.attn_concat.middleCols(hd * Dh, Dh).noalias() = w * vh;
    }

    Mat<T> attn = c.attn_concat * b.wo;
    attn.rowwise() += b.bo.transpose();
    c.x_mid = c.x_in + attn;

    Mat<T> bnorm;
    layer_norm(c.x_mid, b.ln2_gain, b.ln2_bias, c.ln2_hat, c.ln2_inv, bnorm);
    c.u.noalias() = bnorm * b.w1;
    c.u.rowwise() += b.b1.transpose();
    c.act = c.u.unaryExpr([](T x) { return gelu(x); });
    Mat<T> f = c.act * b.w2;
    f.rowwise() += b.b2.transpose();
    h = c.x_mid + f;
  }

  ws.h_final = std::move(h);
  ws.pooled = Vec<T>::Zero(D);
  for (int i = 0; i < S; ++i) {
    if (ws.nonpad[static_cast<std::size_t>(i)]) ws.pooled += ws.h_final.row(i).transpose();
  }
  ws.pooled /= static_cast<T>(ws.nonpad_count);
  return ws.pooled;
}

template <class T>
Vec<T> encode(std::span<const int> tokens, const EncoderParams<T>& params) {
  EncoderWorkspace<T> ws;
  return encode(tokens, params, ws);
}

template <class T>
void encode_backward(const EncoderWorkspace<T>& ws, const EncoderParams<T>& params,
                     const Vec<T>& upstream, EncoderParams<T>& grads) {
  const auto& cfg = params.cfg;
  const int S = static_cast<int>(ws.tokens.size());
  const int D = cfg.dim;
  const int H = cfg.heads;
  const int Dh = D / H;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(Dh));
  const T inv_count = T(1) / static_cast<T>(ws.nonpad_count);

  Mat<T> dh = Mat<T>::Zero(S, D);
  for (int i = 0; i < S; ++i) {
    if (ws.nonpad[static_cast<std::size_t>(i)]) dh.row(i) = upstream.transpose() * inv_count;
  }

  for (int bi = static_cast<int>(params.blocks.size()) - 1; bi >= 0; --bi) {
    const auto& b = params.blocks[static_cast<std::size_t>(bi)];
    auto& gb = grads.blocks[static_cast<std::size_t>(bi)];
    const auto& c = ws.blocks[static_cast<std::size_t>(bi)];

    // FFN sublayer
    Mat<T> bnorm = ((c.ln2_hat.array().rowwise() * b.ln2_gain.transpose().array()).rowwise() +
                    b.ln2_bias.transpose().array())
                       .matrix();
    const Mat<T>& df = dh;
    Mat<T> dact = df * b.w2.transpose();
    gb.w2.noalias() += c.act.transpose() * df;
    gb.b2 += df.colwise().sum().transpose();
    Mat<T> du =
        (dact.array() * c.u.unaryExpr([](T x) { return gelu_grad(x); }).array()).matrix();
    gb.w1.noalias() += bnorm.transpose() * du;
    gb.b1 += du.colwise().sum().transpose();
    Mat<T> dbnorm = du * b.w1.transpose();
    Mat<T> dx_mid =
        dh + layer_norm_backward(dbnorm, c.ln2_hat, c.ln2_inv, b.ln2_gain, gb.ln2_gain, gb.ln2_bias);

    // attention sublayer
    Mat<T> a = ((c.ln1_hat.array().rowwise() * b.ln1_gain.transpose().array()).rowwise() +
                b.ln1_bias.transpose().array())
                   .matrix();
    const Mat<T>& dattn_out = dx_mid;
    Mat<T> do_concat = dattn_out * b.wo.transpose();
    gb.wo.noalias() += c.attn_concat.transpose() * dattn_out;
    gb.bo += dattn_out.colwise().sum().transpose();

    Mat<T> dq(S, D), dk(S, D), dv(S, D);
    for (int hd = 0; hd < H; ++hd) {
      auto qh = c.q.middleCols(hd * Dh, Dh);
      auto kh = c.k.middleCols(hd * Dh, Dh);
      auto vh = c.v.middleCols(hd * Dh, Dh);
      const Mat<T>& w = c.attn_w[static_cast<std::size_t>(hd)];
      auto doh = do_concat.middleCols(hd * Dh, Dh);

      Mat<T> dw = doh * vh.transpose();
      dv.middleCols(hd * Dh, Dh).noalias() = w.transpose() * doh;

      Mat<T> dscores(S, S);
      for (int r = 0; r < S; ++r) {
        T dot = dw.row(r).cwiseProduct(w.row(r)).sum();
        dscores.row(r) = (w.row(r).array() * (dw.row(r).array() - dot)).matrix();
      }
      dscores *= inv_sqrt_dh;
      dq.middleCols(hd * Dh, Dh).noalias() = dscores * kh;
      dk.middleCols(hd * Dh, Dh).noalias() = dscores.transpose() * qh;
    }

    Mat<T> da = dq * b.wq.transpose();
    da.noalias() += dk * b.wk.transpose();
    da.noalias() += dv * b.wv.transpose();
    gb.wq.noalias() += a.transpose() * dq;
    gb.bq += dq.colwise().sum().transpose();
    gb.wk.noalias() += a.transpose() * dk;
    gb.bk += dk.colwise().sum().transpose();
    gb.wv.noalias() += a.transpose() * dv;
    gb.bv += dv.colwise().sum().transpose();

    dh = dx_mid +
         layer_norm_backward(da, c.ln1_hat, c.ln1_inv, b.ln1_gain, gb.ln1_gain, gb.ln1_bias);
  }

  for (int i = 0; i < S; ++i) {
    grads.token_emb.row(ws.tokens[static_cast<std::size_t>(i)]) += dh.row(i);
    grads.pos_emb.row(i) += dh.row(i);
  }
}

template <class T>
void encode_backward(std::span<const int> tokens, const EncoderParams<T>& params,
                     const Vec<T>& upstream, EncoderParams<T>& grads) {
  EncoderWorkspace<T> ws;
  encode(tokens, params, ws);
  encode_backward(ws, params, upstream, grads);
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template const Vec<float>& encode(std::span<const int>, const EncoderParams<float>&,
                                  EncoderWorkspace<float>&);
template const Vec<double>& encode(std::span<const int>, const EncoderParams<double>&,
                                   EncoderWorkspace<double>&);
template Vec<float> encode(std::span<const int>, const EncoderParams<float>&);
template Vec<double> encode(std::span<const int>, const EncoderParams<double>&);
template void encode_backward(const EncoderWorkspace<float>&, const EncoderParams<float>&,
                              const Vec<float>&, EncoderParams<float>&);
template void encode_backward(const EncoderWorkspace<double>&, const EncoderParams<double>&,
                              const Vec<double>&, EncoderParams<double>&);
template void encode_backward(std::span<const int>, const EncoderParams<float>&,
                              const Vec<float>&, EncoderParams<float>&);
template void encode_backward(std::span<const int>, const EncoderParams<double>&,
                              const Vec<double>&, EncoderParams<double>&);

}  // namespace freeml
