#include "freeml/temporal.hpp"

#include <cmath>
#include <stdexcept>

namespace freeml {

template <class T>
LstmParams<T> LstmParams<T>::init(int input_dim, int hidden, std::uint64_t seed) {
  if (input_dim < 1 || hidden < 1) throw std::invalid_argument("lstm dimensions must be positive");
  Rng rng(seed);
  LstmParams<T> p;
  p.w_input.resize(input_dim, 4 * hidden);
  init_fan_in<T>(rng, p.w_input, input_dim);
  p.w_recur.resize(hidden, 4 * hidden);
  init_fan_in<T>(rng, p.w_recur, hidden);
  p.bias = Vec<T>::Zero(4 * hidden);
  p.bias.segment(hidden, hidden).setOnes();  // forget gate
  p.head_w.resize(hidden);
  init_fan_in<T>(rng, p.head_w, hidden);
  p.head_b = T(0);
  return p;
}

template <class T>
LstmParams<T> LstmParams<T>::zeros_like(int input_dim, int hidden) {
  LstmParams<T> p;
  p.w_input = Mat<T>::Zero(input_dim, 4 * hidden);
  p.w_recur = Mat<T>::Zero(hidden, 4 * hidden);
  p.bias = Vec<T>::Zero(4 * hidden);
  p.head_w = Vec<T>::Zero(hidden);
  p.head_b = T(0);
  return p;
}

template <class T>
void LstmParams<T>::for_each_tensor(const TensorVisitor<T>& visit) {
  visit("lstm.w_input", w_input.data(), w_input.size());
  visit("lstm.w_recur", w_recur.data(), w_recur.size());
  visit("lstm.bias", bias.data(), bias.size());
  visit("lstm.head_w", head_w.data(), head_w.size());
  visit("lstm.head_b", &head_b, 1);
}

template <class T>
void Window<T>::validate() const {
  auto w = static_cast<std::size_t>(embeddings.rows());
  if (w == 0) throw std::invalid_argument("window must contain at least one step");
  if (labels.size() != w || mask.size() != w) {
    throw std::invalid_argument("window labels/mask must match the step count");
  }
}

namespace {

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <class T>
Vec<T> lstm_forward(const Mat<T>& embeddings, const LstmParams<T>& params, LstmCache<T>* cache) {
  const int steps = static_cast<int>(embeddings.rows());
  const int hidden = params.hidden();
  if (embeddings.cols() != params.w_input.rows()) {
    throw std::invalid_argument("embedding dimension does not match lstm input dimension");
  }

  if (cache) {
    cache->gate_i.resize(steps, hidden);
    cache->gate_f.resize(steps, hidden);
    cache->gate_g.resize(steps, hidden);
    cache->gate_o.resize(steps, hidden);
    cache->cell.resize(steps, hidden);
    cache->tanh_cell.resize(steps, hidden);
    cache->hidden.resize(steps, hidden);
  }

  Vec<T> preds(steps);
  Eigen::Matrix<T, 1, Eigen::Dynamic> h = Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(hidden);
  Eigen::Matrix<T, 1, Eigen::Dynamic> c = Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(hidden);

  for (int t = 0; t < steps; ++t) {
    Eigen::Matrix<T, 1, Eigen::Dynamic> a = embeddings.row(t) * params.w_input;
    a.noalias() += h * params.w_recur;
    a += params.bias.transpose();

    auto gi = a.segment(0, hidden).unaryExpr([](T x) { return sigmoid(x); });
    auto gf = a.segment(hidden, hidden).unaryExpr([](T x) { return sigmoid(x); });
    auto gg = a.segment(2 * hidden, hidden).array().tanh();
    auto go = a.segment(3 * hidden, hidden).unaryExpr([](T x) { return sigmoid(x); });

    c = (gf.array() * c.array() + gi.array() * gg).matrix();
    Eigen::Matrix<T, 1, Eigen::Dynamic> tc = c.array().tanh().matrix();
    h = (go.array() * tc.array()).matrix();

    if (cache) {
      cache->gate_i.row(t) = gi;
      cache->gate_f.row(t) = gf;
      cache->gate_g.row(t) = gg.matrix();
      cache->gate_o.row(t) = go;
      cache->cell.row(t) = c;
      cache->tanh_cell.row(t) = tc;
      cache->hidden.row(t) = h;
    }
    preds(t) = h.dot(params.head_w.transpose()) + params.head_b;
  }
  return preds;
}

template <class T>
Vec<T> forward(const Window<T>& window, const LstmParams<T>& params) {
  window.validate();
  return lstm_forward(window.embeddings, params);
}

template <class T>
Mat<T> lstm_backward(const Mat<T>& embeddings, const LstmParams<T>& params,
                     const LstmCache<T>& cache, const Vec<T>& upstream, LstmParams<T>& grads) {
  const int steps = static_cast<int>(embeddings.rows());
  const int hidden = params.hidden();
  if (upstream.size() != steps) {
    throw std::invalid_argument("upstream gradient must have one entry per step");
  }

  Mat<T> dx = Mat<T>::Zero(steps, embeddings.cols());
  using RowV = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  RowV dh_carry = RowV::Zero(hidden);
  RowV dc_carry = RowV::Zero(hidden);

  for (int t = steps - 1; t >= 0; --t) {
    RowV dh = dh_carry;
    if (upstream(t) != T(0)) {
      dh += upstream(t) * params.head_w.transpose();
      grads.head_w += upstream(t) * cache.hidden.row(t).transpose();
      grads.head_b += upstream(t);
    }

    auto gi = cache.gate_i.row(t).array();
    auto gf = cache.gate_f.row(t).array();
    auto gg = cache.gate_g.row(t).array();
    auto go = cache.gate_o.row(t).array();
    auto tc = cache.tanh_cell.row(t).array();

    RowV do_ = (dh.array() * tc).matrix();
    RowV dc = (dh.array() * go * (T(1) - tc * tc)).matrix() + dc_carry;

    RowV c_prev = RowV::Zero(hidden);
    RowV h_prev = RowV::Zero(hidden);
    if (t > 0) {
      c_prev = cache.cell.row(t - 1);
      h_prev = cache.hidden.row(t - 1);
    }

    RowV da(4 * hidden);
    da.segment(0, hidden) = (dc.array() * gg * gi * (T(1) - gi)).matrix();
    da.segment(hidden, hidden) = (dc.array() * c_prev.array() * gf * (T(1) - gf)).matrix();
    da.segment(2 * hidden, hidden) = (dc.array() * gi * (T(1) - gg * gg)).matrix();
    da.segment(3 * hidden, hidden) = (do_.array() * go * (T(1) - go)).matrix();

    grads.w_input.noalias() += embeddings.row(t).transpose() * da;
    grads.w_recur.noalias() += h_prev.transpose() * da;
    grads.bias += da.transpose();

    dx.row(t).noalias() = da * params.w_input.transpose();
    dh_carry.noalias() = da * params.w_recur.transpose();
    dc_carry = (dc.array() * gf).matrix();
  }
  return dx;
}

template struct LstmParams<float>;
template struct LstmParams<double>;
template struct Window<float>;
template struct Window<double>;
template Vec<float> lstm_forward(const Mat<float>&, const LstmParams<float>&, LstmCache<float>*);
template Vec<double> lstm_forward(const Mat<double>&, const LstmParams<double>&,
                                  LstmCache<double>*);
template Vec<float> forward(const Window<float>&, const LstmParams<float>&);
template Vec<double> forward(const Window<double>&, const LstmParams<double>&);
template Mat<float> lstm_backward(const Mat<float>&, const LstmParams<float>&,
                                  const LstmCache<float>&, const Vec<float>&, LstmParams<float>&);
template Mat<double> lstm_backward(const Mat<double>&, const LstmParams<double>&,
                                   const LstmCache<double>&, const Vec<double>&,
                                   LstmParams<double>&);

}  // namespace freeml
