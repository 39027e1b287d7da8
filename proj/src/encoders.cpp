#include "spn/encoders.hpp"

#include <cmath>

#include "spn/errors.hpp"

namespace spn {

AttentionEncoder::AttentionEncoder(ParamStore& store, const std::string& prefix,
                                   int seq_len, int feat_dim, int width, int heads,
                                   Rng& rng)
    : store_(&store), seq_len_(seq_len), feat_dim_(feat_dim), width_(width),
      heads_(heads) {
  if (seq_len < 1 || feat_dim < 1 || width < 1 || heads < 1)
    throw ConfigError("attention encoder dims must be positive");
  if (width % heads != 0)
    throw ConfigError("attention width " + std::to_string(width) +
                      " not divisible by " + std::to_string(heads) + " heads");
  const double in_b = 1.0 / std::sqrt(static_cast<double>(feat_dim));
  const double w_b = 1.0 / std::sqrt(static_cast<double>(width));
  w_in_ = store.add(prefix + ".w_in", uniform_init(rng, {feat_dim, width}, in_b));
  b_in_ = store.add(prefix + ".b_in", uniform_init(rng, {1, width}, in_b));
  // Positional offsets sized so attention can prefer frames by index from the
  // first steps (buried offsets leave mean pooling blind to frame order), yet
  // small enough that the payload still dominates the value path.
  pos_ = store.add(prefix + ".pos", uniform_init(rng, {seq_len, width}, 0.35));
  // Wider query/key than 1/sqrt(fan-in): with near-zero attention logits the
  // softmax is uniform and mean pooling reduces every sequence to its frame
  // average, hiding frame-to-frame structure from the rest of the network.
  // Content-selective attention at the start keeps that structure readable.
  wq_ = store.add(prefix + ".wq", uniform_init(rng, {width, width}, 4.0 * w_b));
  wk_ = store.add(prefix + ".wk", uniform_init(rng, {width, width}, 4.0 * w_b));
  wv_ = store.add(prefix + ".wv", uniform_init(rng, {width, width}, w_b));
  wo_ = store.add(prefix + ".wo", uniform_init(rng, {width, width}, w_b));
}

Var AttentionEncoder::forward(const Var& x) const {
  namespace a = ad;
  if (x->value.shape != std::vector<std::int64_t>({seq_len_, feat_dim_}))
    throw ShapeError("attention encoder expects {" + std::to_string(seq_len_) + ", " +
                     std::to_string(feat_dim_) + "}, got " + shape_str(x->value.shape));
  const Var h0 = a::add(
      a::add_rowvec(a::matmul(x, store_->var(w_in_)), store_->var(b_in_)),
      store_->var(pos_));
  const Var q = a::matmul(h0, store_->var(wq_));
  const Var k = a::matmul(h0, store_->var(wk_));
  const Var v = a::matmul(h0, store_->var(wv_));
  const int dh = width_ / heads_;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const Var qh = a::slice_cols(q, h * dh, (h + 1) * dh);
    const Var kh = a::slice_cols(k, h * dh, (h + 1) * dh);
    const Var vh = a::slice_cols(v, h * dh, (h + 1) * dh);
    const Var att = a::softmax_rows(a::scale(a::matmul(qh, a::transpose(kh)), inv_sqrt_dh));
    heads.push_back(a::matmul(att, vh));
  }
  const Var mixed = a::matmul(a::concat_cols(heads), store_->var(wo_));
  return a::mean_cols(a::add(h0, mixed));
}

ConvEncoder::ConvEncoder(ParamStore& store, const std::string& prefix, int in_channels,
                         int size, int base_channels, Rng& rng)
    : store_(&store), in_ch_(in_channels), size_(size), base_(base_channels) {
  if (in_channels < 1 || base_channels < 1)
    throw ConfigError("conv encoder channels must be positive");
  if (size < 8 || size % 8 != 0)
    throw ConfigError("conv encoder size must be a positive multiple of 8, got " +
                      std::to_string(size));
  const int c = base_channels;
  auto bound = [](int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  w1_ = store.add(prefix + ".w1", uniform_init(rng, {c, in_channels, 3, 3},
                                               bound(in_channels * 9)));
  b1_ = store.add(prefix + ".b1", uniform_init(rng, {c}, bound(in_channels * 9)));
  w2_ = store.add(prefix + ".w2", uniform_init(rng, {2 * c, c, 3, 3}, bound(c * 9)));
  b2_ = store.add(prefix + ".b2", uniform_init(rng, {2 * c}, bound(c * 9)));
  w3_ = store.add(prefix + ".w3",
                  uniform_init(rng, {2 * c, 2 * c, 3, 3}, bound(2 * c * 9)));
  b3_ = store.add(prefix + ".b3", uniform_init(rng, {2 * c}, bound(2 * c * 9)));
}

Var ConvEncoder::forward(const Var& x) const {
  namespace a = ad;
  if (x->value.shape != std::vector<std::int64_t>({in_ch_, size_, size_}))
    throw ShapeError("conv encoder expects {" + std::to_string(in_ch_) + ", " +
                     std::to_string(size_) + ", " + std::to_string(size_) + "}, got " +
                     shape_str(x->value.shape));
  Var h = a::avg_pool2x2(a::relu(a::conv2d(x, store_->var(w1_), store_->var(b1_), 1, 1)));
  h = a::avg_pool2x2(a::relu(a::conv2d(h, store_->var(w2_), store_->var(b2_), 1, 1)));
  h = a::avg_pool2x2(a::relu(a::conv2d(h, store_->var(w3_), store_->var(b3_), 1, 1)));
  const std::int64_t ch = h->value.shape[0];
  const std::int64_t cells = h->value.shape[1] * h->value.shape[2];
  return a::transpose(a::mean_rows(a::reshape(h, {ch, cells})));
}

const char* modality_name(int m) {
  switch (m) {
    case 0: return "ctx";
    case 1: return "pose";
    case 2: return "traj";
    case 3: return "ego";
    case 4: return "social";
    default: throw RangeError("modality index " + std::to_string(m) + " out of range");
  }
}

DenseArray ctx_features(const Sample& s) { return s.ctx; }

DenseArray pose_features(const Sample& s) {
  if (s.pose_obs.rank() != 3)
    throw ShapeError("pose_obs must be rank 3, got " + shape_str(s.pose_obs.shape));
  const std::int64_t t = s.pose_obs.shape[0];
  const std::int64_t j = s.pose_obs.shape[1];
  if (s.img_w <= 0 || s.img_h <= 0) throw InvalidValueError("img_size must be positive");
  DenseArray out({t, j * 2}, s.pose_obs.data);
  const double iw = 1.0 / static_cast<double>(s.img_w);
  const double ih = 1.0 / static_cast<double>(s.img_h);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] *= (i % 2 == 0) ? iw : ih;
  return out;
}

DenseArray traj_features(const Sample& s) {
  require_rank2(s.traj_obs, "traj_obs");
  if (s.traj_obs.cols() != 4) throw ShapeError("traj_obs must have 4 columns");
  if (s.img_w <= 0 || s.img_h <= 0) throw InvalidValueError("img_size must be positive");
  DenseArray out = s.traj_obs;
  const double iw = 1.0 / static_cast<double>(s.img_w);
  const double ih = 1.0 / static_cast<double>(s.img_h);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] *= (i % 2 == 0) ? iw : ih;
  return out;
}

DenseArray ego_features(const Sample& s) {
  require_rank2(s.ego_obs, "ego_obs");
  DenseArray out = s.ego_obs;
  for (double& v : out.data) v *= 0.2;
  return out;
}

DenseArray social_features(const Sample& s) {
  require_rank2(s.social, "social");
  DenseArray out = s.social;
  for (double& v : out.data) v *= 0.2;
  return out;
}

}  // namespace spn
