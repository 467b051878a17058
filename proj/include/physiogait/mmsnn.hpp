#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "physiogait/autodiff.hpp"
#include "physiogait/core.hpp"

// Multi-modal Siamese network: per-modality encoders into a shared 40-dim
// common space per encoder, concatenated embedding, softmax identity head,
// and the weighted contrastive + identification training objective.
namespace physiogait::mmsnn {

enum class Modality { Acc, Ppg, Hr, Br, Eda };
enum class EncoderKind { ImageCnn, SequenceLstm };

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);
const char* encoder_kind_name(EncoderKind k);
EncoderKind encoder_kind_from_name(const std::string& name);

struct EncoderSpec {
  EncoderKind kind = EncoderKind::ImageCnn;
  Modality modality = Modality::Acc;
};

constexpr int kSeqLen = 128;
constexpr int kEmbedPerEncoder = 40;
// Physiological sequences are cut from a span this long centered on the
// gesture (shifted to stay inside the stream); PPG uses the gesture window
// itself since its information lives at beat scale.
constexpr double kContextSpanS = 32.0;

// One gesture observation with the per-encoder input buffers materialized:
// an image buffer is 3*155*220 floats (row-major CHW), a sequence buffer is
// kSeqLen floats scaled by fixed per-modality affine constants (levels stay
// comparable across windows). inputs[i] feeds encoder i.
struct EncodedWindow {
  int class_index = -1;
  int gesture_label = -1;
  std::vector<std::vector<float>> inputs;
};

// Everything needed to encode one subject's windows.
struct SubjectStreams {
  int class_index = -1;
  SensorStream acc_x, acc_y, acc_z;  // 32 Hz
  SensorStream ppg;                  // 64 Hz
  SensorStream hr;                   // derived, 4 Hz
  SensorStream br;                   // derived, 1 Hz
  SensorStream eda;                  // 4 Hz
  std::vector<GestureWindow> windows;
};

std::vector<EncodedWindow> encode_windows(const SubjectStreams& subject,
                                          const std::vector<EncoderSpec>& specs);

// Pair of dataset indices; similar pairs share subject and gesture label.
struct TrainingPair {
  std::size_t left = 0, right = 0;
  bool similar = false;
  int left_identity = -1, right_identity = -1;
};

// Samples `episodes` anchor windows; each anchor gets a same-subject
// same-gesture partner with probability ratio_similar, otherwise a
// different-subject partner (any gesture). Same-subject different-gesture
// pairs never occur.
std::vector<TrainingPair> make_pairs(const std::vector<EncodedWindow>& data,
                                     int episodes, double ratio_similar,
                                     Rng& rng);

// Restricted variant: anchors and partners drawn only from pool (indices
// into data, which stay global in the returned pairs).
std::vector<TrainingPair> make_pairs(const std::vector<EncodedWindow>& data,
                                     const std::vector<std::size_t>& pool,
                                     int episodes, double ratio_similar,
                                     Rng& rng);

// Width reduction and input geometry; tests shrink everything to keep
// finite-difference checks fast. dim(base) = max(1, base / width_div).
struct ModelDims {
  int width_div = 1;
  int image_h = 155;
  int image_w = 220;
  int seq_len = kSeqLen;

  int dim(int base) const {
    int d = base / (width_div < 1 ? 1 : width_div);
    return d < 1 ? 1 : d;
  }
};

template <class S>
struct Model {
  std::vector<EncoderSpec> specs;
  std::vector<autodiff::Net<S>> encoders;  // shared by both branches
  autodiff::Tensor<S> w;                   // [n_classes, embed_dim]
  int n_classes = 0;
  ModelDims dims;
  double margin = 1.0;
  double lambda_c = 1.0;
  double lambda_id = 1.0;

  int embed_dim() const {
    return static_cast<int>(encoders.size()) * dims.dim(kEmbedPerEncoder);
  }
  std::vector<autodiff::Tensor<S>*> params() {
    std::vector<autodiff::Tensor<S>*> out;
    for (auto& e : encoders)
      for (auto* p : e.params()) out.push_back(p);
    out.push_back(&w);
    return out;
  }
};

template <class S>
Model<S> build_model(const std::vector<EncoderSpec>& specs, int n_classes,
                     Rng& rng, const ModelDims& dims = {}, double margin = 1.0,
                     double lambda_c = 1.0, double lambda_id = 1.0);

// Single-observation embedding; eval mode uses running BN stats and no
// dropout. Throws ModalityMismatch when inputs do not line up with the
// encoder list.
template <class S>
std::vector<S> embed(Model<S>& model, const EncodedWindow& input,
                     autodiff::Mode mode, Rng& rng);

// softmax(W eta) with max-subtraction.
template <class S>
std::vector<S> identify(const Model<S>& model, const std::vector<S>& eta);

template <class S>
std::pair<int, std::vector<S>> predict_identity(Model<S>& model,
                                                const EncodedWindow& input);

// Mean loss over the given pairs. Train mode zeroes and then fills parameter
// gradients (both branches accumulate into the shared weights); eval mode
// only evaluates. Dropout draws come from rng in pair order.
template <class S>
double loss_and_grads(Model<S>& model, const std::vector<EncodedWindow>& data,
                      const TrainingPair* pairs, std::size_t n_pairs,
                      autodiff::Mode mode, Rng& rng);

struct TrainResult {
  std::vector<double> epoch_loss;
};

// Full-batch Adam refit of the identification head on frozen eval-mode
// embeddings of the given windows. Cross-entropy is convex in W once the
// encoders are frozen, so this converges deterministically; the joint phase
// alone gives W only epochs*pairs/batch noisy steps, far too few to leave
// the neighborhood of its initialization.
inline constexpr int kHeadRefineIters = 2000;
inline constexpr double kHeadRefineLr = 1e-2;
template <class S>
void refine_head(Model<S>& model, const std::vector<EncodedWindow>& data,
                 const std::vector<std::size_t>& train_windows,
                 int iters = kHeadRefineIters, double lr = kHeadRefineLr);

// Minibatch Adam over shuffled pairs, then a head refit on the windows the
// pairs reference. Aborts with NonFiniteLoss naming the offending
// epoch/batch.
template <class S>
TrainResult train(Model<S>& model, const std::vector<EncodedWindow>& data,
                  std::vector<TrainingPair> pairs, int epochs, int batch,
                  double lr, Rng& rng);

void save_model(const Model<float>& model, const std::filesystem::path& path,
                std::uint64_t seed, std::uint64_t config_hash);
Model<float> load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string name;  // empty -> display_name derives one
  std::vector<EncoderSpec> encoders;
  double margin = 1.0;
  double lambda_c = 1.0;
  double lambda_id = 1.0;
  int epochs = 8;
  int batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 42;
  int episodes = 300;
  double ratio_similar = 0.5;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);
// Explicit name, or e.g. "CNN:ACC+LSTM:HR" derived from the encoder list.
std::string display_name(const ExperimentConfig& cfg);
// Named presets P1..P4.
ExperimentConfig pipeline_preset(const std::string& name);

// ---------------------------------------------------------------------------
// Template implementations
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
autodiff::Net<S> build_encoder(const EncoderSpec& spec, const ModelDims& dims,
                               Rng& rng) {
  using namespace autodiff;
  std::vector<LayerSpec> layers;
  std::vector<int> in_shape;
  if (spec.kind == EncoderKind::ImageCnn) {
    layers = {Conv2dSpec{dims.dim(8), 11, 11},
              BatchNormSpec{},
              MaxPoolSpec{},
              DropoutSpec{0.25},
              Conv2dSpec{dims.dim(16), 5, 5},
              BatchNormSpec{},
              MaxPoolSpec{},
              DropoutSpec{0.25},
              Conv2dSpec{dims.dim(32), 3, 3},
              BatchNormSpec{},
              MaxPoolSpec{},
              DropoutSpec{0.25},
              FlattenSpec{},
              DenseSpec{dims.dim(kEmbedPerEncoder)}};
    in_shape = {3, dims.image_h, dims.image_w};
  } else {
    layers = {LstmSpec{dims.dim(75), true},
              DropoutSpec{0.3},
              BatchNormSpec{},
              LstmSpec{dims.dim(55), false},
              DropoutSpec{0.3},
              BatchNormSpec{},
              DenseSpec{dims.dim(50)},
              DropoutSpec{0.3},
              BatchNormSpec{},
              DenseSpec{dims.dim(kEmbedPerEncoder)}};
    in_shape = {dims.seq_len, 1};
  }
  return Net<S>::build(layers, in_shape, rng);
}

inline std::size_t image_numel(const ModelDims& dims) {
  return static_cast<std::size_t>(3) * dims.image_h * dims.image_w;
}

template <class S>
autodiff::Tensor<S> batch_input(const Model<S>& model, int encoder,
                                const std::vector<const EncodedWindow*>& batch) {
  const EncoderSpec& spec = model.specs[encoder];
  const int n = static_cast<int>(batch.size());
  autodiff::Tensor<S> x;
  std::size_t want;
  if (spec.kind == EncoderKind::ImageCnn) {
    x = autodiff::Tensor<S>({n, 3, model.dims.image_h, model.dims.image_w});
    want = image_numel(model.dims);
  } else {
    x = autodiff::Tensor<S>({n, model.dims.seq_len, 1});
    want = static_cast<std::size_t>(model.dims.seq_len);
  }
  for (int s = 0; s < n; ++s) {
    const auto& inputs = batch[s]->inputs;
    if (inputs.size() != model.specs.size() || inputs[encoder].size() != want)
      fail(ErrorCode::ModalityMismatch,
           "encoded window does not match encoder " + std::to_string(encoder) +
               " (" + std::string(encoder_kind_name(spec.kind)) + ")");
    const auto& buf = inputs[encoder];
    S* dst = x.data.data() + static_cast<std::size_t>(s) * want;
    for (std::size_t i = 0; i < want; ++i) dst[i] = static_cast<S>(buf[i]);
  }
  return x;
}

// Forward one branch: embeddings [B, embed_dim] plus per-encoder tapes.
template <class S>
autodiff::Tensor<S> branch_forward(Model<S>& model,
                                   const std::vector<const EncodedWindow*>& batch,
                                   autodiff::Mode mode, Rng& rng,
                                   std::vector<autodiff::Tape<S>>* tapes) {
  const int n = static_cast<int>(batch.size());
  const int per = model.dims.dim(kEmbedPerEncoder);
  autodiff::Tensor<S> eta({n, model.embed_dim()});
  for (std::size_t e = 0; e < model.encoders.size(); ++e) {
    autodiff::Tensor<S> x = batch_input(model, static_cast<int>(e), batch);
    auto [y, tape] = model.encoders[e].forward(x, mode, rng);
    for (int s = 0; s < n; ++s)
      for (int k = 0; k < per; ++k)
        eta.data[static_cast<std::size_t>(s) * model.embed_dim() + e * per + k] =
            y.data[static_cast<std::size_t>(s) * per + k];
    if (tapes) tapes->push_back(std::move(tape));
  }
  return eta;
}

// Push d(loss)/d(eta) back through every encoder of one branch.
template <class S>
void branch_backward(Model<S>& model, std::vector<autodiff::Tape<S>>& tapes,
                     const autodiff::Tensor<S>& deta) {
  const int n = deta.shape[0];
  const int per = model.dims.dim(kEmbedPerEncoder);
  for (std::size_t e = 0; e < model.encoders.size(); ++e) {
    autodiff::Tensor<S> dy({n, per});
    for (int s = 0; s < n; ++s)
      for (int k = 0; k < per; ++k)
        dy.data[static_cast<std::size_t>(s) * per + k] =
            deta.data[static_cast<std::size_t>(s) * model.embed_dim() +
                      e * per + k];
    model.encoders[e].backward(tapes[e], dy);
  }
}

// logits = eta * W^T
template <class S>
autodiff::Tensor<S> head_logits(const Model<S>& model,
                                const autodiff::Tensor<S>& eta) {
  const int n = eta.shape[0], d = eta.shape[1], k = model.n_classes;
  autodiff::Tensor<S> logits({n, k});
  autodiff::ConstMatMap<S> em(eta.data.data(), n, d);
  autodiff::ConstMatMap<S> wm(model.w.data.data(), k, d);
  autodiff::MatMap<S> lm(logits.data.data(), n, k);
  lm.noalias() = em * wm.transpose();
  return logits;
}

}  // namespace detail

template <class S>
Model<S> build_model(const std::vector<EncoderSpec>& specs, int n_classes,
                     Rng& rng, const ModelDims& dims, double margin,
                     double lambda_c, double lambda_id) {
  if (specs.empty() || specs.size() > 4)
    fail(ErrorCode::InvalidArgument, "need 1-4 encoders");
  if (n_classes < 2) fail(ErrorCode::InvalidArgument, "need >= 2 classes");
  Model<S> model;
  model.specs = specs;
  model.n_classes = n_classes;
  model.dims = dims;
  model.margin = margin;
  model.lambda_c = lambda_c;
  model.lambda_id = lambda_id;
  for (const auto& spec : specs)
    model.encoders.push_back(detail::build_encoder<S>(spec, dims, rng));
  model.w = autodiff::Tensor<S>({n_classes, model.embed_dim()});
  model.w.alloc_grad();
  // Zero head: logits start uniform instead of saturated by the O(sqrt(dim))
  // embedding norm, so cross-entropy descends from ln(n_classes) immediately.
  std::fill(model.w.data.begin(), model.w.data.end(), S(0));
  return model;
}

template <class S>
std::vector<S> embed(Model<S>& model, const EncodedWindow& input,
                     autodiff::Mode mode, Rng& rng) {
  if (input.inputs.size() != model.encoders.size())
    fail(ErrorCode::ModalityMismatch,
         "window has " + std::to_string(input.inputs.size()) +
             " inputs, model has " + std::to_string(model.encoders.size()) +
             " encoders");
  std::vector<const EncodedWindow*> batch{&input};
  autodiff::Tensor<S> eta = detail::branch_forward(
      model, batch, mode, rng,
      static_cast<std::vector<autodiff::Tape<S>>*>(nullptr));
  return eta.data;
}

template <class S>
std::vector<S> identify(const Model<S>& model, const std::vector<S>& eta) {
  if (static_cast<int>(eta.size()) != model.embed_dim())
    fail(ErrorCode::ShapeMismatch, "embedding size does not match W");
  autodiff::Tensor<S> e({1, model.embed_dim()});
  e.data.assign(eta.begin(), eta.end());
  autodiff::Tensor<S> p = autodiff::softmax(detail::head_logits(model, e));
  return p.data;
}

template <class S>
std::pair<int, std::vector<S>> predict_identity(Model<S>& model,
                                                const EncodedWindow& input) {
  Rng rng(0);  // eval mode never draws
  std::vector<S> eta = embed(model, input, autodiff::Mode::Eval, rng);
  std::vector<S> probs = identify(model, eta);
  int best = 0;
  for (int c = 1; c < model.n_classes; ++c)
    if (probs[c] > probs[best]) best = c;
  return {best, std::move(probs)};
}

template <class S>
double loss_and_grads(Model<S>& model, const std::vector<EncodedWindow>& data,
                      const TrainingPair* pairs, std::size_t n_pairs,
                      autodiff::Mode mode, Rng& rng) {
  using autodiff::Mode;
  using autodiff::Tensor;
  if (n_pairs == 0) fail(ErrorCode::InvalidArgument, "empty pair batch");
  const bool training = mode == Mode::Train;
  if (training)
    for (auto* p : model.params()) p->zero_grad();

  std::vector<const EncodedWindow*> left, right;
  std::vector<int> left_ids, right_ids;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    left.push_back(&data[pairs[i].left]);
    right.push_back(&data[pairs[i].right]);
    left_ids.push_back(pairs[i].left_identity);
    right_ids.push_back(pairs[i].right_identity);
  }

  // Both branches are the same network applied twice, so they see identical
  // dropout masks; otherwise the pair distance mostly measures mask noise.
  std::vector<autodiff::Tape<S>> tapes_l, tapes_r;
  Rng rng_r = rng;
  Tensor<S> eta_l = detail::branch_forward(model, left, mode, rng,
                                           training ? &tapes_l : nullptr);
  Tensor<S> eta_r = detail::branch_forward(model, right, mode, rng_r,
                                           training ? &tapes_r : nullptr);

  const int n = static_cast<int>(n_pairs), d = model.embed_dim();
  Tensor<S> logits_l = detail::head_logits(model, eta_l);
  Tensor<S> logits_r = detail::head_logits(model, eta_r);
  auto [ce_l, dlogits_l] = autodiff::softmax_xent(logits_l, left_ids);
  auto [ce_r, dlogits_r] = autodiff::softmax_xent(logits_r, right_ids);

  // Contrastive term and its gradient on the embeddings.
  Tensor<S> deta_l({n, d}), deta_r({n, d});
  double contrastive = 0.0;
  const double m = model.margin;
  for (int i = 0; i < n; ++i) {
    const S* a = eta_l.data.data() + static_cast<std::size_t>(i) * d;
    const S* b = eta_r.data.data() + static_cast<std::size_t>(i) * d;
    double dist = autodiff::euclidean_distance(a, b, static_cast<std::size_t>(d));
    double coeff = 0.0;  // d(L_c per pair)/d(dist) / dist, times (a-b) below
    if (pairs[i].similar) {
      contrastive += dist * dist;
      coeff = 2.0;
    } else if (dist < m) {
      contrastive += (m - dist) * (m - dist);
      // hinge: d/d(a) (m-dist)^2 = -2 (m-dist)/dist * (a-b); dist=0 -> 0
      coeff = dist > 0.0 ? -2.0 * (m - dist) / dist : 0.0;
    }
    if (training && coeff != 0.0) {
      const double scale = model.lambda_c * coeff / n;
      S* gl = deta_l.data.data() + static_cast<std::size_t>(i) * d;
      S* gr = deta_r.data.data() + static_cast<std::size_t>(i) * d;
      for (int k = 0; k < d; ++k) {
        double g = scale * (static_cast<double>(a[k]) - b[k]);
        gl[k] = static_cast<S>(g);
        gr[k] = static_cast<S>(-g);
      }
    }
  }
  contrastive /= n;

  const double total =
      model.lambda_c * contrastive + model.lambda_id * 0.5 * (ce_l + ce_r);
  if (!training) return total;

  // Identification head gradients: dW += lam/2 (dlogits^T eta), both sides.
  const double lid = model.lambda_id * 0.5;
  autodiff::MatMap<S> dwm(model.w.grad.data(), model.n_classes, d);
  autodiff::ConstMatMap<S> dll(dlogits_l.data.data(), n, model.n_classes);
  autodiff::ConstMatMap<S> dlr(dlogits_r.data.data(), n, model.n_classes);
  autodiff::ConstMatMap<S> el(eta_l.data.data(), n, d);
  autodiff::ConstMatMap<S> er(eta_r.data.data(), n, d);
  dwm.noalias() += static_cast<S>(lid) * (dll.transpose() * el);
  dwm.noalias() += static_cast<S>(lid) * (dlr.transpose() * er);

  autodiff::ConstMatMap<S> wm(model.w.data.data(), model.n_classes, d);
  autodiff::MatMap<S> del(deta_l.data.data(), n, d);
  autodiff::MatMap<S> der(deta_r.data.data(), n, d);
  del.noalias() += static_cast<S>(lid) * (dll * wm);
  der.noalias() += static_cast<S>(lid) * (dlr * wm);

  detail::branch_backward(model, tapes_l, deta_l);
  detail::branch_backward(model, tapes_r, deta_r);
  return total;
}

template <class S>
void refine_head(Model<S>& model, const std::vector<EncodedWindow>& data,
                 const std::vector<std::size_t>& train_windows, int iters,
                 double lr) {
  if (train_windows.empty())
    fail(ErrorCode::InvalidArgument, "no windows to refit the head on");
  const int d = model.embed_dim(), C = model.n_classes;
  const int n = static_cast<int>(train_windows.size());

  std::vector<std::vector<S>> feats(train_windows.size());
  std::vector<int> labels(train_windows.size());
  Rng erng(0);  // eval mode never draws
  for (std::size_t i = 0; i < train_windows.size(); ++i) {
    feats[i] = embed(model, data[train_windows[i]], autodiff::Mode::Eval, erng);
    labels[i] = data[train_windows[i]].class_index;
  }

  std::vector<double> w(model.w.data.begin(), model.w.data.end());
  std::vector<double> m(w.size(), 0.0), v(w.size(), 0.0), g(w.size());
  std::vector<double> logit(C);
  for (int it = 1; it <= iters; ++it) {
    std::fill(g.begin(), g.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const S* x = feats[i].data();
      for (int c = 0; c < C; ++c) {
        double dot = 0.0;
        for (int k = 0; k < d; ++k)
          dot += w[static_cast<std::size_t>(c) * d + k] * x[k];
        logit[c] = dot;
      }
      double mx = *std::max_element(logit.begin(), logit.end());
      double z = 0.0;
      for (double& l : logit) {
        l = std::exp(l - mx);
        z += l;
      }
      for (int c = 0; c < C; ++c) {
        double p = logit[c] / z - (c == labels[i] ? 1.0 : 0.0);
        for (int k = 0; k < d; ++k)
          g[static_cast<std::size_t>(c) * d + k] += p * x[k] / n;
      }
    }
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = 0.9 * m[j] + 0.1 * g[j];
      v[j] = 0.999 * v[j] + 0.001 * g[j] * g[j];
      double mh = m[j] / (1.0 - std::pow(0.9, it));
      double vh = v[j] / (1.0 - std::pow(0.999, it));
      w[j] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (std::size_t j = 0; j < w.size(); ++j)
    model.w.data[j] = static_cast<S>(w[j]);
}

template <class S>
TrainResult train(Model<S>& model, const std::vector<EncodedWindow>& data,
                  std::vector<TrainingPair> pairs, int epochs, int batch,
                  double lr, Rng& rng) {
  if (pairs.empty()) fail(ErrorCode::InvalidArgument, "no training pairs");
  if (batch < 1) fail(ErrorCode::InvalidArgument, "batch must be >= 1");
  auto params = model.params();
  auto state = autodiff::AdamState<S>::for_params(params);
  autodiff::AdamHyper hp;
  hp.lr = lr;

  TrainResult result;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(pairs);
    double sum = 0.0;
    for (std::size_t off = 0; off < pairs.size(); off += batch) {
      std::size_t n = std::min<std::size_t>(batch, pairs.size() - off);
      double loss = loss_and_grads(model, data, pairs.data() + off, n,
                                   autodiff::Mode::Train, rng);
      if (!std::isfinite(loss))
        fail(ErrorCode::NonFiniteLoss,
             "non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                 std::to_string(off / batch));
      adam_step(params, state, hp);
      sum += loss * static_cast<double>(n);
    }
    result.epoch_loss.push_back(sum / static_cast<double>(pairs.size()));
  }

  std::vector<std::size_t> seen;
  for (const TrainingPair& p : pairs) {
    seen.push_back(p.left);
    seen.push_back(p.right);
  }
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
  refine_head(model, data, seen);
  return result;
}

}  // namespace physiogait::mmsnn
