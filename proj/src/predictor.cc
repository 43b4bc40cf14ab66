// Copyright 2026 The sipred Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sipred/predictor.h"

#include <cmath>
#include <cstring>
#include <limits>

#include <nlohmann/json.hpp>

#include "sipred/error.h"
#include "sipred/rng.h"
#include "sipred/util.h"

namespace sipred {

namespace {

using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

constexpr const char* kDirNames[2] = {"fwd", "bwd"};

double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vector Sigmoid(const Vector& x) {
  return (1.0 + (-x.array()).exp()).inverse().matrix();
}

// Keeps the output inside the open interval even when the logit saturates.
double OutputSigmoid(double z) {
  constexpr double kHi = 1.0 - 0x1.0p-53;
  return std::clamp(Sigmoid(z), std::numeric_limits<double>::min(), kHi);
}

std::string SegmentName(int layer, int dir, const char* what) {
  return "blstm" + std::to_string(layer) + "." + kDirNames[dir] + "." + what;
}

// Per-direction activations kept for back-propagation; rows are frames in
// time order regardless of the processing direction.
struct DirectionCache {
  RowMatrix in_gate, forget_gate, cell_input, out_gate, cell, hidden;
};

struct LayerCache {
  RowMatrix input;
  DirectionCache dir[2];
  RowMatrix output;  // T x 2H, [fwd | bwd]
};

struct ForwardState {
  std::vector<LayerCache> layers;
  RowMatrix att_pre;  // T x A, before relu
  Vector scores;      // T
  Vector alpha;       // T
  Vector pooled;      // D
  double logit = 0.0;
  double y = 0.0;
};

struct DirectionParams {
  ConstMap w_ih, w_hh, b_ih, b_hh;
};

}  // namespace

// ---------------------------------------------------------------------------

ModelConfig ModelConfig::ForFeatureDim(int feature_dim) {
  ModelConfig c;
  c.feature_dim = feature_dim;
  c.blstm_layers = 2;
  c.hidden = feature_dim / 2;
  c.attention_hidden = 2 * c.embed_dim();
  return c;
}

void ModelConfig::Validate() const {
  if (feature_dim < 1) throw InvalidArgument("feature_dim must be >= 1");
  if (blstm_layers < 1) throw InvalidArgument("need at least one BLSTM layer");
  if (hidden < 1)
    throw InvalidArgument("BLSTM hidden size must be >= 1 (feature_dim " +
                          std::to_string(feature_dim) + " is too small)");
  if (attention_hidden < 1) throw InvalidArgument("attention width must be >= 1");
}

size_t ParameterCount(const ModelConfig& c) {
  c.Validate();
  const size_t h = c.hidden, d = c.embed_dim(), a = c.attention_hidden;
  size_t n = 0;
  for (int l = 0; l < c.blstm_layers; ++l) {
    const size_t in = l == 0 ? static_cast<size_t>(c.feature_dim) : d;
    n += 2 * (4 * h * in + 4 * h * h + 8 * h);
  }
  n += a * d + a;  // pool.w1, pool.b1
  n += a + 1;      // pool.w2, pool.b2
  n += d + 1;      // out.w, out.b
  return n;
}

void PredictorModel::Layout() {
  segments_.clear();
  size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    segments_.push_back({std::move(name), offset, rows, cols});
    offset += static_cast<size_t>(rows) * cols;
  };
  const int h = config_.hidden, d = config_.embed_dim(), a = config_.attention_hidden;
  for (int l = 0; l < config_.blstm_layers; ++l) {
    const int in = l == 0 ? config_.feature_dim : d;
    for (int dir = 0; dir < 2; ++dir) {
      add(SegmentName(l, dir, "w_ih"), 4 * h, in);
      add(SegmentName(l, dir, "w_hh"), 4 * h, h);
      add(SegmentName(l, dir, "b_ih"), 4 * h, 1);
      add(SegmentName(l, dir, "b_hh"), 4 * h, 1);
    }
  }
  add("pool.w1", a, d);
  add("pool.b1", a, 1);
  add("pool.w2", 1, a);
  add("pool.b2", 1, 1);
  add("out.w", 1, d);
  add("out.b", 1, 1);
}

PredictorModel PredictorModel::Build(int feature_dim, uint64_t seed) {
  if (feature_dim < 1) throw InvalidArgument("feature_dim must be >= 1");
  return Build(ModelConfig::ForFeatureDim(feature_dim), seed);
}

PredictorModel PredictorModel::Build(const ModelConfig& config, uint64_t seed) {
  config.Validate();
  PredictorModel m;
  m.config_ = config;
  m.init_seed_ = seed;
  m.Layout();
  m.params_.resize(static_cast<Eigen::Index>(ParameterCount(config)));
  // Uniform(-k, k) with k = 1/sqrt(hidden) for recurrent layers and
  // k = 1/sqrt(fan_in) for the head.
  Rng rng = Rng::Stream(seed, "predictor-init");
  for (const auto& s : m.segments_) {
    double k;
    if (s.name.rfind("blstm", 0) == 0) {
      k = 1.0 / std::sqrt(static_cast<double>(config.hidden));
    } else if (s.name.rfind("pool.w2", 0) == 0 || s.name == "pool.b2") {
      k = 1.0 / std::sqrt(static_cast<double>(config.attention_hidden));
    } else {
      k = 1.0 / std::sqrt(static_cast<double>(config.embed_dim()));
    }
    for (size_t i = 0; i < s.size(); ++i)
      m.params_[static_cast<Eigen::Index>(s.offset + i)] = rng.Uniform(-k, k);
  }
  return m;
}

const ParameterSegment& PredictorModel::segment(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s;
  throw InvalidArgument("no parameter segment '" + name + "'");
}

void PredictorModel::set_parameters(Vector params) {
  if (params.size() != params_.size())
    throw ShapeMismatch("parameter vector has " + std::to_string(params.size()) +
                        " entries, model needs " + std::to_string(params_.size()));
  if (!params.allFinite()) throw InvalidArgument("parameters must be finite");
  params_ = std::move(params);
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

ConstMap View(const Vector& p, const ParameterSegment& s) {
  return ConstMap(p.data() + s.offset, s.rows, s.cols);
}

MutMap View(Vector& p, const ParameterSegment& s) {
  return MutMap(p.data() + s.offset, s.rows, s.cols);
}

DirectionParams DirParams(const PredictorModel& m, int layer, int dir) {
  const Vector& p = m.parameters();
  return {View(p, m.segment(SegmentName(layer, dir, "w_ih"))),
          View(p, m.segment(SegmentName(layer, dir, "w_hh"))),
          View(p, m.segment(SegmentName(layer, dir, "b_ih"))),
          View(p, m.segment(SegmentName(layer, dir, "b_hh")))};
}

void RunDirection(const RowMatrix& x, const DirectionParams& p, bool reverse,
                  DirectionCache& c) {
  const Eigen::Index t_len = x.rows();
  const Eigen::Index h = p.w_hh.cols();
  RowMatrix pre = x * p.w_ih.transpose();
  pre.rowwise() += (p.b_ih + p.b_hh).col(0).transpose();
  for (RowMatrix* m : {&c.in_gate, &c.forget_gate, &c.cell_input, &c.out_gate,
                       &c.cell, &c.hidden})
    m->resize(t_len, h);
  Vector hid = Vector::Zero(h), cell = Vector::Zero(h);
  for (Eigen::Index s = 0; s < t_len; ++s) {
    const Eigen::Index t = reverse ? t_len - 1 - s : s;
    Vector g = pre.row(t).transpose() + p.w_hh * hid;
    Vector ig = Sigmoid(g.segment(0, h));
    Vector fg = Sigmoid(g.segment(h, h));
    Vector cg = g.segment(2 * h, h).array().tanh().matrix();
    Vector og = Sigmoid(g.segment(3 * h, h));
    cell = fg.cwiseProduct(cell) + ig.cwiseProduct(cg);
    hid = og.cwiseProduct(cell.array().tanh().matrix());
    c.in_gate.row(t) = ig.transpose();
    c.forget_gate.row(t) = fg.transpose();
    c.cell_input.row(t) = cg.transpose();
    c.out_gate.row(t) = og.transpose();
    c.cell.row(t) = cell.transpose();
    c.hidden.row(t) = hid.transpose();
  }
}

// dh_out: T x H gradient w.r.t. this direction's hidden outputs. Adds
// parameter gradients into `grad` and input gradients into dx.
void BackDirection(const RowMatrix& x, const RowMatrix& dh_out,
                   const DirectionParams& p, const DirectionCache& c, bool reverse,
                   MutMap gw_ih, MutMap gw_hh, MutMap gb_ih, MutMap gb_hh,
                   RowMatrix& dx) {
  const Eigen::Index t_len = x.rows();
  const Eigen::Index h = p.w_hh.cols();
  RowMatrix dpre(t_len, 4 * h);
  RowMatrix h_prev = RowMatrix::Zero(t_len, h);
  Vector dh_next = Vector::Zero(h), dc_next = Vector::Zero(h);
  Vector zeros = Vector::Zero(h);
  for (Eigen::Index s = t_len - 1; s >= 0; --s) {
    const Eigen::Index t = reverse ? t_len - 1 - s : s;
    const Eigen::Index tp = reverse ? t + 1 : t - 1;
    const bool has_prev = s > 0;
    Vector c_prev = has_prev ? Vector(c.cell.row(tp).transpose()) : zeros;
    if (has_prev) h_prev.row(t) = c.hidden.row(tp);

    auto ig = c.in_gate.row(t).transpose().array();
    auto fg = c.forget_gate.row(t).transpose().array();
    auto cg = c.cell_input.row(t).transpose().array();
    auto og = c.out_gate.row(t).transpose().array();
    Eigen::ArrayXd tc = c.cell.row(t).transpose().array().tanh();

    Eigen::ArrayXd dh = dh_out.row(t).transpose().array() + dh_next.array();
    Eigen::ArrayXd dc = dh * og * (1.0 - tc * tc) + dc_next.array();
    Eigen::ArrayXd d_o = dh * tc;
    dpre.row(t).segment(0, h) = (dc * cg * ig * (1.0 - ig)).matrix().transpose();
    dpre.row(t).segment(h, h) =
        (dc * c_prev.array() * fg * (1.0 - fg)).matrix().transpose();
    dpre.row(t).segment(2 * h, h) = (dc * ig * (1.0 - cg * cg)).matrix().transpose();
    dpre.row(t).segment(3 * h, h) = (d_o * og * (1.0 - og)).matrix().transpose();
    dc_next = (dc * fg).matrix();
    dh_next = p.w_hh.transpose() * dpre.row(t).transpose();
  }
  gw_ih.noalias() += dpre.transpose() * x;
  gw_hh.noalias() += dpre.transpose() * h_prev;
  Vector db = dpre.colwise().sum().transpose();
  gb_ih += db;
  gb_hh += db;
  dx.noalias() += dpre * p.w_ih;
}

void Forward(const PredictorModel& m, const Matrix& feats, ForwardState& st) {
  const ModelConfig& cfg = m.config();
  if (feats.cols() != cfg.feature_dim)
    throw ShapeMismatch("model expects F=" + std::to_string(cfg.feature_dim) +
                        ", features have F=" + std::to_string(feats.cols()));
  if (feats.rows() < 1) throw InvalidArgument("features have no frames");
  const Eigen::Index h = cfg.hidden;

  st.layers.assign(cfg.blstm_layers, {});
  RowMatrix input = feats;
  for (int l = 0; l < cfg.blstm_layers; ++l) {
    LayerCache& lc = st.layers[l];
    lc.input = std::move(input);
    for (int dir = 0; dir < 2; ++dir)
      RunDirection(lc.input, DirParams(m, l, dir), dir == 1, lc.dir[dir]);
    lc.output.resize(lc.input.rows(), 2 * h);
    lc.output.leftCols(h) = lc.dir[0].hidden;
    lc.output.rightCols(h) = lc.dir[1].hidden;
    input = lc.output;
  }
  const RowMatrix& e = st.layers.back().output;
  const Vector& p = m.parameters();
  auto w1 = View(p, m.segment("pool.w1"));
  auto b1 = View(p, m.segment("pool.b1"));
  auto w2 = View(p, m.segment("pool.w2"));
  const double b2 = p[static_cast<Eigen::Index>(m.segment("pool.b2").offset)];
  auto wo = View(p, m.segment("out.w"));
  const double bo = p[static_cast<Eigen::Index>(m.segment("out.b").offset)];

  st.att_pre = e * w1.transpose();
  st.att_pre.rowwise() += b1.col(0).transpose();
  st.scores = (st.att_pre.cwiseMax(0.0) * w2.transpose()).col(0);
  st.scores.array() += b2;
  const double mx = st.scores.maxCoeff();
  st.alpha = (st.scores.array() - mx).exp().matrix();
  st.alpha /= st.alpha.sum();
  st.pooled = e.transpose() * st.alpha;
  st.logit = wo.row(0).dot(st.pooled) + bo;
  st.y = OutputSigmoid(st.logit);
}

void Backward(const PredictorModel& m, const ForwardState& st, double dy,
              Vector& grad) {
  const ModelConfig& cfg = m.config();
  const Eigen::Index h = cfg.hidden;
  const Vector& p = m.parameters();
  const RowMatrix& e = st.layers.back().output;

  const double dz = dy * st.y * (1.0 - st.y);
  auto wo = View(p, m.segment("out.w"));
  View(grad, m.segment("out.w")) += dz * st.pooled.transpose();
  grad[static_cast<Eigen::Index>(m.segment("out.b").offset)] += dz;
  Vector dpooled = dz * wo.row(0).transpose();

  RowMatrix de = st.alpha * dpooled.transpose();
  Vector dalpha = e * dpooled;
  const double dot = st.alpha.dot(dalpha);
  Vector dscores = st.alpha.cwiseProduct((dalpha.array() - dot).matrix());

  auto w1 = View(p, m.segment("pool.w1"));
  auto w2 = View(p, m.segment("pool.w2"));
  RowMatrix relu = st.att_pre.cwiseMax(0.0);
  View(grad, m.segment("pool.w2")) += dscores.transpose() * relu;
  grad[static_cast<Eigen::Index>(m.segment("pool.b2").offset)] += dscores.sum();
  RowMatrix datt = dscores * w2;  // T x A
  datt = datt.cwiseProduct((st.att_pre.array() > 0.0).cast<double>().matrix());
  View(grad, m.segment("pool.w1")).noalias() += datt.transpose() * e;
  View(grad, m.segment("pool.b1")) += datt.colwise().sum().transpose();
  de.noalias() += datt * w1;

  RowMatrix dout = std::move(de);
  for (int l = cfg.blstm_layers - 1; l >= 0; --l) {
    const LayerCache& lc = st.layers[l];
    RowMatrix dx = RowMatrix::Zero(lc.input.rows(), lc.input.cols());
    for (int dir = 0; dir < 2; ++dir) {
      RowMatrix dh = dout.middleCols(dir * h, h);
      BackDirection(lc.input, dh, DirParams(m, l, dir), lc.dir[dir], dir == 1,
                    View(grad, m.segment(SegmentName(l, dir, "w_ih"))),
                    View(grad, m.segment(SegmentName(l, dir, "w_hh"))),
                    View(grad, m.segment(SegmentName(l, dir, "b_ih"))),
                    View(grad, m.segment(SegmentName(l, dir, "b_hh"))), dx);
    }
    dout = std::move(dx);
  }
}

}  // namespace

double PredictorModel::Predict(const Matrix& feats) const {
  ForwardState st;
  Forward(*this, feats, st);
  return st.y;
}

double PredictorModel::AccumulateGradient(
    const Matrix& feats, const std::function<double(double)>& output_grad,
    Vector& grad) const {
  if (grad.size() == 0) grad = Vector::Zero(params_.size());
  if (grad.size() != params_.size())
    throw ShapeMismatch("gradient buffer has the wrong length");
  ForwardState st;
  Forward(*this, feats, st);
  Backward(*this, st, output_grad(st.y), grad);
  return st.y;
}

double ForwardChannel(const PredictorModel& model, const FeatureMatrix& feats) {
  if (feats.dim() != model.config().feature_dim)
    throw ShapeMismatch("model expects F=" + std::to_string(model.config().feature_dim) +
                        ", got F=" + std::to_string(feats.dim()) + " (" +
                        feats.backend_id + ":" +
                        std::string(FeatureKindName(feats.kind)) + ")");
  return model.Predict(feats.values);
}

Prediction CombineChannels(std::string utterance_id, double left,
                           std::optional<double> right) {
  Prediction p;
  p.utterance_id = std::move(utterance_id);
  p.left = left;
  p.right = right;
  p.i_hat = right ? std::max(left, *right) : left;
  return p;
}

Prediction PredictFeatures(const PredictorModel& model, const std::string& utterance_id,
                           const FeatureMatrix& left, const FeatureMatrix* right) {
  const double l = ForwardChannel(model, left);
  std::optional<double> r;
  if (right != nullptr) r = ForwardChannel(model, *right);
  return CombineChannels(utterance_id, l, r);
}

Prediction PredictUtterance(const PredictorModel& model, const Waveform& w,
                            const FeatureExtractor& extractor,
                            const std::string& utterance_id) {
  try {
    FeatureMatrix left = extractor(w, Channel::kLeft);
    if (w.has_channel(Channel::kRight)) {
      FeatureMatrix right = extractor(w, Channel::kRight);
      return PredictFeatures(model, utterance_id, left, &right);
    }
    return PredictFeatures(model, utterance_id, left);
  } catch (const std::exception& e) {
    throw Error("utterance " + utterance_id + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[4] = {'S', 'I', 'P', 'M'};
constexpr uint32_t kCkptVersion = 1;

}  // namespace

void SaveCheckpoint(const std::filesystem::path& path, const PredictorModel& model) {
  nlohmann::ordered_json header;
  const auto& c = model.config();
  header["format"] = "sipred-checkpoint";
  header["config"] = {{"feature_dim", c.feature_dim},
                      {"blstm_layers", c.blstm_layers},
                      {"hidden", c.hidden},
                      {"attention_hidden", c.attention_hidden}};
  header["binding"] = model.binding().ToString();
  header["init_seed"] = model.init_seed();
  if (model.training_seed()) header["training_seed"] = *model.training_seed();
  header["parameter_count"] = model.parameter_count();
  auto segs = nlohmann::ordered_json::array();
  for (const auto& s : model.segments())
    segs.push_back({{"name", s.name}, {"offset", s.offset}, {"rows", s.rows},
                    {"cols", s.cols}});
  header["segments"] = segs;
  const std::string hdr = header.dump();

  std::string out(kCkptMagic, 4);
  auto put = [&](uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put(kCkptVersion, 4);
  put(0, 4);
  put(hdr.size(), 8);
  out += hdr;
  for (Eigen::Index i = 0; i < model.parameters().size(); ++i) {
    uint64_t u;
    double d = model.parameters()[i];
    std::memcpy(&u, &d, 8);
    put(u, 8);
  }
  WriteFileAtomic(path, out);
}

PredictorModel LoadCheckpoint(const std::filesystem::path& path) {
  const std::string raw = ReadTextFile(path);
  auto bad = [&](const std::string& why) {
    return IoError("invalid checkpoint '" + path.string() + "': " + why);
  };
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  auto get = [&](size_t off, int bytes) {
    uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | p[off + i];
    return v;
  };
  if (raw.size() < 20 || std::memcmp(p, kCkptMagic, 4) != 0) throw bad("bad magic");
  if (get(4, 4) != kCkptVersion) throw bad("unsupported version");
  const uint64_t hlen = get(12, 8);
  if (raw.size() < 20 + hlen) throw bad("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.substr(20, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw bad(e.what());
  }
  ModelConfig cfg;
  const auto& jc = header.at("config");
  cfg.feature_dim = jc.at("feature_dim").get<int>();
  cfg.blstm_layers = jc.at("blstm_layers").get<int>();
  cfg.hidden = jc.at("hidden").get<int>();
  cfg.attention_hidden = jc.at("attention_hidden").get<int>();

  PredictorModel m = PredictorModel::Build(cfg, header.at("init_seed").get<uint64_t>());
  const uint64_t count = header.at("parameter_count").get<uint64_t>();
  if (count != m.parameter_count()) throw bad("parameter count disagrees with config");
  const auto& segs = header.at("segments");
  if (segs.size() != m.segments().size()) throw bad("segment table mismatch");
  for (size_t i = 0; i < segs.size(); ++i) {
    const auto& s = m.segments()[i];
    if (segs[i].at("name").get<std::string>() != s.name ||
        segs[i].at("offset").get<size_t>() != s.offset ||
        segs[i].at("rows").get<int>() != s.rows || segs[i].at("cols").get<int>() != s.cols)
      throw bad("segment '" + s.name + "' does not match the layout");
  }
  if (raw.size() != 20 + hlen + 8 * count) throw bad("parameter block has wrong size");
  Vector params(static_cast<Eigen::Index>(count));
  for (uint64_t i = 0; i < count; ++i) {
    uint64_t u = get(20 + hlen + 8 * i, 8);
    std::memcpy(&params[static_cast<Eigen::Index>(i)], &u, 8);
  }
  m.set_parameters(std::move(params));
  m.set_binding(FeatureBinding::Parse(header.at("binding").get<std::string>()));
  if (header.contains("training_seed"))
    m.set_training_seed(header.at("training_seed").get<uint64_t>());
  return m;
}

}  // namespace sipred
