#pragma once

// The full proposal network and its training loop. A miniature U-Net
// backbone (conv-relu-norm blocks, maxpool down, nearest-upsample +
// skip-concat up) produces a full-resolution map P1 and a stride-s map P2.
// 1x1-conv heads on P2 emit classification logits, 4N shape coefficients,
// and 2 location offsets per grid cell; a 1x1-conv head on P1 emits the
// 2-channel refinement residual field.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cpn/checkpoint.hpp"
#include "cpn/data.hpp"
#include "cpn/efd.hpp"
#include "cpn/geometry.hpp"
#include "cpn/loss.hpp"
#include "cpn/metrics.hpp"
#include "cpn/nms.hpp"
#include "cpn/ops.hpp"
#include "cpn/refine.hpp"
#include "cpn/rng.hpp"

namespace cpn {

enum class TSampling { kUniform, kRandom };

struct CpnConfig {
  std::size_t order = 4;
  std::size_t samples = 64;
  std::size_t stride = 2;
  double score_threshold = 0.5;
  double nms_threshold = 0.5;
  int refine_iterations = 4;
  double refine_margin = 2.0;  // sigma
  std::vector<std::size_t> widths = {8, 16, 32};
  LossWeights loss;
  TSampling t_sampling = TSampling::kUniform;
  std::uint64_t seed = 1;

  std::size_t levels() const { return widths.size(); }
  std::size_t total_downsampling() const { return std::size_t{1} << (widths.size() - 1); }
  std::size_t p2_level() const {
    std::size_t level = 0, s = stride;
    while (s > 1) { s /= 2; ++level; }
    return level;
  }

  void validate() const {
    if (order < 1) throw std::invalid_argument("config: order must be >= 1");
    if (samples < 3) throw std::invalid_argument("config: samples must be >= 3");
    if (stride != 1 && stride != 2 && stride != 4)
      throw std::invalid_argument("config: stride must be 1, 2, or 4");
    if (!(score_threshold > 0.0 && score_threshold < 1.0))
      throw std::invalid_argument("config: score_threshold must lie in (0,1)");
    if (!(nms_threshold > 0.0 && nms_threshold < 1.0))
      throw std::invalid_argument("config: nms_threshold must lie in (0,1)");
    if (refine_iterations < 0) throw std::invalid_argument("config: refine_iterations must be >= 0");
    if (!(refine_margin > 0.0)) throw std::invalid_argument("config: refine_margin must be positive");
    if (widths.empty()) throw std::invalid_argument("config: backbone widths must be nonempty");
    for (std::size_t w : widths)
      if (w == 0) throw std::invalid_argument("config: backbone widths must be positive");
    if (total_downsampling() < stride)
      throw std::invalid_argument("config: backbone too shallow for stride " +
                                  std::to_string(stride));
    if (!(loss.lambda >= 0.0)) throw std::invalid_argument("config: lambda must be >= 0");
    if (!loss.beta.empty() && loss.beta.size() != order + 1)
      throw std::invalid_argument("config: beta must have order+1 entries when given");
  }
};

struct ProposalGrid {
  std::size_t height = 0, width = 0;  // input image dims
  std::size_t stride = 1, order = 0;
  std::size_t grid_h = 0, grid_w = 0;
  std::vector<double> scores;        // grid_h*grid_w, post-sigmoid
  std::vector<double> shape_coeffs;  // grid_h*grid_w * 4N, per-cell [a1..aN,b1..bN,c1..cN,d1..dN]
  std::vector<double> offsets;       // grid_h*grid_w * 2, (a_0,c_0) relative to the cell center, px
  ResidualField residual;            // full resolution
};

struct TargetGrid {
  std::size_t grid_h = 0, grid_w = 0;
  std::vector<double> objectness;  // grid_h*grid_w in {0,1}
  std::vector<CellTarget> cells;   // one per positive pixel
  std::size_t skipped_instances = 0;
};

class CpnModel {
 public:
  explicit CpnModel(const CpnConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const auto& widths = cfg_.widths;
    const std::size_t levels = widths.size();

    std::size_t in_ch = 1;
    for (std::size_t l = 0; l < levels; ++l) {
      add_block("enc" + std::to_string(l), in_ch, widths[l], rng);
      in_ch = widths[l];
    }
    for (std::size_t l = levels - 1; l-- > 0;)
      add_block("dec" + std::to_string(l), widths[l + 1] + widths[l], widths[l], rng);

    const std::size_t p2_ch = widths[cfg_.p2_level()];
    add_head("cls", p2_ch, 1, rng);
    add_head("shape", p2_ch, 4 * cfg_.order, rng);
    add_head("loc", p2_ch, 2, rng);
    add_head("refine", widths[0], 2, rng);
  }

  const CpnConfig& config() const { return cfg_; }
  std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }

  struct RawOutputs {
    Tensor logits;   // (1, h2, w2)
    Tensor shape;    // (4N, h2, w2)
    Tensor offsets;  // (2, h2, w2), cell-relative in stride units
    Tensor field;    // (2, H, W)
  };

  RawOutputs forward_raw(const std::vector<double>& pixels, std::size_t height,
                         std::size_t width) const {
    if (pixels.size() != height * width)
      throw std::invalid_argument("forward: pixel count does not match dims");
    const std::size_t down = cfg_.total_downsampling();
    if (height == 0 || width == 0 || height % down != 0 || width % down != 0)
      throw std::invalid_argument("forward: dims must be positive multiples of " +
                                  std::to_string(down));
    for (double p : pixels)
      if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument("forward: pixel values must lie in [0,1]");

    const std::size_t levels = cfg_.widths.size();
    std::vector<Tensor> enc(levels);
    enc[0] = block(Tensor::from_values({1, height, width}, pixels), "enc0");
    for (std::size_t l = 1; l < levels; ++l)
      enc[l] = block(maxpool2d(enc[l - 1]), "enc" + std::to_string(l));

    Tensor dec = enc[levels - 1];
    Tensor p2;
    if (cfg_.p2_level() == levels - 1) p2 = dec;
    for (std::size_t l = levels - 1; l-- > 0;) {
      dec = block(concat_channels(upsample_nearest(dec), enc[l]), "dec" + std::to_string(l));
      if (l == cfg_.p2_level()) p2 = dec;
    }
    const Tensor p1 = dec;

    RawOutputs out;
    out.logits = head(p2, "cls");
    out.shape = head(p2, "shape");
    out.offsets = head(p2, "loc");
    out.field = head(p1, "refine");
    return out;
  }

  ProposalGrid forward(const std::vector<double>& pixels, std::size_t height,
                       std::size_t width) const {
    const RawOutputs raw = forward_raw(pixels, height, width);
    ProposalGrid grid;
    grid.height = height;
    grid.width = width;
    grid.stride = cfg_.stride;
    grid.order = cfg_.order;
    grid.grid_h = raw.logits.dim(1);
    grid.grid_w = raw.logits.dim(2);

    const std::size_t cells = grid.grid_h * grid.grid_w;
    grid.scores.resize(cells);
    for (std::size_t i = 0; i < cells; ++i) {
      const double z = raw.logits[i];
      grid.scores[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }

    const std::size_t coeffs = 4 * cfg_.order;
    grid.shape_coeffs.resize(cells * coeffs);
    for (std::size_t i = 0; i < cells; ++i)
      for (std::size_t ch = 0; ch < coeffs; ++ch)
        grid.shape_coeffs[i * coeffs + ch] = raw.shape[ch * cells + i];

    grid.offsets.resize(cells * 2);
    const double stride_px = static_cast<double>(cfg_.stride);
    for (std::size_t i = 0; i < cells; ++i) {
      grid.offsets[i * 2 + 0] = stride_px * raw.offsets[i];
      grid.offsets[i * 2 + 1] = stride_px * raw.offsets[cells + i];
    }

    grid.residual = ResidualField::from_tensor(raw.field);
    return grid;
  }

  void save(const std::string& path) const { save_checkpoint(path, params_); }

  void load(const std::string& path) {
    const std::vector<CheckpointEntry> entries = load_checkpoint(path);
    std::unordered_map<std::string, const CheckpointEntry*> by_name;
    for (const CheckpointEntry& e : entries) {
      if (!by_name.emplace(e.name, &e).second)
        throw data_error("checkpoint '" + path + "': duplicate parameter '" + e.name + "'");
    }
    if (entries.size() != params_.size())
      throw data_error("checkpoint '" + path + "': holds " + std::to_string(entries.size()) +
                       " parameters, model has " + std::to_string(params_.size()));
    for (auto& [name, tensor] : params_) {
      const auto it = by_name.find(name);
      if (it == by_name.end())
        throw data_error("checkpoint '" + path + "': missing parameter '" + name + "'");
      if (it->second->shape != tensor.shape())
        throw data_error("checkpoint '" + path + "': shape mismatch for '" + name + "'");
      tensor.mutable_values() = it->second->values;
    }
  }

 private:
  void add_param(const std::string& name, Shape shape, std::vector<double> values) {
    Tensor t = Tensor::from_values(std::move(shape), std::move(values), true);
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(t));
  }

  void add_conv(const std::string& name, std::size_t out_ch, std::size_t in_ch, std::size_t k,
                Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
    std::vector<double> w(out_ch * in_ch * k * k);
    for (double& v : w) v = rng.uniform(-bound, bound);
    add_param(name, {out_ch, in_ch, k, k}, std::move(w));
  }

  void add_block(const std::string& prefix, std::size_t in_ch, std::size_t out_ch, Rng& rng) {
    add_conv(prefix + ".conv.weight", out_ch, in_ch, 3, rng);
    add_param(prefix + ".norm.gamma", {out_ch}, std::vector<double>(out_ch, 1.0));
    add_param(prefix + ".norm.beta", {out_ch}, std::vector<double>(out_ch, 0.0));
  }

  void add_head(const std::string& prefix, std::size_t in_ch, std::size_t out_ch, Rng& rng) {
    add_conv(prefix + ".weight", out_ch, in_ch, 1, rng);
    add_param(prefix + ".bias", {out_ch}, std::vector<double>(out_ch, 0.0));
  }

  const Tensor& get(const std::string& name) const { return params_[index_.at(name)].second; }

  Tensor block(const Tensor& x, const std::string& prefix) const {
    const Tensor conv = conv2d(x, get(prefix + ".conv.weight"), 1, 1);
    return batch_stats_normalize(relu(conv), get(prefix + ".norm.gamma"),
                                 get(prefix + ".norm.beta"));
  }

  Tensor head(const Tensor& x, const std::string& prefix) const {
    return channel_bias(conv2d(x, get(prefix + ".weight")), get(prefix + ".bias"));
  }

  CpnConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Targets

// A grid cell is positive iff its center lies inside at least one instance
// polygon; it is assigned to the containing instance whose descriptor
// centroid (a_0, c_0) is nearest (ties: smaller instance index).
inline TargetGrid build_targets(const LabeledImage& img, const CpnConfig& cfg) {
  cfg.validate();
  TargetGrid tg;
  tg.grid_h = (img.height + cfg.stride - 1) / cfg.stride;
  tg.grid_w = (img.width + cfg.stride - 1) / cfg.stride;
  tg.objectness.assign(tg.grid_h * tg.grid_w, 0.0);

  struct Fitted {
    const Polyline* poly;
    FourierDescriptor desc;
  };
  std::vector<Fitted> fitted;
  for (const Polyline& poly : img.instances) {
    try {
      const Polyline canon = canonicalize(poly);
      fitted.push_back({&poly, fit_descriptor(canon, cfg.order)});
    } catch (const numerical_error&) {
      ++tg.skipped_instances;
    }
  }

  const double stride_px = static_cast<double>(cfg.stride);
  for (std::size_t row = 0; row < tg.grid_h; ++row)
    for (std::size_t col = 0; col < tg.grid_w; ++col) {
      const double cx = (static_cast<double>(col) + 0.5) * stride_px;
      const double cy = (static_cast<double>(row) + 0.5) * stride_px;
      std::size_t best = fitted.size();
      double best_dist = 0.0;
      for (std::size_t k = 0; k < fitted.size(); ++k) {
        if (!point_inside(*fitted[k].poly, cx, cy)) continue;
        const double dx = fitted[k].desc.a[0] - cx;
        const double dy = fitted[k].desc.c[0] - cy;
        const double dist = dx * dx + dy * dy;
        if (best == fitted.size() || dist < best_dist) {
          best = k;
          best_dist = dist;
        }
      }
      if (best < fitted.size()) {
        tg.objectness[row * tg.grid_w + col] = 1.0;
        tg.cells.push_back({row, col, fitted[best].desc});
      }
    }
  return tg;
}

// ---------------------------------------------------------------------------
// Proposal extraction

inline std::vector<Detection> extract(const ProposalGrid& grid, const CpnConfig& cfg) {
  cfg.validate();
  const std::vector<double> ts = uniform_ts(cfg.samples);
  const std::size_t coeffs = 4 * grid.order;
  std::vector<Detection> proposals;

  for (std::size_t row = 0; row < grid.grid_h; ++row)
    for (std::size_t col = 0; col < grid.grid_w; ++col) {
      const std::size_t cell = row * grid.grid_w + col;
      if (!(grid.scores[cell] > cfg.score_threshold)) continue;

      std::vector<double> flat(descriptor_dim(grid.order), 0.0);
      const double* sc = grid.shape_coeffs.data() + cell * coeffs;
      flat[0] = (static_cast<double>(col) + 0.5) * static_cast<double>(grid.stride) +
                grid.offsets[cell * 2 + 0];
      flat[2 * grid.order + 1] = (static_cast<double>(row) + 0.5) * static_cast<double>(grid.stride) +
                                 grid.offsets[cell * 2 + 1];
      for (std::size_t n = 1; n <= grid.order; ++n) {
        flat[n] = sc[n - 1];
        flat[grid.order + n] = sc[grid.order + n - 1];
        flat[2 * grid.order + 1 + n] = sc[2 * grid.order + n - 1];
        flat[3 * grid.order + 1 + n] = sc[3 * grid.order + n - 1];
      }

      Detection det;
      det.score = grid.scores[cell];
      det.descriptor = FourierDescriptor::from_flat(grid.order, flat);
      det.contour = sample_contour(det.descriptor, ts);
      for (Point& pt : det.contour) {
        const auto refined =
            refine(pt[0], pt[1], grid.residual, cfg.refine_iterations, cfg.refine_margin);
        pt = {refined[0], refined[1]};
      }
      det.box = bbox_of(det.contour);
      proposals.push_back(std::move(det));
    }

  std::vector<Detection> kept;
  for (std::size_t idx : nms(proposals, cfg.nms_threshold)) kept.push_back(proposals[idx]);
  return kept;
}

// ---------------------------------------------------------------------------
// Training

class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum)
      : lr_(learning_rate), momentum_(momentum) {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("sgd: learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("sgd: momentum must lie in [0,1)");
  }

  void step(std::vector<std::pair<std::string, Tensor>>& params) {
    if (velocity_.empty()) {
      velocity_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i)
        velocity_[i].assign(params[i].second.size(), 0.0);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& t = params[i].second;
      auto& vals = t.mutable_values();
      auto& vel = velocity_[i];
      if (t.has_grad()) {
        const auto& g = t.grad();
        for (std::size_t j = 0; j < vals.size(); ++j) {
          vel[j] = momentum_ * vel[j] + g[j];
          vals[j] -= lr_ * vel[j];
        }
      } else {
        for (std::size_t j = 0; j < vals.size(); ++j) {
          vel[j] = momentum_ * vel[j];
          vals[j] -= lr_ * vel[j];
        }
      }
      t.zero_grad();
    }
  }

 private:
  double lr_, momentum_;
  std::vector<std::vector<double>> velocity_;
};

struct TrainOptions {
  std::size_t epochs = 25;
  double learning_rate = 0.03;
  double momentum = 0.9;
  std::string checkpoint_dir;  // empty: keep weights in memory only
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean per-image loss, one entry per epoch
};

inline TrainResult train(CpnModel& model, const std::vector<LabeledImage>& dataset,
                         const TrainOptions& opt) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (opt.epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
  const CpnConfig& cfg = model.config();

  std::vector<TargetGrid> targets;
  targets.reserve(dataset.size());
  for (const LabeledImage& img : dataset) targets.push_back(build_targets(img, cfg));

  SgdMomentum optimizer(opt.learning_rate, opt.momentum);
  Rng ts_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  TrainResult result;

  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    double epoch_total = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const LabeledImage& img = dataset[i];
      const auto raw = model.forward_raw(img.pixels, img.height, img.width);
      const std::vector<double> ts = cfg.t_sampling == TSampling::kUniform
                                         ? uniform_ts(cfg.samples)
                                         : random_ts(cfg.samples, ts_rng);
      const Tensor loss =
          cpn_loss(raw.logits, raw.shape, raw.offsets, raw.field, targets[i].objectness,
                   targets[i].cells, cfg.loss, ts, cfg.stride, cfg.refine_iterations,
                   cfg.refine_margin);
      const double value = loss.value();
      if (!std::isfinite(value))
        throw numerical_error("train: diverged (non-finite loss) at epoch " +
                              std::to_string(epoch) + ", image " + std::to_string(i));
      epoch_total += value;
      backward(loss);
      optimizer.step(model.parameters());
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(dataset.size()));

    if (!opt.checkpoint_dir.empty()) {
      std::filesystem::create_directories(opt.checkpoint_dir);
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%03zu.cpnw", epoch);
      model.save((std::filesystem::path(opt.checkpoint_dir) / name).string());
    }
  }
  if (!opt.checkpoint_dir.empty())
    model.save((std::filesystem::path(opt.checkpoint_dir) / "checkpoint_final.cpnw").string());
  return result;
}

inline void write_loss_history_csv(const std::string& path, const std::vector<double>& epoch_loss) {
  std::ofstream out(path);
  if (!out) throw data_error("loss history '" + path + "': cannot open for writing");
  out << "epoch,loss\n";
  char line[64];
  for (std::size_t i = 0; i < epoch_loss.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.17g\n", i + 1, epoch_loss[i]);
    out << line;
  }
  if (!out) throw data_error("loss history '" + path + "': write failed");
}

// ---------------------------------------------------------------------------
// Evaluation

enum class MatchKind { kMask, kBox };

struct ThresholdReport {
  double tau = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct EvalReport {
  MatchKind kind = MatchKind::kMask;
  std::vector<ThresholdReport> thresholds;
  double f1_average = 0.0;
};

// Micro-averaged evaluation: TP/FP/FN summed over all images per
// threshold, then turned into precision/recall/F1.
inline EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& detections,
                                      const std::vector<LabeledImage>& images, MatchKind kind,
                                      const std::vector<double>& taus = canonical_taus()) {
  if (detections.size() != images.size())
    throw std::invalid_argument("evaluate: detection batches do not match image count");
  if (taus.empty()) throw std::invalid_argument("evaluate: no thresholds");

  std::vector<MatchResult> totals(taus.size());
  for (std::size_t t = 0; t < taus.size(); ++t) totals[t].tau = taus[t];

  for (std::size_t i = 0; i < images.size(); ++i) {
    const LabeledImage& img = images[i];
    if (kind == MatchKind::kMask) {
      std::vector<Mask> pred_masks, gt_masks;
      for (const Detection& det : detections[i])
        pred_masks.push_back(rasterize(det.contour, img.height, img.width));
      for (const Polyline& poly : img.instances)
        gt_masks.push_back(rasterize(poly, img.height, img.width));
      for (std::size_t t = 0; t < taus.size(); ++t) {
        const MatchResult m = match(pred_masks, gt_masks, taus[t]);
        totals[t].tp += m.tp;
        totals[t].fp += m.fp;
        totals[t].fn += m.fn;
      }
    } else {
      std::vector<Box> pred_boxes, gt_boxes;
      for (const Detection& det : detections[i]) pred_boxes.push_back(det.box);
      for (const Polyline& poly : img.instances) gt_boxes.push_back(bbox_of(poly));
      for (std::size_t t = 0; t < taus.size(); ++t) {
        const MatchResult m = match(pred_boxes, gt_boxes, taus[t]);
        totals[t].tp += m.tp;
        totals[t].fp += m.fp;
        totals[t].fn += m.fn;
      }
    }
  }

  EvalReport report;
  report.kind = kind;
  double f1_total = 0.0;
  for (const MatchResult& m : totals) {
    ThresholdReport tr;
    tr.tau = m.tau;
    tr.tp = m.tp;
    tr.fp = m.fp;
    tr.fn = m.fn;
    tr.precision = precision(m);
    tr.recall = recall(m);
    tr.f1 = f1(m);
    f1_total += tr.f1;
    report.thresholds.push_back(tr);
  }
  report.f1_average = f1_total / static_cast<double>(taus.size());
  return report;
}

inline EvalReport run_evaluation(const CpnModel& model, const std::vector<LabeledImage>& images,
                                 MatchKind kind,
                                 const std::vector<double>& taus = canonical_taus()) {
  std::vector<std::vector<Detection>> detections;
  detections.reserve(images.size());
  for (const LabeledImage& img : images) {
    const ProposalGrid grid = model.forward(img.pixels, img.height, img.width);
    detections.push_back(extract(grid, model.config()));
  }
  return evaluate_detections(detections, images, kind, taus);
}

}  // namespace cpn
