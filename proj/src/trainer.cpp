#include "looptrans/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include <json.hpp>

#include "looptrans/distill.hpp"
#include "looptrans/io.hpp"

namespace looptrans {

using json = nlohmann::json;

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  for (double l : {lambda_cls, lambda_dill, lambda_pixel, lambda_corr, lambda_align})
    if (!(l >= 0) || !std::isfinite(l)) throw ConfigError("loss weights must be finite and non-negative");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (n_exo < 1) throw ConfigError("n_exo must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (K < 2) throw ConfigError("K must be at least 2");
  if (!(mu >= 0 && mu <= 1)) throw ConfigError("mu must lie in [0, 1]");
  if (!(tau > 0)) throw ConfigError("tau must be positive");
  if (n_classes < 1) throw ConfigError("n_classes must be at least 1");
  if (!(head_init_std >= 0)) throw ConfigError("head_init_std must be non-negative");
  if (backbone.trainable) throw ConfigError("the trainer consumes precomputed features; backbone.trainable must be false");
  try {
    backbone.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("backbone: ") + e.what());
  }
}

const char* baseline_mode_name(BaselineMode m) { return m == BaselineMode::OneWay ? "one_way" : "looptrans"; }
const char* infer_source_name(InferSource s) { return s == InferSource::Activation ? "activation" : "pixel"; }

namespace {

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

}  // namespace

TrainConfig config_from_json(const std::string& text, TrainConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "lambda_cls") c.lambda_cls = get_as<double>(v, key);
    else if (key == "lambda_dill") c.lambda_dill = get_as<double>(v, key);
    else if (key == "lambda_pixel") c.lambda_pixel = get_as<double>(v, key);
    else if (key == "lambda_corr") c.lambda_corr = get_as<double>(v, key);
    else if (key == "lambda_align") c.lambda_align = get_as<double>(v, key);
    else if (key == "lr") c.lr = get_as<double>(v, key);
    else if (key == "momentum") c.momentum = get_as<double>(v, key);
    else if (key == "epochs") c.epochs = get_as<std::size_t>(v, key);
    else if (key == "warmup_epochs") c.warmup_epochs = get_as<std::size_t>(v, key);
    else if (key == "batch_size") c.batch_size = get_as<std::size_t>(v, key);
    else if (key == "n_exo") c.n_exo = get_as<std::size_t>(v, key);
    else if (key == "K") c.K = get_as<std::size_t>(v, key);
    else if (key == "M") c.M = get_as<std::size_t>(v, key);
    else if (key == "mu") c.mu = get_as<double>(v, key);
    else if (key == "tau") c.tau = get_as<double>(v, key);
    else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
    else if (key == "neg_cls_term") c.neg_cls_term = get_as<bool>(v, key);
    else if (key == "detach_teacher") c.detach_teacher = get_as<bool>(v, key);
    else if (key == "head_init_std") c.head_init_std = get_as<double>(v, key);
    else if (key == "n_classes") c.n_classes = get_as<std::size_t>(v, key);
    else if (key == "baseline_mode") {
      const auto s = get_as<std::string>(v, key);
      if (s == "looptrans") c.baseline_mode = BaselineMode::LoopTrans;
      else if (s == "one_way") c.baseline_mode = BaselineMode::OneWay;
      else throw ConfigError("baseline_mode must be 'looptrans' or 'one_way', got '" + s + "'");
    } else if (key == "pixel_loss_type") {
      try {
        c.pixel_loss_type = parse_pixel_loss_type(get_as<std::string>(v, key));
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    } else if (key == "infer_source") {
      const auto s = get_as<std::string>(v, key);
      if (s == "pixel") c.infer_source = InferSource::Pixel;
      else if (s == "activation") c.infer_source = InferSource::Activation;
      else throw ConfigError("infer_source must be 'pixel' or 'activation', got '" + s + "'");
    } else if (key == "backbone") {
      if (!v.is_object()) throw ConfigError("config key 'backbone' must be an object");
      for (const auto& [bk, bv] : v.items()) {
        const auto full = "backbone." + bk;
        if (bk == "patch_size") c.backbone.patch_size = get_as<std::size_t>(bv, full);
        else if (bk == "channels") c.backbone.channels = get_as<std::size_t>(bv, full);
        else if (bk == "image_size") c.backbone.image_size = get_as<std::size_t>(bv, full);
        else if (bk == "trainable") c.backbone.trainable = get_as<bool>(bv, full);
        else throw ConfigError("unknown config key '" + full + "'");
      }
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::string config_to_json(const TrainConfig& c) {
  json j = {{"lambda_cls", c.lambda_cls},
            {"lambda_dill", c.lambda_dill},
            {"lambda_pixel", c.lambda_pixel},
            {"lambda_corr", c.lambda_corr},
            {"lambda_align", c.lambda_align},
            {"lr", c.lr},
            {"momentum", c.momentum},
            {"epochs", c.epochs},
            {"warmup_epochs", c.warmup_epochs},
            {"batch_size", c.batch_size},
            {"n_exo", c.n_exo},
            {"K", c.K},
            {"M", c.M},
            {"mu", c.mu},
            {"tau", c.tau},
            {"seed", c.seed},
            {"baseline_mode", baseline_mode_name(c.baseline_mode)},
            {"neg_cls_term", c.neg_cls_term},
            {"pixel_loss_type", pixel_loss_type_name(c.pixel_loss_type)},
            {"infer_source", infer_source_name(c.infer_source)},
            {"detach_teacher", c.detach_teacher},
            {"head_init_std", c.head_init_std},
            {"n_classes", c.n_classes},
            {"backbone",
             {{"patch_size", c.backbone.patch_size},
              {"channels", c.backbone.channels},
              {"image_size", c.backbone.image_size},
              {"trainable", c.backbone.trainable}}}};
  return j.dump(2);
}

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::uint64_t config_hash(const TrainConfig& cfg) { return fnv1a(config_to_json(cfg)); }

// ---------------------------------------------------------------- state

ParamRefs ModelState::trainable_params() {
  ParamRefs out;
  scam.append_refs("scam/", out);
  if (scam_exo) scam_exo->append_refs("scam_exo/", out);
  pixel.append_refs("pixel/", out);
  return out;
}

ParamRefs ModelState::all_tensors() {
  ParamRefs out;
  if (backbone) backbone->append_refs("backbone/", out);
  auto tp = trainable_params();
  out.insert(out.end(), tp.begin(), tp.end());
  for (std::size_t i = 0; i < velocity.size(); ++i) out.emplace_back("velocity/" + tp[i].first, &velocity[i]);
  return out;
}

ModelState init_state(const TrainConfig& cfg, std::optional<std::size_t> channels) {
  cfg.validate();
  ModelState s;
  if (!channels) {
    Rng brng(cfg.seed ^ 0xB5AD4ECEDA1CE2A9ull);
    s.backbone = BackboneParams::init(cfg.backbone, brng);
    channels = cfg.backbone.channels;
  }
  Rng rng(cfg.seed);
  const bool one_way = cfg.baseline_mode == BaselineMode::OneWay;
  const std::size_t m = one_way ? 0 : cfg.M;
  s.scam = ScamParams::init(*channels, cfg.n_classes, m, rng, cfg.head_init_std);
  if (one_way) s.scam_exo = ScamParams::init(*channels, cfg.n_classes, 0, rng, cfg.head_init_std);
  s.pixel = PixelDecoderParams::init(*channels, cfg.n_classes, rng, cfg.head_init_std);
  if (cfg.momentum > 0)
    for (const auto& [name, t] : s.trainable_params()) s.velocity.emplace_back(t->shape());
  s.rng.seed(cfg.seed ^ 0x5851F42D4C957F2Dull);
  return s;
}

TrainSample make_train_sample(std::string sample_id, std::size_t label, FeatureMap ego, std::vector<FeatureMap> exo,
                              std::optional<BinaryGrid> gt_mask, const TrainConfig& cfg) {
  if (label >= cfg.n_classes)
    throw ContractError("sample " + sample_id + ": label " + std::to_string(label) + " outside [0, " +
                        std::to_string(cfg.n_classes) + ")");
  if (exo.size() != cfg.n_exo)
    throw ContractError("sample " + sample_id + ": expected " + std::to_string(cfg.n_exo) + " exocentric maps, got " +
                        std::to_string(exo.size()));
  TrainSample s;
  s.parts = cluster_parts(ego.grid, cfg.K, fnv1a(sample_id, cfg.seed ^ 0xcbf29ce484222325ull));
  s.sample_id = std::move(sample_id);
  s.label = label;
  s.ego = std::move(ego);
  s.ego.view = View::Ego;
  s.exo = std::move(exo);
  for (auto& f : s.exo) f.view = View::Exo;
  s.gt_mask = std::move(gt_mask);
  return s;
}

std::vector<TrainSample> prepare_samples(const std::vector<synth::SceneSample>& scenes, const ModelState& state,
                                         const TrainConfig& cfg) {
  if (!state.backbone) throw ContractError("prepare_samples: state has no backbone");
  std::vector<TrainSample> out(scenes.size());
  std::vector<std::string> errors(scenes.size());
  const auto n = static_cast<std::ptrdiff_t>(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto& sc = scenes[i];
      auto ego = extract_features(sc.ego_image, cfg.backbone, *state.backbone, View::Ego, sc.sample_id + "/ego");
      std::vector<FeatureMap> exo;
      for (std::size_t e = 0; e < sc.exo_images.size(); ++e)
        exo.push_back(extract_features(sc.exo_images[e], cfg.backbone, *state.backbone, View::Exo,
                                       sc.sample_id + "/exo" + std::to_string(e)));
      out[i] = make_train_sample(sc.sample_id, sc.label, std::move(ego), std::move(exo), sc.gt_mask, cfg);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw ContractError("prepare_samples: " + e);
  return out;
}

// ---------------------------------------------------------------- step

namespace {

Var mean_of(const std::vector<Var>& xs) {
  Var acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = ops::add(acc, xs[i]);
  return ops::scale(acc, 1.0 / static_cast<double>(xs.size()));
}

void check_finite(const Var& v, const char* what, const std::string& sample_id) {
  if (!std::isfinite(v.item()))
    throw NumericError(std::string("non-finite ") + what + " loss on sample " + sample_id, sample_id);
}

struct SampleLosses {
  Var cls, corr, align;
  std::optional<Var> dill, pixel;
};

}  // namespace

LossRecord train_step(const std::vector<const TrainSample*>& batch, ModelState& state, const TrainConfig& cfg) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const bool one_way = cfg.baseline_mode == BaselineMode::OneWay;
  if (one_way != state.scam_exo.has_value()) throw ContractError("train_step: state does not match baseline_mode");
  const bool active = !one_way && state.epoch >= cfg.warmup_epochs;

  Tape tape;
  const auto scam = BoundScam::bind(tape, state.scam, true);
  std::optional<BoundScam> scam_exo;
  if (one_way) scam_exo = BoundScam::bind(tape, *state.scam_exo, true);
  // Before warmup ends the decoder stays off the tape, so it cannot change.
  const auto dec = BoundPixelDecoder::bind(tape, state.pixel, active);

  LossRecord rec;
  rec.epoch = state.epoch;
  rec.step = state.steps;
  std::vector<SampleLosses> per;
  for (const auto* s : batch) {
    if (s->exo.empty()) throw ContractError("train_step: sample " + s->sample_id + " has no exocentric maps");
    const std::size_t c = s->label;
    const FeatureVar ego{View::Ego, tape.constant(s->ego.grid)};
    const auto a_ego = scam_forward(ego, scam);
    std::vector<FeatureVar> exo_f;
    std::vector<ActivationMaps> a_exo;
    for (const auto& f : s->exo) {
      exo_f.push_back({View::Exo, tape.constant(f.grid)});
      a_exo.push_back(scam_forward(exo_f.back(), one_way ? *scam_exo : scam));
    }
    std::vector<Var> zs;
    for (const auto& a : a_exo) zs.push_back(a.scores);
    const Var z_exo = mean_of(zs);
    const Var g_ego = ops::channel(a_ego.class_maps, c);

    SampleLosses L;
    if (one_way) {
      L.cls = ops::add(single_view_cls_loss(z_exo, c, cfg.neg_cls_term),
                       single_view_cls_loss(a_ego.scores, c, cfg.neg_cls_term));
      std::vector<Var> hs;
      for (std::size_t e = 0; e < a_exo.size(); ++e)
        hs.push_back(masked_pooled_feature(ops::channel(a_exo[e].class_maps, c), exo_f[e].grid));
      const auto d = ops::sub(mean_of(hs), masked_pooled_feature(g_ego, ego.grid));
      L.align = ops::sum(ops::mul(d, d));
      L.corr = tape.constant(Tensor::scalar(0.0));
    } else {
      L.cls = joint_cls_loss(z_exo, a_ego.scores, c, cfg.neg_cls_term);
      L.corr = corr_loss(z_exo, a_ego.scores);
      L.align = tape.constant(Tensor::scalar(0.0));
    }
    check_finite(L.cls, "classification", s->sample_id);
    check_finite(L.corr, "correlation", s->sample_id);
    check_finite(L.align, "alignment", s->sample_id);

    if (active) {
      const auto fg = threshold_activation(g_ego.value(), cfg.mu);
      const auto pm = select_pseudo_mask(s->parts, fg);
      const Var p_c = ops::channel(pixel_forward(ego, dec), c);
      if (pm.valid) {
        L.pixel = pixel_loss(p_c, pm, cfg.pixel_loss_type, &rec.pixel_skipped);
        check_finite(*L.pixel, "pixel", s->sample_id);
        ++rec.pixel_valid;
      } else {
        ++rec.pixel_skipped;
      }
      PooledFeatures pf;
      pf.f_pixel = masked_pooled_feature(p_c, ego.grid);
      if (cfg.detach_teacher) pf.f_pixel = ops::detach(pf.f_pixel);
      std::vector<Var> fe;
      for (std::size_t e = 0; e < a_exo.size(); ++e)
        fe.push_back(masked_pooled_feature(ops::channel(a_exo[e].class_maps, c), exo_f[e].grid));
      pf.f_exo = mean_of(fe);
      for (std::size_t m = 0; m < state.scam.n_noise(); ++m) {
        std::vector<Var> fn;
        for (std::size_t e = 0; e < a_exo.size(); ++e)
          fn.push_back(masked_pooled_feature(ops::channel(*a_exo[e].noise_maps, m), exo_f[e].grid));
        pf.f_noise.push_back(mean_of(fn));
      }
      L.dill = denoise_loss(pf, cfg.tau);
      check_finite(*L.dill, "distillation", s->sample_id);
    }
    per.push_back(std::move(L));
  }

  std::vector<Var> cls, corr, align, dill, pix;
  for (const auto& L : per) {
    cls.push_back(L.cls);
    corr.push_back(L.corr);
    align.push_back(L.align);
    if (L.dill) dill.push_back(*L.dill);
    if (L.pixel) pix.push_back(*L.pixel);
  }
  const Var zero = tape.constant(Tensor::scalar(0.0));
  const Var l_cls = mean_of(cls);
  const Var l_corr = mean_of(corr);
  const Var l_align = mean_of(align);
  const Var l_dill = dill.empty() ? zero : mean_of(dill);
  const Var l_pix = pix.empty() ? zero : mean_of(pix);

  Var total;
  if (one_way) {
    total = ops::add(ops::scale(l_cls, cfg.lambda_cls), ops::scale(l_align, cfg.lambda_align));
  } else {
    total = ops::add(ops::add(ops::scale(l_cls, cfg.lambda_cls), ops::scale(l_dill, cfg.lambda_dill)),
                     ops::add(ops::scale(l_pix, cfg.lambda_pixel), ops::scale(l_corr, cfg.lambda_corr)));
  }
  if (!std::isfinite(total.item())) throw NumericError("non-finite total loss", batch.front()->sample_id);

  tape.backward(total);

  std::vector<Var> vars;
  scam.append_vars(vars);
  if (scam_exo) scam_exo->append_vars(vars);
  dec.append_vars(vars);
  auto params = state.trainable_params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!vars[i].requires_grad()) continue;
    const auto g = tape.grad(vars[i]);
    auto& p = params[i].second->vec();
    if (cfg.momentum > 0) {
      auto& v = state.velocity.at(i).vec();
      for (std::size_t k = 0; k < p.size(); ++k) {
        v[k] = cfg.momentum * v[k] + g[k];
        p[k] -= cfg.lr * v[k];
      }
    } else {
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= cfg.lr * g[k];
    }
  }

  rec.total = total.item();
  rec.cls = l_cls.item();
  rec.dill = l_dill.item();
  rec.pixel = l_pix.item();
  rec.corr = l_corr.item();
  rec.align = l_align.item();
  ++state.steps;
  return rec;
}

// ---------------------------------------------------------------- inference

namespace {

Tensor minmax(const Tensor& m) {
  const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
  const double mn = *lo, range = *hi - *lo;
  Tensor out(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = (m[i] - mn) / (range + 1e-8);
  return out;
}

Tensor take_channel(const Tensor& hwk, std::size_t c) {
  const std::size_t h = hwk.dim(0), w = hwk.dim(1), k = hwk.dim(2);
  Tensor out(Shape{h, w});
  for (std::size_t i = 0; i < h * w; ++i) out[i] = hwk[i * k + c];
  return out;
}

}  // namespace

Tensor infer(const FeatureMap& ego, std::size_t label, const ModelState& state, const TrainConfig& cfg) {
  if (label >= state.scam.n_classes()) throw ContractError("infer: label out of range");
  FeatureMap f = ego;
  f.view = View::Ego;
  if (cfg.baseline_mode == BaselineMode::OneWay || cfg.infer_source == InferSource::Activation)
    return minmax(take_channel(scam_forward(f, state.scam).class_maps, label));
  return minmax(take_channel(pixel_forward(f, state.pixel), label));
}

EvalSummary evaluate(const std::vector<TrainSample>& samples, const ModelState& state, const TrainConfig& cfg) {
  EvalSummary out;
  if (samples.empty()) return out;
  std::vector<metrics::EvalItem> items(samples.size());
  std::vector<double> ious(samples.size());
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
  std::vector<std::string> errors(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto& s = samples[i];
      if (!s.gt_mask) throw ContractError("sample " + s.sample_id + " has no ground-truth mask");
      auto& it = items[i];
      it.sample_id = s.sample_id;
      it.label = s.label;
      it.pred = infer(s.ego, s.label, state, cfg);
      it.gt = Tensor(it.pred.shape());
      for (std::size_t k = 0; k < it.gt.size(); ++k) it.gt[k] = s.gt_mask->cells[k];
      it.fix = *s.gt_mask;
      BinaryGrid bin(s.gt_mask->height, s.gt_mask->width);
      for (std::size_t k = 0; k < bin.size(); ++k) bin.cells[k] = it.pred[k] >= 0.5 ? 1 : 0;
      ious[i] = iou(bin, *s.gt_mask);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw ContractError("evaluate: " + e);
  out.scores = metrics::evaluate_dataset(items).mean;
  double total = 0.0;
  for (double v : ious) total += v;
  out.mean_iou = total / static_cast<double>(ious.size());
  out.n = samples.size();
  return out;
}

// ---------------------------------------------------------------- loop

TrainResult train(const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& test_set,
                  const TrainConfig& cfg, std::optional<ModelState> initial, const TrainOptions& opts) {
  cfg.validate();
  if (train_set.empty() && cfg.epochs > 0) throw ContractError("train: empty training set");
  const std::size_t channels = train_set.empty() ? cfg.backbone.channels : train_set.front().ego.channels();
  TrainResult r{initial ? std::move(*initial) : init_state(cfg, channels), {}, {}, {}};
  r.best = r.state;
  double best_kld = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  while (r.state.epoch < cfg.epochs) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), r.state.rng);
    double loss_sum = 0.0;
    std::size_t n_steps = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<const TrainSample*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) batch.push_back(&train_set[order[i]]);
      r.steps.push_back(train_step(batch, r.state, cfg));
      loss_sum += r.steps.back().total;
      ++n_steps;
    }
    ++r.state.epoch;

    EpochRecord er;
    er.epoch = r.state.epoch;
    er.mean_loss = n_steps ? loss_sum / static_cast<double>(n_steps) : 0.0;
    er.eval = evaluate(test_set, r.state, cfg);
    er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.history.push_back(er);

    if (test_set.empty() || er.eval.scores.kld < best_kld) {
      best_kld = er.eval.scores.kld;
      r.best = r.state;
      if (opts.checkpoint_dir) save_checkpoint(*opts.checkpoint_dir / "best.ltck", r.best, cfg);
    }
    if (opts.checkpoint_dir) save_checkpoint(*opts.checkpoint_dir / "last.ltck", r.state, cfg);
    if (opts.on_epoch) opts.on_epoch(er);
  }
  return r;
}

std::string format_history(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,mean_loss,kld,sim,nss,auc_j,mean_iou\n";
  for (const auto& h : history)
    os << h.epoch << ',' << h.mean_loss << ',' << h.eval.scores.kld << ',' << h.eval.scores.sim << ','
       << h.eval.scores.nss << ',' << h.eval.scores.auc_j << ',' << h.eval.mean_iou << '\n';
  return os.str();
}

std::string format_steps(const std::vector<LossRecord>& steps) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,step,total,cls,dill,pixel,corr,align,pixel_valid,pixel_skipped\n";
  for (const auto& s : steps)
    os << s.epoch << ',' << s.step << ',' << s.total << ',' << s.cls << ',' << s.dill << ',' << s.pixel << ','
       << s.corr << ',' << s.align << ',' << s.pixel_valid << ',' << s.pixel_skipped << '\n';
  return os.str();
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_str(std::vector<std::uint8_t>& b, const std::string& s) {
  put_u64(b, s.size());
  b.insert(b.end(), s.begin(), s.end());
}

struct Reader {
  std::span<const std::uint8_t> b;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (b.size() - pos < n) throw io::FormatError("truncated checkpoint", pos);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelState& state_in, const TrainConfig& cfg) {
  ModelState state = state_in;  // all_tensors() hands out mutable refs
  std::vector<std::uint8_t> b{'L', 'T', 'C', 'K'};
  put_u32(b, kCheckpointVersion);
  put_u64(b, config_hash(cfg));
  put_str(b, config_to_json(cfg));
  put_u64(b, state.epoch);
  put_u64(b, state.steps);
  std::ostringstream rs;
  rs << state.rng;
  put_str(b, rs.str());
  const auto tensors = state.all_tensors();
  put_u32(b, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_str(b, name);
    put_u32(b, static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) put_u64(b, d);
    for (double v : t->data()) put_u64(b, std::bit_cast<std::uint64_t>(v));
  }
  put_u32(b, io::crc32(b));
  return b;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "LTCK", 4) != 0) throw io::FormatError("bad checkpoint magic", 0);
  Reader tail{bytes, bytes.size() - 4};
  if (tail.u32() != io::crc32(bytes.first(bytes.size() - 4)))
    throw io::FormatError("checkpoint CRC mismatch", bytes.size() - 4);
  Reader r{bytes.first(bytes.size() - 4), 4};
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw io::FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  const auto hash = r.u64();
  Checkpoint ck;
  ck.config = config_from_json(r.str());
  if (config_hash(ck.config) != hash) throw io::FormatError("checkpoint config hash mismatch", 8);

  const auto epoch = r.u64();
  const auto steps = r.u64();
  const auto rng_text = r.str();
  const auto n = r.u32();
  std::map<std::string, Tensor> stored;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = r.str();
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const auto numel = shape_numel(shape);
    r.need(numel * 8);
    std::vector<double> data(numel);
    for (auto& v : data) v = std::bit_cast<double>(r.u64());
    stored.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.pos != r.b.size()) throw io::FormatError("trailing bytes in checkpoint", r.pos);

  const auto it = stored.find("scam/mlp_w");
  if (it == stored.end()) throw io::FormatError("checkpoint lacks scam/mlp_w", 0);
  const bool has_backbone = stored.count("backbone/patch_embed") > 0;
  ck.state = init_state(ck.config, has_backbone ? std::nullopt : std::optional<std::size_t>(it->second.dim(0)));
  auto targets = ck.state.all_tensors();
  if (targets.size() != stored.size()) throw io::FormatError("checkpoint tensor set does not match its config", 0);
  for (auto& [name, t] : targets) {
    auto s = stored.find(name);
    if (s == stored.end()) throw io::FormatError("checkpoint lacks tensor " + name, 0);
    if (s->second.shape() != t->shape())
      throw io::FormatError("checkpoint tensor " + name + " has shape " + shape_str(s->second.shape()), 0);
    *t = std::move(s->second);
  }
  ck.state.epoch = epoch;
  ck.state.steps = steps;
  std::istringstream rs(rng_text);
  rs >> ck.state.rng;
  if (!rs) throw io::FormatError("checkpoint rng state unreadable", 0);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& state, const TrainConfig& cfg) {
  io::write_bytes(path, encode_checkpoint(state, cfg));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_bytes(path)); }

}  // namespace looptrans
