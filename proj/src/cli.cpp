#include "looptrans/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "looptrans/io.hpp"
#include "looptrans/trainer.hpp"

namespace looptrans::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& p) {
  const auto b = io::read_bytes(p);
  return {b.begin(), b.end()};
}

void write_text(const fs::path& p, const std::string& s) {
  io::write_bytes(p, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + " is not valid JSON: " + e.what());
  }
}

std::size_t as_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("'" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

double as_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("'" + key + "' must be a number");
  return v.get<double>();
}

std::vector<std::size_t> as_counts(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("'" + key + "' must be an array of integers");
  std::vector<std::size_t> out;
  for (const auto& x : v) out.push_back(as_count(x, key));
  return out;
}

synth::WorldSpec world_from_json(const json& j, synth::WorldSpec w) {
  if (!j.is_object()) throw ConfigError("world spec must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k == "n_classes") w.n_classes = as_count(v, k);
    else if (k == "parts_min") w.parts_min = as_count(v, k);
    else if (k == "parts_max") w.parts_max = as_count(v, k);
    else if (k == "image_size") w.image_size = as_count(v, k);
    else if (k == "patch_size") w.patch_size = as_count(v, k);
    else if (k == "n_exo") w.n_exo = as_count(v, k);
    else if (k == "p_occ") w.p_occ = as_number(v, k);
    else if (k == "clutter_min") w.clutter_min = as_count(v, k);
    else if (k == "clutter_max") w.clutter_max = as_count(v, k);
    else if (k == "noise_amplitude") w.noise_amplitude = as_number(v, k);
    else if (k == "allowed_styles") w.allowed_styles = as_counts(v, k);
    else throw ConfigError("unknown world key '" + k + "'");
  }
  try {
    w.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return w;
}

json world_to_json(const synth::WorldSpec& w) {
  return {{"n_classes", w.n_classes},   {"parts_min", w.parts_min},     {"parts_max", w.parts_max},
          {"image_size", w.image_size}, {"patch_size", w.patch_size},   {"n_exo", w.n_exo},
          {"p_occ", w.p_occ},           {"clutter_min", w.clutter_min}, {"clutter_max", w.clutter_max},
          {"noise_amplitude", w.noise_amplitude}, {"allowed_styles", w.allowed_styles}};
}

BinaryGrid mask_from_pgm(const fs::path& p) {
  const auto img = io::read_pgm(p);
  BinaryGrid g(img.height, img.width);
  for (std::size_t i = 0; i < g.size(); ++i) g.cells[i] = img.pixels[i] >= 128 ? 1 : 0;
  return g;
}

// -- data sources for `train` ------------------------------------------------

struct DataSpec {
  std::optional<fs::path> manifest;
  std::optional<fs::path> test_manifest;
  std::optional<json> world;
  std::size_t train_count = 200;
  std::size_t test_count = 50;
  std::vector<std::size_t> held_out_styles;
  std::optional<std::uint64_t> world_seed;
};

DataSpec data_from_json(const json& j, const fs::path& base) {
  if (!j.is_object()) throw ConfigError("'data' must be a JSON object");
  DataSpec d;
  for (const auto& [k, v] : j.items()) {
    if (k == "manifest" || k == "test_manifest") {
      if (!v.is_string()) throw ConfigError("'data." + k + "' must be a path string");
      fs::path p = v.get<std::string>();
      if (p.is_relative()) p = base / p;
      (k == "manifest" ? d.manifest : d.test_manifest) = p;
    } else if (k == "world") d.world = v;
    else if (k == "train_count") d.train_count = as_count(v, "data." + k);
    else if (k == "test_count") d.test_count = as_count(v, "data." + k);
    else if (k == "held_out_styles") d.held_out_styles = as_counts(v, "data." + k);
    else if (k == "world_seed") d.world_seed = as_count(v, "data." + k);
    else throw ConfigError("unknown config key 'data." + k + "'");
  }
  if (d.test_manifest && !d.manifest) throw ConfigError("'data.test_manifest' needs 'data.manifest'");
  if (d.manifest && d.world) throw ConfigError("'data.manifest' and 'data.world' are mutually exclusive");
  return d;
}

std::vector<TrainSample> load_manifest_samples(const fs::path& path, const TrainConfig& cfg) {
  const auto m = io::read_manifest(path, cfg.n_classes, true);
  std::vector<TrainSample> out;
  for (const auto& e : m.entries) {
    auto ego = load_feature_file(e.ego_path);
    ego.view = View::Ego;
    std::vector<FeatureMap> exo;
    for (const auto& p : e.exo_paths) {
      exo.push_back(load_feature_file(p));
      if (exo.back().grid.shape() != ego.grid.shape())
        throw DataError("sample " + e.sample_id + ": exocentric map " + p.string() + " has shape " +
                        shape_str(exo.back().grid.shape()) + ", ego has " + shape_str(ego.grid.shape()));
    }
    std::optional<BinaryGrid> gt;
    if (e.gt_path) {
      gt = mask_from_pgm(*e.gt_path);
      if (gt->height != ego.height() || gt->width != ego.width())
        throw DataError("sample " + e.sample_id + ": ground-truth mask does not match the feature grid");
    }
    out.push_back(make_train_sample(e.sample_id, e.label, std::move(ego), std::move(exo), std::move(gt), cfg));
  }
  if (!out.empty()) {
    const auto& s0 = out.front().ego.grid.shape();
    for (const auto& s : out)
      if (s.ego.grid.shape() != s0) throw DataError("sample " + s.sample_id + ": feature shape differs from the first sample");
  }
  return out;
}

// -- commands ------------------------------------------------------------------

struct TrainArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  if (!fs::is_regular_file(a.config)) {
    err << "config file not found: " << a.config << '\n';
    return kExitUsage;
  }
  auto j = parse_json(read_text(a.config), "config");
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  DataSpec data;
  if (j.contains("data")) {
    data = data_from_json(j["data"], fs::path(a.config).parent_path());
    j.erase("data");
  }
  auto cfg = config_from_json(j.dump());
  if (a.seed) cfg.seed = *a.seed;

  std::vector<TrainSample> train_set, test_set;
  std::optional<ModelState> initial;
  if (data.manifest) {
    train_set = load_manifest_samples(*data.manifest, cfg);
    if (data.test_manifest) test_set = load_manifest_samples(*data.test_manifest, cfg);
    if (!test_set.empty() && !train_set.empty() && test_set.front().ego.grid.shape() != train_set.front().ego.grid.shape())
      throw DataError("train and test feature shapes differ");
  } else {
    synth::WorldSpec base;
    base.n_classes = cfg.n_classes;
    base.n_exo = cfg.n_exo;
    base.image_size = cfg.backbone.image_size;
    base.patch_size = cfg.backbone.patch_size;
    const auto world = data.world ? world_from_json(*data.world, base) : base;
    if (world.n_classes != cfg.n_classes || world.n_exo != cfg.n_exo || world.image_size != cfg.backbone.image_size ||
        world.patch_size != cfg.backbone.patch_size)
      throw ConfigError("world spec disagrees with the training config (n_classes, n_exo, image or patch size)");
    const auto wseed = data.world_seed.value_or(cfg.seed);
    auto train_world = world, test_world = world;
    if (!data.held_out_styles.empty()) {
      const std::set<std::size_t> held(data.held_out_styles.begin(), data.held_out_styles.end());
      train_world.allowed_styles.clear();
      for (std::size_t s = 0; s < synth::kStyleCount; ++s)
        if (!held.count(s)) train_world.allowed_styles.push_back(s);
      test_world.allowed_styles = data.held_out_styles;
      train_world.validate();
      test_world.validate();
    }
    initial = init_state(cfg);
    train_set = prepare_samples(synth::generate_dataset(train_world, data.train_count, wseed, 0), *initial, cfg);
    test_set = prepare_samples(synth::generate_dataset(test_world, data.test_count, wseed, data.train_count), *initial, cfg);
  }

  const fs::path dir = a.out;
  fs::create_directories(dir);
  write_text(dir / "config.json", config_to_json(cfg) + "\n");
  TrainOptions opts;
  opts.checkpoint_dir = dir;
  opts.on_epoch = [&](const EpochRecord& e) {
    out << "epoch " << e.epoch << " loss " << e.mean_loss << " kld " << e.eval.scores.kld << " sim "
        << e.eval.scores.sim << " iou " << e.eval.mean_iou << '\n';
  };
  const auto r = train(train_set, test_set, cfg, std::move(initial), opts);
  if (cfg.epochs == 0) {
    save_checkpoint(dir / "last.ltck", r.state, cfg);
    save_checkpoint(dir / "best.ltck", r.best, cfg);
  }
  write_text(dir / "history.csv", format_history(r.history));
  write_text(dir / "steps.csv", format_steps(r.steps));
  return kExitOk;
}

struct EvalArgs {
  std::string pred, gt, report, manifest;
};

std::map<std::string, fs::path> pgm_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw io::IoError("not a directory", dir);
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") out[e.path().stem().string()] = e.path();
  return out;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const auto preds = pgm_files(a.pred);
  const auto gts = pgm_files(a.gt);
  std::map<std::string, std::size_t> labels;
  if (!a.manifest.empty())
    for (const auto& e : io::read_manifest(a.manifest, 0, false).entries) labels[e.sample_id] = e.label;

  std::vector<metrics::EvalItem> items;
  std::vector<std::pair<std::string, std::string>> excluded;
  for (const auto& [id, p] : preds) {
    const auto g = gts.find(id);
    if (g == gts.end()) {
      excluded.emplace_back(id, "no ground truth");
      continue;
    }
    metrics::EvalItem it;
    it.sample_id = id;
    it.pred = io::from_gray(io::read_pgm(p));
    it.gt = io::from_gray(io::read_pgm(g->second));
    if (it.pred.shape() != it.gt.shape()) {
      excluded.emplace_back(id, "size mismatch " + shape_str(it.pred.shape()) + " vs " + shape_str(it.gt.shape()));
      continue;
    }
    if (!labels.empty()) {
      const auto l = labels.find(id);
      if (l == labels.end()) {
        excluded.emplace_back(id, "not in manifest");
        continue;
      }
      it.label = l->second;
    }
    items.push_back(std::move(it));
  }
  for (const auto& [id, p] : gts)
    if (!preds.count(id)) excluded.emplace_back(id, "no prediction");

  auto rep = metrics::evaluate_dataset(items);
  if (labels.empty()) rep.by_class.clear();
  std::string text = format_report(rep);
  text += "# exclusions\n";
  for (const auto& [id, why] : excluded) text += id + "," + why + "\n";
  write_text(a.report, text);
  out << "evaluated " << items.size() << " samples: kld " << rep.mean.kld << " sim " << rep.mean.sim << " nss "
      << rep.mean.nss << " auc_j " << rep.mean.auc_j << '\n';
  if (!excluded.empty()) {
    err << excluded.size() << " sample(s) excluded, see the report\n";
    return kExitDataMismatch;
  }
  return kExitOk;
}

struct SynthArgs {
  std::string spec, out;
  std::size_t count = 0;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream&) {
  synth::WorldSpec world;
  BackboneConfig bb;
  if (!a.spec.empty()) {
    auto j = parse_json(read_text(a.spec), "world spec");
    if (!j.is_object()) throw ConfigError("world spec must be a JSON object");
    if (j.contains("backbone")) {
      const auto& b = j["backbone"];
      if (!b.is_object()) throw ConfigError("'backbone' must be an object");
      for (const auto& [k, v] : b.items()) {
        if (k == "channels") bb.channels = as_count(v, "backbone." + k);
        else throw ConfigError("unknown world key 'backbone." + k + "' (patch and image size come from the world)");
      }
      j.erase("backbone");
    }
    world = world_from_json(j, world);
  }
  bb.patch_size = world.patch_size;
  bb.image_size = world.image_size;
  bb.validate();

  Rng rng(a.seed);
  const auto params = BackboneParams::init(bb, rng);
  const auto prov = backbone_provenance(bb, a.seed);
  const fs::path dir = a.out;
  const auto scenes = synth::generate_dataset(world, a.count, a.seed, 0);

  io::Manifest m;
  m.base_dir = dir;
  for (const auto& s : scenes) {
    io::ManifestEntry e;
    e.sample_id = s.sample_id;
    e.label = s.label;
    e.ego_path = dir / "features" / (s.sample_id + "_ego.ltfm");
    save_feature_file(extract_features(s.ego_image, bb, params, View::Ego, s.sample_id), e.ego_path, prov);
    for (std::size_t i = 0; i < s.exo_images.size(); ++i) {
      e.exo_paths.push_back(dir / "features" / (s.sample_id + "_exo" + std::to_string(i) + ".ltfm"));
      save_feature_file(extract_features(s.exo_images[i], bb, params, View::Exo, s.sample_id), e.exo_paths.back(), prov);
    }
    e.gt_path = dir / "gt" / (s.sample_id + ".pgm");
    Tensor gt(Shape{s.gt_mask.height, s.gt_mask.width});
    for (std::size_t k = 0; k < gt.size(); ++k) gt[k] = s.gt_mask.cells[k];
    io::write_pgm(*e.gt_path, io::to_gray(gt));
    io::write_ppm(dir / "images" / (s.sample_id + ".ppm"), io::to_rgb(s.ego_image));
    m.entries.push_back(std::move(e));
  }
  fs::create_directories(dir);
  io::write_manifest(dir / "manifest.tsv", m);
  auto wj = world_to_json(world);
  wj["backbone"] = {{"channels", bb.channels}};
  write_text(dir / "world.json", wj.dump(2) + "\n");
  out << "wrote " << scenes.size() << " samples to " << dir.string() << '\n';
  return kExitOk;
}

struct VizArgs {
  std::string checkpoint, manifest, out;
};

io::RgbImage overlay(const io::RgbImage& img, const Tensor& pred, const std::optional<BinaryGrid>& gt) {
  io::RgbImage o = img;
  const std::size_t gh = pred.dim(0), gw = pred.dim(1);
  auto cell = [&](std::size_t y, std::size_t x) { return std::pair{y * gh / img.height, x * gw / img.width}; };
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const auto [ci, cj] = cell(y, x);
      const double a = 0.6 * std::clamp(pred.at(ci, cj), 0.0, 1.0);
      auto* px = &o.pixels[(y * img.width + x) * 3];
      px[0] = static_cast<std::uint8_t>(std::lround((1 - a) * px[0] + a * 255));
      px[1] = static_cast<std::uint8_t>(std::lround((1 - a) * px[1]));
      px[2] = static_cast<std::uint8_t>(std::lround((1 - a) * px[2]));
      if (!gt || !(*gt)(ci, cj)) continue;
      // Ground-truth outline: pixels whose 4-neighbourhood leaves the mask.
      bool edge = false;
      const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
      for (int k = 0; k < 4 && !edge; ++k) {
        const long ny = static_cast<long>(y) + dy[k], nx = static_cast<long>(x) + dx[k];
        if (ny < 0 || nx < 0 || ny >= static_cast<long>(img.height) || nx >= static_cast<long>(img.width)) {
          edge = true;
          continue;
        }
        const auto [ni, nj] = cell(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx));
        edge = !(*gt)(ni, nj);
      }
      if (edge) {
        px[0] = 0;
        px[1] = 255;
        px[2] = 0;
      }
    }
  return o;
}

int cmd_viz(const VizArgs& a, std::ostream& out, std::ostream& err) {
  const auto ck = load_checkpoint(a.checkpoint);
  const auto m = io::read_manifest(a.manifest, ck.config.n_classes, true);
  const fs::path dir = a.out;
  fs::create_directories(dir / "heatmaps");
  for (const auto& e : m.entries) {
    auto ego = load_feature_file(e.ego_path);
    const auto pred = infer(ego, e.label, ck.state, ck.config);
    io::write_pgm(dir / "heatmaps" / (e.sample_id + ".pgm"), io::to_gray(pred));
    std::optional<BinaryGrid> gt;
    if (e.gt_path) {
      gt = mask_from_pgm(*e.gt_path);
      if (gt->height != pred.dim(0) || gt->width != pred.dim(1))
        throw DataError("sample " + e.sample_id + ": ground-truth mask does not match the feature grid");
    }
    const auto img_path = m.base_dir / "images" / (e.sample_id + ".ppm");
    io::RgbImage img;
    if (fs::exists(img_path)) {
      img = io::read_ppm(img_path);
    } else {
      err << "no image for " << e.sample_id << ", drawing on gray\n";
      const auto s = ck.config.backbone.patch_size;
      img = {pred.dim(0) * s, pred.dim(1) * s, std::vector<std::uint8_t>(pred.size() * s * s * 3, 128)};
    }
    io::write_ppm(dir / (e.sample_id + ".ppm"), overlay(img, pred, gt));
  }
  out << "rendered " << m.entries.size() << " samples to " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Affordance grounding by closed-loop exo/ego knowledge transfer"};
  app.name("looptrans");
  app.require_subcommand(1);

  TrainArgs ta;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON config");
  train_cmd->add_option("--config", ta.config, "Training config (JSON)")->required();
  train_cmd->add_option("--out", ta.out, "Output directory")->required();
  auto* seed_opt = train_cmd->add_option("--seed", train_seed, "Overrides the config seed");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Score predicted heatmaps against ground truth");
  eval_cmd->add_option("--pred", ea.pred, "Directory of predicted <sample_id>.pgm heatmaps")->required();
  eval_cmd->add_option("--gt", ea.gt, "Directory of ground-truth <sample_id>.pgm maps")->required();
  eval_cmd->add_option("--report", ea.report, "Output CSV report")->required();
  eval_cmd->add_option("--manifest", ea.manifest, "Manifest supplying labels for per-class means");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with features and a manifest");
  synth_cmd->add_option("--spec", sa.spec, "World spec (JSON); defaults apply when omitted");
  synth_cmd->add_option("--count", sa.count, "Number of samples")->required();
  synth_cmd->add_option("--out", sa.out, "Output directory")->required();
  synth_cmd->add_option("--seed", sa.seed, "Generation seed");

  VizArgs va;
  auto* viz_cmd = app.add_subcommand("viz", "Render heatmaps and overlays for a manifest");
  viz_cmd->add_option("--checkpoint", va.checkpoint, "Checkpoint (.ltck)")->required();
  viz_cmd->add_option("--manifest", va.manifest, "Manifest of feature files")->required();
  viz_cmd->add_option("--out", va.out, "Output directory")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::Success&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) {
      if (*seed_opt) ta.seed = train_seed;
      return cmd_train(ta, out, err);
    }
    if (eval_cmd->parsed()) return cmd_eval(ea, out, err);
    if (synth_cmd->parsed()) return cmd_synth(sa, out, err);
    if (viz_cmd->parsed()) return cmd_viz(va, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kExitDataMismatch;
  }
  return kExitUsage;
}

}  // namespace looptrans::cli
