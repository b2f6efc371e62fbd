#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoclr/checkpoint.hpp"
#include "geoclr/data.hpp"
#include "geoclr/errors.hpp"
#include "geoclr/eval.hpp"
#include "geoclr/geocluster.hpp"
#include "geoclr/plot.hpp"
#include "geoclr/trainer.hpp"

namespace geoclr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Flat key=value file; command-line flags take precedence");
  sub->add_option("--seed", c.seed, "Seed for every random draw");
  sub->add_option("--out", c.out, "Output directory (required)");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Applies a key=value file to every option not given on the command line.
/// Keys are long option names; '_' and '-' are interchangeable. Blank lines
/// and lines starting with '#' are skipped.
void apply_config(CLI::App* sub, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    const std::string written = trim(text.substr(0, eq));
    std::string key = written;
    std::string value = trim(text.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front())
      value = value.substr(1, value.size() - 2);
    std::replace(key.begin(), key.end(), '_', '-');
    CLI::Option* opt = key == "config" || key == "help" ? nullptr : sub->get_option_no_throw("--" + key);
    if (!opt)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": unknown key '" + written + "' for command " +
                        sub->get_name());
    if (opt->count() > 0) continue;
    opt->clear();
    opt->add_result(value);
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": bad value for '" + key + "': " + e.what());
    }
  }
}

std::string option_value(const CLI::Option* opt) {
  if (opt->count() > 0) {
    std::string joined;
    for (const auto& r : opt->results()) joined += (joined.empty() ? "" : ",") + r;
    return joined;
  }
  std::string d = opt->get_default_str();
  if (d.size() >= 2 && d.front() == '[' && d.back() == ']') d = d.substr(1, d.size() - 2);
  return d;
}

/// Effective configuration of a command, in the same key=value format the
/// --config flag reads.
void echo_config(CLI::App* sub, const fs::path& out_dir) {
  std::ostringstream text;
  text << "# geoclr " << sub->get_name() << "\n";
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    text << name << "=" << option_value(opt) << "\n";
  }
  plot::write_text(out_dir / "config.txt", text.str());
}

fs::path require_path(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError("missing required " + flag + " (run with --help for usage)");
  return fs::absolute(value);
}

fs::path require_input(const std::string& value, const std::string& flag) {
  fs::path p = require_path(value, flag);
  if (!fs::exists(p)) throw ConfigError(flag + " " + value + " does not exist");
  return p;
}

std::optional<fs::path> optional_input(const std::string& value, const std::string& flag) {
  if (value.empty()) return std::nullopt;
  return require_input(value, flag);
}

fs::path prepare_out(const Common& c) {
  fs::path out = require_path(c.out, "--out");
  fs::create_directories(out);
  return out;
}

void write_json(const fs::path& path, const json& doc) { plot::write_text(path, doc.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

json linear_to_json(const Linear& l) {
  json w = json::array();
  for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c) row.push_back(l.weight(r, c));
    w.push_back(std::move(row));
  }
  json b = json::array();
  for (Eigen::Index c = 0; c < l.bias.cols(); ++c) b.push_back(l.bias(0, c));
  return json{{"weight", w}, {"bias", b}};
}

Linear linear_from_json(const json& doc) {
  const auto& w = doc.at("weight");
  const auto& b = doc.at("bias");
  if (w.empty()) throw ValidationError("classifier has no weights");
  const auto rows = static_cast<Eigen::Index>(w.size());
  const auto cols = static_cast<Eigen::Index>(w.at(0).size());
  Linear l{Matrix(rows, cols), Matrix(1, cols)};
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(w.at(r).size()) != cols) throw ValidationError("ragged classifier weights");
    for (Eigen::Index c = 0; c < cols; ++c) l.weight(r, c) = w.at(r).at(c).get<double>();
  }
  if (static_cast<Eigen::Index>(b.size()) != cols) throw ValidationError("classifier bias has the wrong length");
  for (Eigen::Index c = 0; c < cols; ++c) l.bias(0, c) = b.at(c).get<double>();
  return l;
}

/// probe.json / classifier.json
json classifier_doc(const std::string& protocol, FeatureSource source, int n_classes, const Linear& classifier) {
  return json{{"protocol", protocol},
              {"feature_source", to_string(source)},
              {"n_classes", n_classes},
              {"classifier", linear_to_json(classifier)}};
}

int manifest_classes(const DatasetManifest& m, const std::string& flag) {
  if (!m.labeled() || !m.n_classes) throw ConfigError(flag + " must be a labeled manifest with n_classes");
  return *m.n_classes;
}

TemporalRule rule_from_string(const std::string& text) {
  if (text == "mean") return TemporalRule::MeanArgmax;
  if (text == "max-confidence") return TemporalRule::MaxConfidence;
  throw ConfigError("unknown temporal rule '" + text + "' (expected mean or max-confidence)");
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void write_evaluation(const fs::path& out, const Evaluation& ev) {
  write_json(out / "report.json", to_json(ev));
  plot::write_text(out / "per_class.csv", per_class_csv(ev.single, ev.temporal));
  std::cout << "single top-1 " << fixed(ev.single.top1, 4);
  if (ev.temporal) std::cout << ", temporal top-1 " << fixed(ev.temporal->top1, 4);
  std::cout << "\n";
}

// ---------------------------------------------------------------- gen-data

struct GenDataOptions {
  Common common;
  SyntheticSpec spec;
  int views = 0;
  double test_fraction = 0.2;
};

void run_gen_data(CLI::App* sub, GenDataOptions& o) {
  if (o.views > 0) o.spec.min_views = o.spec.max_views = o.views;
  if (o.spec.n_classes < 1) throw ConfigError("--classes must be >= 1");
  if (!(o.test_fraction >= 0.0 && o.test_fraction < 1.0)) throw ConfigError("--test-fraction must lie in [0, 1)");
  const fs::path out = prepare_out(o.common);
  o.spec.validate();

  const DatasetManifest m = generate_synthetic(o.spec, o.common.seed);
  write_manifest(m, out / "manifest.jsonl");
  const auto [train, test] = split_areas(m, o.test_fraction, o.common.seed);
  write_manifest(train, out / "train.jsonl", false);
  write_manifest(test, out / "test.jsonl", false);
  echo_config(sub, out);
  std::cout << "wrote " << m.areas.size() << " areas, " << m.sample_count() << " samples (" << train.areas.size()
            << " train / " << test.areas.size() << " test areas) to " << out.string() << "\n";
}

void add_gen_data(CLI::App& app) {
  auto o = std::make_shared<GenDataOptions>();
  CLI::App* sub = app.add_subcommand("gen-data", "Generate a synthetic geo-temporal dataset with train/test split");
  add_common(sub, o->common);
  SyntheticSpec& s = o->spec;
  sub->add_option("--areas", s.n_areas, "Number of areas");
  sub->add_option("--classes", s.n_classes, "Number of classes");
  sub->add_option("--geo-centers", s.n_geo, "Number of geographic centers");
  sub->add_option("--views", o->views, "Views per area (sets both --min-views and --max-views)");
  sub->add_option("--min-views", s.min_views);
  sub->add_option("--max-views", s.max_views);
  sub->add_option("--height", s.geometry.h);
  sub->add_option("--width", s.geometry.w);
  sub->add_option("--channels", s.geometry.ch);
  sub->add_option("--rho", s.rho, "Probability an area takes its center's class");
  sub->add_option("--temporal-noise", s.temporal_noise, "Scale of per-view nuisance");
  sub->add_option("--coord-noise", s.coord_noise, "Std-dev of area coordinates around their center (degrees)");
  sub->add_option("--center-separation", s.min_center_separation, "Minimum distance between centers (degrees)");
  sub->add_option("--template-strength", s.template_strength);
  sub->add_option("--area-strength", s.area_strength);
  sub->add_option("--geo-style-strength", s.geo_style_strength);
  sub->add_option("--test-fraction", o->test_fraction, "Fraction of areas in test.jsonl");
  sub->callback([sub, o] {
    apply_config(sub, o->common.config);
    run_gen_data(sub, *o);
  });
}

// ----------------------------------------------------------------- cluster

struct ClusterOptions {
  Common common;
  std::string manifest;
  int k = 100;
  int max_iter = 300;
  double tol = 1e-9;
};

void run_cluster(CLI::App* sub, const ClusterOptions& o) {
  const fs::path manifest_path = require_input(o.manifest, "--manifest");
  const fs::path out = prepare_out(o.common);
  const DatasetManifest m = load_manifest(manifest_path);
  const auto points = area_points(m);
  if (o.k > static_cast<int>(points.size()))
    throw ConfigError("--k " + std::to_string(o.k) + " exceeds the number of areas (" +
                      std::to_string(points.size()) + "); every cluster needs at least one area");
  const GeoClusterModel model = fit_kmeans(points, o.k, o.common.seed, o.max_iter, o.tol);
  save_geo_model(model, out / "geo_model.json");

  std::vector<plot::ScatterPoint> pts;
  const auto labels = assign_areas(model, m);
  for (std::size_t i = 0; i < points.size(); ++i) pts.push_back({points[i][1], points[i][0], labels[i]});
  std::vector<plot::ScatterPoint> centers;
  for (int c = 0; c < model.k; ++c) centers.push_back({model.centroids[c][1], model.centroids[c][0], c});
  plot::write_text(out / "clusters.svg",
                   plot::scatter_svg("Geo-clusters (K=" + std::to_string(model.k) + ")", "longitude", "latitude",
                                     pts, centers));
  echo_config(sub, out);
  std::cout << "K=" << model.k << " inertia " << fixed(model.inertia, 6) << " after " << model.iterations
            << " iterations\n";
}

void add_cluster(CLI::App& app) {
  auto o = std::make_shared<ClusterOptions>();
  CLI::App* sub = app.add_subcommand("cluster", "Cluster area coordinates into K geo-clusters");
  add_common(sub, o->common);
  sub->add_option("--manifest", o->manifest, "Manifest whose area coordinates are clustered");
  sub->add_option("--k", o->k, "Number of clusters");
  sub->add_option("--max-iter", o->max_iter);
  sub->add_option("--tol", o->tol, "Stop when no centroid moves more than this");
  sub->callback([sub, o] {
    apply_config(sub, o->common.config);
    run_cluster(sub, *o);
  });
}

// ---------------------------------------------------------------- pretrain

struct PretrainOptions {
  Common common;
  std::string manifest;
  std::string geo_model;
  std::string resume;
  std::string variant = "moco+geo+tp";
  std::string schedule = "cosine";
  std::string head_input = "projection";
  TrainConfig cfg;
};

void run_pretrain(CLI::App* sub, PretrainOptions& o) {
  const fs::path manifest_path = require_input(o.manifest, "--manifest");
  const auto geo_path = optional_input(o.geo_model, "--geo-model");
  const auto resume_path = optional_input(o.resume, "--resume");
  TrainConfig& cfg = o.cfg;
  cfg.variant = variant_from_string(o.variant);
  cfg.schedule = schedule_from_string(o.schedule);
  cfg.head_input = feature_source_from_string(o.head_input);
  cfg.seed = o.common.seed;
  if (!resume_path) {
    if (uses_geo_labels(cfg.variant) && !geo_path)
      throw ConfigError("variant " + o.variant + " needs --geo-model (run `geoclr cluster` first)");
    if (!uses_geo_labels(cfg.variant) && geo_path)
      throw ConfigError("variant " + o.variant + " does not use a geo-cluster model; drop --geo-model");
  }
  const fs::path out = prepare_out(o.common);
  const DatasetManifest m = load_manifest(manifest_path);
  cfg.encoder.geometry = m.geometry;

  std::unique_ptr<Pretrainer> trainer;
  if (resume_path) {
    const Checkpoint ck = load_checkpoint(*resume_path);
    trainer = std::make_unique<Pretrainer>(m, ck);
  } else {
    std::optional<GeoClusterModel> geo;
    if (geo_path) {
      geo = load_geo_model(*geo_path);
      if (!sub->get_option("--k")->count()) cfg.k = geo->k;
    }
    trainer = std::make_unique<Pretrainer>(m, geo, cfg, geo_path ? o.geo_model : std::string());
  }

  const int total = trainer->config().epochs;
  while (trainer->epoch() < total) {
    const std::size_t first = trainer->trace().size();
    trainer->run_epoch();
    double lf = 0.0;
    const auto& trace = trainer->trace();
    for (std::size_t i = first; i < trace.size(); ++i) lf += trace[i].total;
    const double n = static_cast<double>(std::max<std::size_t>(1, trace.size() - first));
    std::cout << "epoch " << trainer->epoch() << "/" << total << "  L_f " << fixed(lf / n, 4) << "  lr "
              << fixed(learning_rate(trainer->config(), trainer->epoch() - 1), 5) << "\n";
  }
  save_checkpoint(trainer->checkpoint(), out / "checkpoint.ckpt");
  plot::write_text(out / "loss.csv", trace_to_csv(trainer->trace()));
  echo_config(sub, out);
}

void add_pretrain(CLI::App& app) {
  auto o = std::make_shared<PretrainOptions>();
  CLI::App* sub = app.add_subcommand("pretrain", "Contrastive / geo-cluster pretraining");
  add_common(sub, o->common);
  TrainConfig& c = o->cfg;
  sub->add_option("--manifest", o->manifest, "Training manifest");
  sub->add_option("--geo-model", o->geo_model, "geo_model.json from `geoclr cluster` (geo variants)");
  sub->add_option("--resume", o->resume, "Continue from a checkpoint; training settings come from it");
  sub->add_option("--variant", o->variant, "moco, moco+geo, moco+tp, moco+geo+tp, geo-only or supervised");
  sub->add_option("--epochs", c.epochs);
  sub->add_option("--batch-size", c.batch_size);
  sub->add_option("--lr", c.lr);
  sub->add_option("--lr-floor", c.lr_floor, "Final learning rate of the cosine schedule");
  sub->add_option("--schedule", o->schedule, "cosine or constant");
  sub->add_option("--momentum", c.momentum);
  sub->add_option("--weight-decay", c.weight_decay);
  sub->add_option("--temperature", c.temperature);
  sub->add_option("--alpha", c.alpha, "Weight of the contrastive term");
  sub->add_option("--beta", c.beta, "Weight of the geo-cluster term");
  sub->add_option("--ema", c.ema, "Key encoder momentum");
  sub->add_option("--queue-size", c.queue_size);
  sub->add_option("--k", c.k, "Number of geo-clusters (defaults to the geo model's K)");
  sub->add_option("--head-input", o->head_input, "Features read by the head: projection or backbone");
  sub->add_option("--conv-channels", c.encoder.conv_channels, "Convolution block widths, comma separated")
      ->delimiter(',');
  sub->add_option("--hidden", c.encoder.hidden, "Fully connected block widths, comma separated")->delimiter(',');
  sub->add_option("--embed-dim", c.encoder.embed_dim);
  sub->add_option("--projection-depth", c.encoder.projection_depth);
  sub->add_option("--crop-min", c.augment.crop_scale_min);
  sub->add_option("--crop-max", c.augment.crop_scale_max);
  sub->add_option("--flip-prob", c.augment.flip_prob);
  sub->add_option("--jitter-prob", c.augment.jitter_prob);
  sub->add_option("--brightness", c.augment.brightness);
  sub->add_option("--contrast", c.augment.contrast);
  sub->add_option("--saturation", c.augment.saturation);
  sub->add_option("--grayscale-prob", c.augment.grayscale_prob);
  sub->callback([sub, o] {
    apply_config(sub, o->common.config);
    run_pretrain(sub, *o);
  });
}

// ------------------------------------------------------------------- probe

struct ProbeOptions {
  Common common;
  std::string checkpoint;
  std::string manifest;
  std::string source = "backbone";
  ProbeConfig probe;
};

void run_probe(CLI::App* sub, const ProbeOptions& o) {
  const fs::path ck_path = require_input(o.checkpoint, "--checkpoint");
  const fs::path manifest_path = require_input(o.manifest, "--manifest");
  const FeatureSource source = feature_source_from_string(o.source);
  const fs::path out = prepare_out(o.common);
  const Checkpoint ck = load_checkpoint(ck_path);
  const DatasetManifest m = load_manifest(manifest_path);
  const int n_classes = manifest_classes(m, "--manifest");

  const FeatureSet features = extract_features(ck, m, source);
  const ProbeResult result = train_linear_probe(features.features, features.labels, n_classes, o.probe);
  json doc = classifier_doc("frozen-probe", source, n_classes, result.classifier);
  doc["train_accuracy"] = result.train_accuracy;
  doc["iterations"] = result.iterations;
  write_json(out / "probe.json", doc);
  echo_config(sub, out);
  std::cout << "probe train accuracy " << fixed(result.train_accuracy, 4) << " after " << result.iterations
            << " iterations\n";
}

void add_probe_options(CLI::App* sub, ProbeConfig& p) {
  sub->add_option("--probe-max-iter", p.max_iter, "Probe gradient-descent iterations");
  sub->add_option("--probe-tol", p.tol, "Probe stopping tolerance on the gradient");
  sub->add_option("--probe-l2", p.l2, "Probe L2 penalty");
}

void add_probe(CLI::App& app) {
  auto o = std::make_shared<ProbeOptions>();
  CLI::App* sub = app.add_subcommand("probe", "Train a linear classifier on frozen features");
  add_common(sub, o->common);
  sub->add_option("--checkpoint", o->checkpoint, "Pretrained checkpoint");
  sub->add_option("--manifest", o->manifest, "Labeled training manifest");
  sub->add_option("--source", o->source, "backbone or projection features");
  add_probe_options(sub, o->probe);
  sub->callback([sub, o] {
    apply_config(sub, o->common.config);
    run_probe(sub, *o);
  });
}

// -------------------------------------------------------------------- eval

struct EvalOptions {
  Common common;
  std::string checkpoint;
  std::string classifier;
  std::string manifest;
  std::string granularity = "temporal";
  std::string rule = "mean";
};

void run_eval(CLI::App* sub, const EvalOptions& o) {
  const fs::path ck_path = require_input(o.checkpoint, "--checkpoint");
  const fs::path cls_path = require_input(o.classifier, "--classifier");
  const fs::path manifest_path = require_input(o.manifest, "--manifest");
  if (o.granularity != "single" && o.granularity != "temporal")
    throw ConfigError("--granularity must be single or temporal");
  const TemporalRule rule = rule_from_string(o.rule);
  const fs::path out = prepare_out(o.common);

  const Checkpoint ck = load_checkpoint(ck_path);
  const json doc = read_json(cls_path);
  const Linear classifier = linear_from_json(doc.at("classifier"));
  const FeatureSource source = feature_source_from_string(doc.at("feature_source").get<std::string>());
  const std::string protocol = doc.value("protocol", std::string("frozen-probe"));
  const DatasetManifest m = load_manifest(manifest_path);
  if (manifest_classes(m, "--manifest") != classifier.out_dim())
    throw ConfigError("classifier predicts " + std::to_string(classifier.out_dim()) + " classes but the manifest has " +
                      std::to_string(*m.n_classes));

  const Evaluation ev = evaluate(ck.state.query, classifier, m, source, o.granularity == "temporal", protocol, rule);
  write_evaluation(out, ev);
  echo_config(sub, out);
}

void add_eval(CLI::App& app) {
  auto o = std::make_shared<EvalOptions>();
  CLI::App* sub = app.add_subcommand("eval", "Score a checkpoint and classifier on a labeled manifest");
  add_common(sub, o->common);
  sub->add_option("--checkpoint", o->checkpoint, "Encoder checkpoint");
  sub->add_option("--classifier", o->classifier, "probe.json or classifier.json");
  sub->add_option("--manifest", o->manifest, "Labeled evaluation manifest");
  sub->add_option("--granularity", o->granularity, "single, or temporal (reports both)");
  sub->add_option("--rule", o->rule, "Temporal rule: mean or max-confidence");
  sub->callback([sub, o] {
    apply_config(sub, o->common.config);
    run_eval(sub, *o);
  });
}

// ---------------------------------------------------------------- finetune

struct FinetuneOptions {
  Common common;
  std::string checkpoint;
  std::string manifest;
  std::string test_manifest;
  std::string source = "backbone";
  std::string rule = "mean";
  FinetuneConfig cfg;
};

void run_finetune(CLI::App* sub, FinetuneOptions& o) {
  const fs::path ck_path = require_input(o.checkpoint, "--checkpoint");
  const fs::path manifest_path = require_input(o.manifest, "--manifest");
  const auto test_path = optional_input(o.test_manifest, "--test-manifest");
  const TemporalRule rule = rule_from_string(o.rule);
  o.cfg.source = feature_source_from_string(o.source);
  o.cfg.seed = o.common.seed;
  const fs::path out = prepare_out(o.common);

  Checkpoint ck = load_checkpoint(ck_path);
  const DatasetManifest m = load_manifest(manifest_path);
  const int n_classes = manifest_classes(m, "--manifest");
  const FinetuneResult result = finetune(ck.state.query, m, n_classes, o.cfg);

  ck.state.query = result.encoder;
  save_checkpoint(ck, out / "checkpoint.ckpt");
  write_json(out / "classifier.json", classifier_doc("finetune", o.cfg.source, n_classes, result.classifier));
  std::ostringstream csv;
  csv << std::setprecision(17) << "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) csv << e << ',' << result.epoch_losses[e] << '\n';
  plot::write_text(out / "loss.csv", csv.str());
  if (test_path) {
    const DatasetManifest test = load_manifest(*test_path);
    manifest_classes(test, "--test-manifest");
    write_evaluation(out, evaluate(result.encoder, result.classifier, test, o.cfg.source, true, "finetune", rule));
  }
  echo_config(sub, out);
}

void add_finetune(CLI::App& app) {
  auto o = std::make_shared<FinetuneOptions>();
  CLI::App* sub = app.add_subcommand("finetune", "Train encoder and linear head end to end");
  add_common(sub, o->common);
  FinetuneConfig& c = o->cfg;
  sub->add_option("--checkpoint", o->checkpoint, "Pretrained checkpoint");
  sub->add_option("--manifest", o->manifest, "Labeled training manifest");
  sub->add_option("--test-manifest", o->test_manifest, "Labeled manifest to report on");
  sub->add_option("--source", o->source, "backbone or projection features");
  sub->add_option("--rule", o->rule, "Temporal rule: mean or max-confidence");
  sub->add_option("--epochs", c.epochs);
  sub->add_option("--batch-size", c.batch_size);
  sub->add_option("--lr", c.lr);
  sub->add_option("--momentum", c.momentum);
  sub->add_option("--weight-decay", c.weight_decay);
  add_probe_options(sub, c.probe);
  sub->callback([sub, o] {
    apply_config(sub, o->common.config);
    run_finetune(sub, *o);
  });
}

// ------------------------------------------------------------------ report

struct ReportOptions {
  Common common;
  std::string manifest;
  std::string geo_model;
  std::vector<std::string> loss_csv;
};

/// Per-epoch means of every loss column (L_* or loss) of a loss CSV.
std::vector<plot::Series> epoch_curves(const fs::path& path, const std::string& tag) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty loss file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(trim(cell));
  }
  if (header.empty() || header[0] != "epoch") throw ParseError(path.string() + ": first column must be epoch");
  std::vector<std::size_t> cols;
  for (std::size_t i = 1; i < header.size(); ++i)
    if (header[i].rfind("L_", 0) == 0 || header[i] == "loss") cols.push_back(i);
  std::map<int, std::vector<double>> sums;
  std::map<int, int> counts;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size())
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": wrong number of columns");
    try {
      const int epoch = std::stoi(cells[0]);
      auto& s = sums[epoch];
      s.resize(cols.size(), 0.0);
      for (std::size_t j = 0; j < cols.size(); ++j) s[j] += std::stod(cells[cols[j]]);
      ++counts[epoch];
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": not a number");
    }
  }
  std::vector<plot::Series> out;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    plot::Series s{tag + header[cols[j]], {}, {}};
    for (const auto& [epoch, vals] : sums) {
      s.x.push_back(epoch);
      s.y.push_back(vals[j] / counts[epoch]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void run_report(CLI::App* sub, const ReportOptions& o) {
  const fs::path manifest_path = require_input(o.manifest, "--manifest");
  const auto geo_path = optional_input(o.geo_model, "--geo-model");
  std::vector<fs::path> loss_paths;
  for (const auto& p : o.loss_csv) loss_paths.push_back(require_input(p, "--loss-csv"));
  const fs::path out = prepare_out(o.common);
  const DatasetManifest m = load_manifest(manifest_path);

  json stats{{"areas", m.areas.size()}, {"samples", m.sample_count()}};
  std::map<int, int> views;
  for (const auto& a : m.areas) ++views[static_cast<int>(a.num_views())];
  json views_json = json::object();
  std::vector<std::string> bins;
  std::vector<double> counts;
  for (const auto& [v, n] : views) {
    views_json[std::to_string(v)] = n;
    bins.push_back(std::to_string(v));
    counts.push_back(n);
  }
  stats["views_per_area"] = views_json;
  plot::write_text(out / "views_per_area.svg",
                   plot::histogram_svg("Images per area", "views", "areas", bins, counts));

  if (m.labeled()) {
    const int n_classes = m.n_classes.value_or(0);
    std::map<int, int> per_class;
    for (int c = 0; c < n_classes; ++c) per_class[c] = 0;
    for (const auto& a : m.areas) ++per_class[*a.label];
    json class_json = json::object();
    bins.clear();
    counts.clear();
    for (const auto& [c, n] : per_class) {
      class_json[std::to_string(c)] = n;
      bins.push_back(std::to_string(c));
      counts.push_back(n);
    }
    stats["areas_per_class"] = class_json;
    plot::write_text(out / "areas_per_class.svg", plot::histogram_svg("Areas per class", "class", "areas", bins, counts));
  }

  if (geo_path) {
    const GeoClusterModel model = load_geo_model(*geo_path);
    json geo{{"K", model.k}, {"inertia", model.inertia}};
    const auto assigned = assign_areas(model, m);
    std::vector<int> sizes(static_cast<std::size_t>(model.k), 0);
    for (int c : assigned) ++sizes[static_cast<std::size_t>(c)];
    geo["areas_per_cluster"] = sizes;
    if (m.labeled()) {
      const ClusterStats cs = cluster_stats(m, model);
      json lpc = json::object();
      for (const auto& [c, n] : cs.labels_per_cluster) lpc[std::to_string(c)] = n;
      json cpl = json::object();
      for (const auto& [l, n] : cs.clusters_per_label) cpl[std::to_string(l)] = n;
      geo["labels_per_cluster"] = lpc;
      geo["clusters_per_label"] = cpl;
    }
    stats["geo_clusters"] = geo;
    bins.clear();
    counts.clear();
    for (int c = 0; c < model.k; ++c) {
      bins.push_back(std::to_string(c));
      counts.push_back(sizes[static_cast<std::size_t>(c)]);
    }
    plot::write_text(out / "areas_per_cluster.svg",
                     plot::histogram_svg("Areas per geo-cluster", "cluster", "areas", bins, counts));
  }

  if (!loss_paths.empty()) {
    std::vector<plot::Series> series;
    for (std::size_t i = 0; i < loss_paths.size(); ++i) {
      const std::string tag = loss_paths.size() > 1 ? std::to_string(i) + ":" : "";
      for (auto& s : epoch_curves(loss_paths[i], tag)) series.push_back(std::move(s));
    }
    plot::write_text(out / "loss.svg", plot::line_svg("Training loss (epoch mean)", "epoch", "loss", series));
  }

  write_json(out / "stats.json", stats);
  echo_config(sub, out);
}

void add_report(CLI::App& app) {
  auto o = std::make_shared<ReportOptions>();
  CLI::App* sub = app.add_subcommand("report", "Dataset statistics and plots");
  add_common(sub, o->common);
  sub->add_option("--manifest", o->manifest, "Manifest to describe");
  sub->add_option("--geo-model", o->geo_model, "Add geo-cluster statistics");
  sub->add_option("--loss-csv", o->loss_csv, "Loss CSV(s) to plot, comma separated")->delimiter(',');
  sub->callback([sub, o] {
    apply_config(sub, o->common.config);
    run_report(sub, *o);
  });
}

}  // namespace

void add_commands(CLI::App& app) {
  add_gen_data(app);
  add_cluster(app);
  add_pretrain(app);
  add_probe(app);
  add_finetune(app);
  add_eval(app);
  add_report(app);
}

}  // namespace geoclr::cli
