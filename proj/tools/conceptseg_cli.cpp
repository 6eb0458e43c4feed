// Copyright 2026 The conceptseg Authors. All Rights Reserved.
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

// conceptseg command-line tool: synthetic data, training, evaluation,
// visualization and decomposition benchmarks.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "conceptseg/config.hpp"
#include "conceptseg/dataset.hpp"
#include "conceptseg/evaluation.hpp"
#include "conceptseg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace conceptseg {
namespace {

enum ExitCode : int { kOk = 0, kInternalFailure = 1, kConfigFailure = 2, kDataFailure = 3, kNumericFailure = 4 };

struct Inputs {
  std::string config_file;
  std::vector<std::string> images;
  std::vector<int> sizes = {8, 16};
  std::vector<std::string> methods = {"superpixel", "grid"};
  std::vector<std::string> eval_checkpoints;  // method=path
  int max_images = 4;
  std::int64_t step = 0;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void make_output_dir(const std::string& dir) {
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create output directory " + dir + ": " + e.what());
  }
}

std::ofstream open_output(const fs::path& p, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(p, std::ios::out | mode);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

ordered_json metrics_json(const SegmentationMetrics& m) {
  ordered_json j;
  j["miou"] = m.miou;
  j["accuracy"] = m.accuracy;
  j["iou"] = ordered_json::array();
  for (double v : m.iou) j["iou"].push_back(std::isnan(v) ? ordered_json(nullptr) : ordered_json(v));
  return j;
}

void write_metrics_csv(std::ostream& out, int classes, const std::vector<std::pair<std::string, SegmentationMetrics>>& rows) {
  out << "assignment,miou,accuracy";
  for (int c = 0; c < classes; ++c) out << ",iou_" << c;
  out << "\n";
  for (const auto& [name, m] : rows) {
    out << name << "," << m.miou << "," << m.accuracy;
    for (double v : m.iou) {
      out << ",";
      if (!std::isnan(v)) out << v;
    }
    out << "\n";
  }
}

// Input images either from explicit paths or from the dataset's val split.
std::vector<Sample> gather_images(const RunConfig& cfg, const Inputs& in, bool all_splits) {
  std::vector<Sample> out;
  if (!in.images.empty()) {
    std::set<std::string> used;
    for (const auto& path : in.images) {
      std::string id = fs::path(path).stem().string();
      if (!used.insert(id).second) id += "_" + std::to_string(out.size());
      used.insert(id);
      try {
        out.push_back({id, load_image(path), {}});
      } catch (const IoError& e) {
        throw DataError(std::string("cannot read input image: ") + e.what());
      }
    }
    return out;
  }
  require(!cfg.data.empty(), "need --images or --data");
  Dataset d = load_dataset(cfg.data, all_splits, true);
  if (all_splits) out = std::move(d.train);
  out.insert(out.end(), d.val.begin(), d.val.end());
  return out;
}

EncoderParams<float> model_params(const RunConfig& cfg) {
  if (cfg.eval.random_init) return init_state(cfg.train).params;
  require(!cfg.checkpoint.empty(), "need --checkpoint (or --eval.random_init true)");
  return load_checkpoint(cfg.checkpoint).params;
}

// ---------------------------------------------------------------------------

int cmd_gen_dataset(const RunConfig& cfg, const Inputs&) {
  require(!cfg.out.empty(), "gen-dataset needs --out");
  write_synthetic_dataset(cfg.out, cfg.dataset);
  ordered_json j;
  j["dataset"] = cfg.out;
  j["images"] = cfg.dataset.images;
  j["classes"] = cfg.dataset.classes;
  j["seed"] = cfg.seed;
  std::cout << j.dump() << std::endl;
  return kOk;
}

int cmd_train(const RunConfig& cfg, const Inputs&) {
  require(!cfg.data.empty(), "train needs --data");
  require(!cfg.out.empty(), "train needs --out");
  Dataset d = load_dataset(cfg.data, true, false);
  std::vector<ImageTensor> images;
  std::vector<std::string> ids;
  for (auto& s : d.train) {
    images.push_back(std::move(s.image));
    ids.push_back(s.id);
  }
  Trainer trainer(cfg.train, std::move(images), std::move(ids));
  const bool resuming = !cfg.resume.empty();
  if (resuming) trainer.load(cfg.resume);

  make_output_dir(cfg.out);
  open_output(fs::path(cfg.out) / "config.ini") << to_config_text(cfg);
  const auto mode = resuming ? std::ios::app : std::ios::trunc;
  const bool csv_fresh = !resuming || !fs::exists(fs::path(cfg.out) / "metrics.csv");
  auto jsonl = open_output(fs::path(cfg.out) / "metrics.jsonl", mode);
  auto csv = open_output(fs::path(cfg.out) / "metrics.csv", mode);
  if (csv_fresh) csv << "step,lr,loss,queue_fill,concept_entropy,regions,seconds\n";

  const int total = trainer.total_steps(), per_epoch = trainer.steps_per_epoch();
  const int every = cfg.train.checkpoint_every_epochs;
  while (trainer.state().step < total) {
    const StepMetrics m = trainer.step();
    ordered_json j;
    j["step"] = m.step;
    j["lr"] = m.lr;
    j["loss"] = m.loss;
    j["queue_fill"] = m.queue_fill;
    j["concept_entropy"] = m.concept_entropy;
    j["regions"] = m.regions;
    j["seconds"] = m.seconds;
    jsonl << j.dump() << "\n" << std::flush;
    csv << m.step << "," << m.lr << "," << m.loss << "," << m.queue_fill << "," << m.concept_entropy << ","
        << m.regions << "," << m.seconds << "\n";
    if (every > 0 && m.step % (static_cast<std::int64_t>(every) * per_epoch) == 0)
      trainer.save((fs::path(cfg.out) / ("checkpoint_epoch" + std::to_string(m.step / per_epoch) + ".ckpt")).string());
    if (m.step % 100 == 0 || m.step == total)
      std::cerr << "step " << m.step << "/" << total << " loss " << m.loss << " lr " << m.lr << "\n";
  }
  const auto final_path = (fs::path(cfg.out) / "final.ckpt").string();
  trainer.save(final_path);
  ordered_json j;
  j["checkpoint"] = final_path;
  j["steps"] = trainer.state().step;
  std::cout << j.dump() << std::endl;
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const Inputs&) {
  require(!cfg.data.empty(), "eval needs --data");
  require(!cfg.out.empty(), "eval needs --out");
  const bool cluster = cfg.eval.mode != EvalMode::kLinear, linear = cfg.eval.mode != EvalMode::kCluster;
  const auto params = model_params(cfg);
  const Dataset d = load_dataset(cfg.data, linear, true);
  if (params.config.embed_dim < 1) throw DataError("checkpoint has no embedding head");
  make_output_dir(cfg.out);
  ordered_json summary;
  summary["checkpoint"] = cfg.eval.random_init ? "random-init" : cfg.checkpoint;
  if (cluster) {
    const auto r = evaluate_clusters(params, d.val, d.classes, cluster_eval_config(cfg));
    ordered_json j;
    j["mode"] = "cluster";
    j["checkpoint"] = summary["checkpoint"];
    j["clusters"] = cfg.eval.clusters;
    j["classes"] = d.classes;
    j["fit_points"] = r.fit_points;
    j["baseline_miou"] = r.baseline_miou;
    j["greedy"] = metrics_json(r.greedy);
    if (r.hungarian_valid) j["hungarian"] = metrics_json(r.hungarian);
    open_output(fs::path(cfg.out) / "eval_cluster.json") << j.dump(2) << "\n";
    std::vector<std::pair<std::string, SegmentationMetrics>> rows = {{"greedy", r.greedy}};
    if (r.hungarian_valid) rows.emplace_back("hungarian", r.hungarian);
    auto csv = open_output(fs::path(cfg.out) / "eval_cluster.csv");
    write_metrics_csv(csv, d.classes, rows);
    summary["cluster_miou_greedy"] = r.greedy.miou;
    if (r.hungarian_valid) summary["cluster_miou_hungarian"] = r.hungarian.miou;
    summary["baseline_miou"] = r.baseline_miou;
  }
  if (linear) {
    const auto r = evaluate_linear(params, d.train, d.val, d.classes, probe_config(cfg),
                                   static_cast<std::size_t>(cfg.eval.probe_max_points));
    ordered_json j;
    j["mode"] = "linear";
    j["checkpoint"] = summary["checkpoint"];
    j["classes"] = d.classes;
    j["train_points"] = r.train_points;
    j["probe"] = metrics_json(r.metrics);
    open_output(fs::path(cfg.out) / "eval_linear.json") << j.dump(2) << "\n";
    auto csv = open_output(fs::path(cfg.out) / "eval_linear.csv");
    write_metrics_csv(csv, d.classes, {{"linear", r.metrics}});
    summary["linear_miou"] = r.metrics.miou;
  }
  std::cout << summary.dump() << std::endl;
  return kOk;
}

int cmd_visualize(const RunConfig& cfg, const Inputs& in) {
  require(!cfg.out.empty(), "visualize needs --out");
  require(in.max_images >= 1, "--max-images must be >= 1");
  const auto params = model_params(cfg);
  auto samples = gather_images(cfg, in, false);
  if (in.images.empty() && static_cast<int>(samples.size()) > in.max_images) samples.resize(in.max_images);
  std::vector<EmbeddingMap<float>> embs;
  std::size_t total = 0;
  for (const auto& s : samples) {
    embs.push_back(embed_image(params, s.image));
    total += embs.back().plane();
  }
  const auto cap = static_cast<std::size_t>(cfg.eval.max_fit_points);
  const std::size_t stride = std::max<std::size_t>(1, (total + cap - 1) / cap);
  std::vector<FeatureMatrix> parts;
  Eigen::Index rows = 0;
  for (const auto& e : embs) {
    std::vector<std::size_t> px;
    for (std::size_t j = 0; j < e.plane(); j += stride) px.push_back(j);
    parts.push_back(pixel_rows(e, px));
    rows += parts.back().rows();
  }
  FeatureMatrix fit(rows, params.config.embed_dim);
  Eigen::Index r = 0;
  for (const auto& p : parts) fit.middleRows(r, p.rows()) = p, r += p.rows();
  const auto km = kmeans(fit, cfg.eval.clusters, cfg.eval.kmeans_iterations, cfg.seed);
  make_output_dir(cfg.out);
  ordered_json j;
  j["outputs"] = ordered_json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto clusters = nearest_centroid(pixel_rows(embs[i]), km.centroids);
    const auto path = fs::path(cfg.out) / (samples[i].id + "_triptych.png");
    save_png(path.string(), triptych(samples[i].image, clusters, pca_visualize(embs[i])));
    j["outputs"].push_back(path.string());
  }
  std::cout << j.dump() << std::endl;
  return kOk;
}

int cmd_bench(const RunConfig& cfg, const Inputs& in) {
  require(!cfg.out.empty(), "bench-decompose needs --out");
  require(!in.sizes.empty(), "--sizes must not be empty");
  for (int s : in.sizes) require(s >= 1, "--sizes entries must be >= 1");
  std::vector<Decomposition> methods;
  for (const auto& m : in.methods) methods.push_back(parse_decomposition(m));
  require(!methods.empty(), "--methods must not be empty");
  std::vector<std::pair<Decomposition, std::string>> evals;
  for (const auto& spec : in.eval_checkpoints) {
    const auto eq = spec.find('=');
    require(eq != std::string::npos, "--eval-checkpoint expects method=path, got '" + spec + "'");
    evals.emplace_back(parse_decomposition(spec.substr(0, eq)), spec.substr(eq + 1));
  }
  require(evals.empty() || !cfg.data.empty(), "full benchmark mode (--eval-checkpoint) needs --data");
  const auto samples = gather_images(cfg, in, true);
  make_output_dir(cfg.out);
  const auto rows = bench_decompositions(samples, in.sizes, methods);
  auto csv = open_output(fs::path(cfg.out) / "bench.csv");
  csv << "image,method,element_size,regions,milliseconds\n";
  std::map<std::pair<std::string, int>, std::pair<double, double>> mean;
  for (const auto& r : rows) {
    csv << r.image << "," << r.method << "," << r.element_size << "," << r.regions << "," << r.milliseconds << "\n";
    auto& m = mean[{r.method, r.element_size}];
    m.first += r.regions;
    m.second += r.milliseconds;
  }
  ordered_json j;
  j["rows"] = rows.size();
  j["summary"] = ordered_json::array();
  const double per = static_cast<double>(samples.size());
  for (const auto& [key, m] : mean)
    j["summary"].push_back({{"method", key.first}, {"element_size", key.second}, {"mean_regions", m.first / per},
                            {"mean_milliseconds", m.second / per}});
  if (!evals.empty()) {
    const Dataset d = load_dataset(cfg.data, false, true);
    auto ecsv = open_output(fs::path(cfg.out) / "bench_eval.csv");
    ecsv << "method,checkpoint,miou_greedy,miou_hungarian,accuracy_greedy\n";
    for (const auto& [method, path] : evals) {
      const auto r = evaluate_clusters(load_checkpoint(path).params, d.val, d.classes, cluster_eval_config(cfg));
      ecsv << decomposition_name(method) << "," << path << "," << r.greedy.miou << ","
           << (r.hungarian_valid ? r.hungarian.miou : std::nan("")) << "," << r.greedy.accuracy << "\n";
      j["eval"].push_back({{"method", decomposition_name(method)}, {"miou_greedy", r.greedy.miou}});
    }
  }
  std::cout << j.dump() << std::endl;
  return kOk;
}

// Dumps the augmented, masked views of one training step with region
// boundaries drawn; pixels outside the mutual regions are darkened. Region
// maps are written with ids shifted by one.
int cmd_debug_views(const RunConfig& cfg, const Inputs& in) {
  require(!cfg.out.empty(), "debug-views needs --out");
  require(in.step >= 0, "--step must be >= 0");
  auto samples = gather_images(cfg, in, true);
  std::vector<ImageTensor> images;
  std::vector<std::string> ids;
  for (auto& s : samples) {
    images.push_back(std::move(s.image));
    ids.push_back(s.id);
  }
  Trainer trainer(cfg.train, std::move(images), std::move(ids));
  const auto indices = trainer.batch_indices(in.step);
  const auto batches = trainer.prepare_views(in.step);
  make_output_dir(cfg.out);
  ordered_json j;
  j["step"] = in.step;
  j["images"] = ordered_json::array();
  for (std::size_t n = 0; n < batches.size(); ++n) {
    const auto& b = batches[n];
    ordered_json entry;
    entry["image"] = trainer.image_id(indices[n]);
    entry["mutual_regions"] = b.mutual_region_ids.size();
    entry["views"] = ordered_json::array();
    for (std::size_t m = 0; m < b.views.size(); ++m) {
      const auto& v = b.views[m];
      Rgb8Image rgb = to_rgb8_image(v.image);
      const auto& L = v.map;
      for (int y = 0; y < L.height; ++y)
        for (int x = 0; x < L.width; ++x) {
          const auto l = L.at(y, x);
          auto* px = rgb.px(y, x);
          const bool edge = (x + 1 < L.width && L.at(y, x + 1) != l) || (y + 1 < L.height && L.at(y + 1, x) != l);
          if (l < 0) {
            for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(px[c] / 3);
          } else if (edge) {
            px[0] = 255, px[1] = 230, px[2] = 0;
          }
        }
      const auto stem = "step" + std::to_string(in.step) + "_n" + std::to_string(n) + "_m" + std::to_string(m);
      save_png((fs::path(cfg.out) / (stem + ".png")).string(), rgb);
      SuperpixelMap shifted = L;  // 0 marks pixels outside the mutual regions
      for (auto& l : shifted.labels) l += 1;
      save_superpixel_png((fs::path(cfg.out) / (stem + "_regions.png")).string(), shifted);
      ordered_json vj;
      vj["file"] = stem + ".png";
      vj["flipped"] = v.spec.flip;
      vj["masked_regions"] = m < b.masked_region_ids.size() ? b.masked_region_ids[m].size() : 0;
      entry["views"].push_back(vj);
    }
    j["images"].push_back(entry);
  }
  open_output(fs::path(cfg.out) / "views.json") << j.dump(2) << "\n";
  std::cout << j.dump() << std::endl;
  return kOk;
}

}  // namespace
}  // namespace conceptseg

int main(int argc, char** argv) {
  using namespace conceptseg;
  CLI::App app{"conceptseg: dense self-supervised concept learning over superpixels"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  RunConfig cfg;
  Inputs in;
  std::map<std::string, std::string> raw;
  struct Verb {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&, const Inputs&);
  };
  const Verb verbs[] = {
      {"gen-dataset", "Write a synthetic textured-shapes dataset", cmd_gen_dataset},
      {"train", "Train an encoder and concept bank", cmd_train},
      {"eval", "Cluster and/or linear-probe evaluation on the val split", cmd_eval},
      {"visualize", "Write input | cluster | PCA triptychs", cmd_visualize},
      {"bench-decompose", "Compare superpixel and grid decompositions", cmd_bench},
      {"debug-views", "Dump the augmented views of one training step", cmd_debug_views},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& v : verbs) {
    CLI::App* sub = app.add_subcommand(v.name, v.help);
    subs[v.name] = sub;
    sub->add_option("--config", in.config_file, "Config file (key = value with [sections])");
    for (const auto& f : config_fields())
      sub->add_option("--" + f.name(), raw[f.name()], f.help + " [" + f.get(cfg) + "]");
    const std::string name = v.name;
    if (name == "visualize" || name == "bench-decompose" || name == "debug-views")
      sub->add_option("--images", in.images, "Input image files (default: dataset images)");
    if (name == "visualize") sub->add_option("--max-images", in.max_images, "Dataset images to visualize");
    if (name == "bench-decompose") {
      sub->add_option("--sizes", in.sizes, "Element sizes")->delimiter(',');
      sub->add_option("--methods", in.methods, "superpixel and/or grid")->delimiter(',');
      sub->add_option("--eval-checkpoint", in.eval_checkpoints, "method=checkpoint for mIoU (full mode)");
    }
    if (name == "debug-views") sub->add_option("--step", in.step, "Training step whose views to dump");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigFailure;
  }

  const Verb* verb = nullptr;
  CLI::App* sub = nullptr;
  for (const auto& v : verbs)
    if (subs[v.name]->parsed()) verb = &v, sub = subs[v.name];

  try {
    // defaults < config file < flags; then validate before any side effect
    if (!in.config_file.empty()) apply_config_file(cfg, in.config_file);
    for (const auto& f : config_fields())
      if (sub->get_option("--" + f.name())->count() > 0) f.set(cfg, raw[f.name()]);
    finalize(cfg);
    return verb->run(cfg, in);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternalFailure;
  }
}
