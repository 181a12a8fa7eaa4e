// Command-line surface for the contour-proposal pipeline: dataset
// synthesis, descriptor fitting and rendering, training, evaluation,
// inference, benchmarking, and the finite-difference gradient suite.
//
// Exit codes: 0 success; 1 usage or configuration error; 2 data error
// (unreadable or malformed inputs); 3 numerical failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpn/cpn.hpp"
#include "cpn/gradcheck_suite.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
};

cpn::RunConfig effective_config(const CommonFlags& common) {
  if (common.config_path.empty()) return cpn::RunConfig{};
  return cpn::load_run_config(common.config_path);
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw cpn::data_error("output '" + path + "': cannot open for writing");
  out << j.dump(2) << "\n";
  if (!out) throw cpn::data_error("output '" + path + "': write failed");
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cpn::data_error("input '" + path + "': cannot open");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& err) {
    throw cpn::data_error("input '" + path + "': " + err.what());
  }
}

std::string detection_file(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "det_%06zu.json", index);
  return buf;
}

double quantile(std::vector<double> sorted_values, double q) {
  const double pos = q * static_cast<double>(sorted_values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted_values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac;
}

cpn::MatchKind parse_kind(const std::string& kind) {
  if (kind == "mask") return cpn::MatchKind::kMask;
  if (kind == "box") return cpn::MatchKind::kBox;
  throw std::invalid_argument("--kind must be 'mask' or 'box'");
}

int run_synth_gen(const CommonFlags& common, const std::string& out_dir, long long count,
                  long long seed) {
  cpn::RunConfig rc = effective_config(common);
  if (count >= 0) rc.synth.count = static_cast<std::size_t>(count);
  if (seed >= 0) rc.synth.seed = static_cast<std::uint64_t>(seed);
  const std::string dir = out_dir.empty() ? rc.output_dir : out_dir;
  const std::vector<cpn::LabeledImage> images = cpn::generate(rc.synth);
  cpn::save_dataset(images, dir);
  std::cout << "wrote " << images.size() << " images to " << dir << " (config "
            << cpn::config_hash(rc) << ")\n";
  return 0;
}

int run_efd_fit(const std::string& in_path, std::size_t order, const std::string& out_path) {
  const nlohmann::json annotation = read_json_file(in_path);
  cpn::LabeledImage img;
  cpn::annotation_from_json(annotation, in_path, img);
  nlohmann::json descriptors = nlohmann::json::array();
  for (const cpn::Polyline& poly : img.instances) {
    const cpn::Polyline canon = cpn::canonicalize(poly);
    descriptors.push_back(cpn::descriptor_to_json(cpn::fit_descriptor(canon, order)));
  }
  write_json_file(out_path, nlohmann::json{{"descriptors", descriptors}});
  std::cout << "fitted " << descriptors.size() << " descriptors (order " << order << ") from "
            << img.width << "x" << img.height << " annotation\n";
  return 0;
}

int run_efd_render(const std::string& in_path, std::size_t index, std::size_t height,
                   std::size_t width, std::size_t samples, const std::string& out_path) {
  const nlohmann::json doc = read_json_file(in_path);
  nlohmann::json entry;
  if (doc.is_object() && doc.contains("descriptors")) {
    if (!doc["descriptors"].is_array() || index >= doc["descriptors"].size())
      throw cpn::data_error("input '" + in_path + "': descriptor index " +
                            std::to_string(index) + " out of range");
    entry = doc["descriptors"][index];
  } else {
    entry = doc;
  }
  const cpn::FourierDescriptor desc = cpn::descriptor_from_json(entry);
  const cpn::Polyline contour = cpn::sample_contour(desc, cpn::uniform_ts(samples));
  const cpn::Mask mask = cpn::rasterize(contour, height, width);
  std::vector<double> pixels(height * width, 0.0);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    if (mask.bits[i]) pixels[i] = 1.0;
  cpn::save_pgm(out_path, height, width, pixels);
  std::cout << "rendered descriptor " << index << " to " << out_path << " (" << mask.count()
            << " pixels set)\n";
  return 0;
}

int run_train(const CommonFlags& common, const std::string& dataset_dir,
              const std::string& out_dir, long long epochs, double lr, double momentum,
              long long seed) {
  cpn::RunConfig rc = effective_config(common);
  if (!dataset_dir.empty()) rc.dataset_dir = dataset_dir;
  if (!out_dir.empty()) rc.output_dir = out_dir;
  if (epochs >= 0) rc.train.epochs = static_cast<std::size_t>(epochs);
  if (lr > 0.0) rc.train.learning_rate = lr;
  if (momentum >= 0.0) rc.train.momentum = momentum;
  if (seed >= 0) rc.cpn.seed = static_cast<std::uint64_t>(seed);
  if (rc.dataset_dir.empty())
    throw std::invalid_argument("train: no dataset directory (set paths.dataset or --dataset)");

  const std::vector<cpn::LabeledImage> dataset = cpn::load_dataset(rc.dataset_dir);
  cpn::CpnModel model(rc.cpn);
  cpn::TrainOptions opts = rc.train;
  opts.checkpoint_dir = rc.output_dir;
  const cpn::TrainResult result = cpn::train(model, dataset, opts);

  fs::create_directories(rc.output_dir);
  cpn::write_loss_history_csv((fs::path(rc.output_dir) / "loss_history.csv").string(),
                              result.epoch_loss);
  write_json_file((fs::path(rc.output_dir) / "train_summary.json").string(),
                  nlohmann::json{{"config_hash", cpn::config_hash(rc)},
                                 {"epochs", result.epoch_loss.size()},
                                 {"images", dataset.size()},
                                 {"final_loss", result.epoch_loss.back()}});
  std::cout << "trained " << result.epoch_loss.size() << " epochs on " << dataset.size()
            << " images, final loss " << result.epoch_loss.back() << " (config "
            << cpn::config_hash(rc) << ")\n";
  return 0;
}

int run_eval(const CommonFlags& common, const std::string& dataset_dir,
             const std::string& checkpoint, const std::string& detections_dir,
             const std::string& kind_name, const std::string& out_path) {
  cpn::RunConfig rc = effective_config(common);
  if (!dataset_dir.empty()) rc.dataset_dir = dataset_dir;
  if (!checkpoint.empty()) rc.checkpoint = checkpoint;
  if (rc.dataset_dir.empty())
    throw std::invalid_argument("eval: no dataset directory (set paths.dataset or --dataset)");
  if (rc.checkpoint.empty() == detections_dir.empty())
    throw std::invalid_argument("eval: need exactly one of --checkpoint and --detections");
  const cpn::MatchKind kind = parse_kind(kind_name);

  const std::vector<cpn::LabeledImage> dataset = cpn::load_dataset(rc.dataset_dir);
  cpn::EvalReport report;
  if (!detections_dir.empty()) {
    std::vector<std::vector<cpn::Detection>> detections;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const std::string path = (fs::path(detections_dir) / detection_file(i)).string();
      detections.push_back(cpn::detections_from_json(read_json_file(path)));
    }
    report = cpn::evaluate_detections(detections, dataset, kind);
  } else {
    cpn::CpnModel model(rc.cpn);
    model.load(rc.checkpoint);
    report = cpn::run_evaluation(model, dataset, kind);
  }

  const nlohmann::json j = cpn::eval_report_to_json(report, cpn::config_hash(rc));
  const std::string path =
      out_path.empty() ? (fs::path(rc.output_dir) / "eval_report.json").string() : out_path;
  fs::create_directories(fs::path(path).parent_path().empty() ? "."
                                                              : fs::path(path).parent_path());
  write_json_file(path, j);
  std::cout << "f1_average " << report.f1_average << " over " << report.thresholds.size()
            << " thresholds -> " << path << "\n";
  return 0;
}

int run_infer(const CommonFlags& common, const std::string& dataset_dir,
              const std::string& image_path, const std::string& checkpoint,
              const std::string& out_dir, bool overlay) {
  cpn::RunConfig rc = effective_config(common);
  if (!dataset_dir.empty()) rc.dataset_dir = dataset_dir;
  if (!checkpoint.empty()) rc.checkpoint = checkpoint;
  if (rc.checkpoint.empty()) throw std::invalid_argument("infer: --checkpoint required");
  if (rc.dataset_dir.empty() == image_path.empty())
    throw std::invalid_argument("infer: need exactly one of --dataset and --image");

  struct Item {
    std::vector<double> pixels;
    std::size_t height = 0, width = 0;
  };
  std::vector<Item> items;
  if (!image_path.empty()) {
    Item it;
    it.pixels = cpn::load_pgm(image_path, it.height, it.width);
    items.push_back(std::move(it));
  } else {
    for (const cpn::LabeledImage& img : cpn::load_dataset(rc.dataset_dir))
      items.push_back({img.pixels, img.height, img.width});
  }

  cpn::CpnModel model(rc.cpn);
  model.load(rc.checkpoint);
  const std::string dir = out_dir.empty() ? rc.output_dir : out_dir;
  fs::create_directories(dir);

  std::size_t total = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const cpn::ProposalGrid grid = model.forward(items[i].pixels, items[i].height, items[i].width);
    const std::vector<cpn::Detection> dets = cpn::extract(grid, rc.cpn);
    total += dets.size();
    write_json_file((fs::path(dir) / detection_file(i)).string(), cpn::detections_to_json(dets));
    if (overlay) {
      std::vector<double> canvas = items[i].pixels;
      for (const cpn::Detection& det : dets)
        for (const cpn::Point& p : det.contour) {
          const long col = std::lround(p[0]), row = std::lround(p[1]);
          if (row >= 0 && col >= 0 && row < static_cast<long>(items[i].height) &&
              col < static_cast<long>(items[i].width))
            canvas[static_cast<std::size_t>(row) * items[i].width +
                   static_cast<std::size_t>(col)] = 1.0;
        }
      char name[32];
      std::snprintf(name, sizeof(name), "overlay_%06zu.pgm", i);
      cpn::save_pgm((fs::path(dir) / name).string(), items[i].height, items[i].width, canvas);
    }
  }
  std::cout << total << " detections over " << items.size() << " images -> " << dir << "\n";
  return 0;
}

int run_bench(const CommonFlags& common, const std::string& dataset_dir,
              const std::string& checkpoint, std::size_t repeats, std::size_t warmup,
              const std::string& out_path) {
  cpn::RunConfig rc = effective_config(common);
  if (!dataset_dir.empty()) rc.dataset_dir = dataset_dir;
  if (!checkpoint.empty()) rc.checkpoint = checkpoint;
  if (rc.dataset_dir.empty())
    throw std::invalid_argument("bench: no dataset directory (set paths.dataset or --dataset)");
  if (repeats == 0) throw std::invalid_argument("bench: --repeats must be >= 1");

  const std::vector<cpn::LabeledImage> dataset = cpn::load_dataset(rc.dataset_dir);
  cpn::CpnModel model(rc.cpn);
  if (!rc.checkpoint.empty()) model.load(rc.checkpoint);

  const auto pass = [&] {
    for (const cpn::LabeledImage& img : dataset) {
      const cpn::ProposalGrid grid = model.forward(img.pixels, img.height, img.width);
      (void)cpn::extract(grid, rc.cpn);
    }
  };
  for (std::size_t i = 0; i < warmup; ++i) pass();

  std::vector<double> rates;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    pass();
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    rates.push_back(static_cast<double>(dataset.size()) / elapsed.count());
  }
  std::sort(rates.begin(), rates.end());
  const nlohmann::json j{{"config_hash", cpn::config_hash(rc)},
                         {"images", dataset.size()},
                         {"repeats", repeats},
                         {"warmup", warmup},
                         {"images_per_sec",
                          {{"median", quantile(rates, 0.5)},
                           {"p10", quantile(rates, 0.1)},
                           {"p90", quantile(rates, 0.9)}}}};
  if (!out_path.empty()) write_json_file(out_path, j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_gradcheck(double epsilon, double tolerance) {
  const std::vector<cpn::SuiteCase> cases = cpn::run_gradcheck_suite(epsilon);
  double worst = 0.0;
  for (const cpn::SuiteCase& c : cases) {
    worst = std::max(worst, c.report.max_rel_err);
    std::printf("%-24s max_rel_err %.3e (%zu values)\n", c.name.c_str(), c.report.max_rel_err,
                c.report.checked);
  }
  std::printf("max relative error %.3e (tolerance %.1e)\n", worst, tolerance);
  if (!cpn::suite_passed(cases, tolerance))
    throw cpn::numerical_error("gradcheck: max relative error exceeds tolerance");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contour proposal pipeline"};
  app.require_subcommand(1);
  CommonFlags common;
  app.add_option("--config", common.config_path, "JSON run configuration")->expected(1);

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic labeled dataset");
  std::string synth_out;
  long long synth_count = -1, synth_seed = -1;
  synth->add_option("--out", synth_out, "Output dataset directory");
  synth->add_option("--count", synth_count, "Number of images (overrides config)");
  synth->add_option("--seed", synth_seed, "Base seed (overrides config)");

  // efd-fit
  auto* fit = app.add_subcommand("efd-fit", "Fit descriptors to an annotation JSON");
  std::string fit_in, fit_out = "descriptors.json";
  std::size_t fit_order = 4;
  fit->add_option("--in", fit_in, "Annotation JSON path")->required();
  fit->add_option("--order", fit_order, "Descriptor order");
  fit->add_option("--out", fit_out, "Output descriptor JSON path");

  // efd-render
  auto* render = app.add_subcommand("efd-render", "Rasterize a descriptor JSON to a PGM");
  std::string render_in, render_out = "render.pgm";
  std::size_t render_index = 0, render_h = 64, render_w = 64, render_samples = 64;
  render->add_option("--in", render_in, "Descriptor JSON path")->required();
  render->add_option("--index", render_index, "Descriptor index when the file holds a list");
  render->add_option("--height", render_h, "Output height");
  render->add_option("--width", render_w, "Output width");
  render->add_option("--samples", render_samples, "Contour samples");
  render->add_option("--out", render_out, "Output PGM path");

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a labeled dataset");
  std::string tr_dataset, tr_out;
  long long tr_epochs = -1, tr_seed = -1;
  double tr_lr = -1.0, tr_momentum = -1.0;
  tr->add_option("--dataset", tr_dataset, "Dataset directory");
  tr->add_option("--out", tr_out, "Output directory (checkpoints, loss history)");
  tr->add_option("--epochs", tr_epochs, "Training epochs (overrides config)");
  tr->add_option("--lr", tr_lr, "Learning rate (overrides config)");
  tr->add_option("--momentum", tr_momentum, "Momentum (overrides config)");
  tr->add_option("--seed", tr_seed, "Model seed (overrides config)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate detections against a labeled dataset");
  std::string ev_dataset, ev_ckpt, ev_dets, ev_kind = "mask", ev_out;
  ev->add_option("--dataset", ev_dataset, "Dataset directory");
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint to run");
  ev->add_option("--detections", ev_dets, "Directory of det_NNNNNN.json files");
  ev->add_option("--kind", ev_kind, "Match kind: mask or box");
  ev->add_option("--out", ev_out, "Report path (default <output>/eval_report.json)");

  // infer
  auto* in = app.add_subcommand("infer", "Run detection and write per-image JSON");
  std::string in_dataset, in_image, in_ckpt, in_out;
  bool in_overlay = false;
  in->add_option("--dataset", in_dataset, "Dataset directory");
  in->add_option("--image", in_image, "Single PGM image");
  in->add_option("--checkpoint", in_ckpt, "Model checkpoint")->required();
  in->add_option("--out", in_out, "Output directory");
  in->add_flag("--overlay", in_overlay, "Also write overlay PGMs");

  // bench
  auto* be = app.add_subcommand("bench", "Measure inference throughput");
  std::string be_dataset, be_ckpt, be_out;
  std::size_t be_repeats = 5, be_warmup = 1;
  be->add_option("--dataset", be_dataset, "Dataset directory");
  be->add_option("--checkpoint", be_ckpt, "Model checkpoint (fresh init if omitted)");
  be->add_option("--repeats", be_repeats, "Timed passes over the dataset");
  be->add_option("--warmup", be_warmup, "Untimed warm-up passes");
  be->add_option("--out", be_out, "Also write the report JSON here");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of all gradients");
  double gc_eps = 1e-5, gc_tol = 1e-3;
  gc->add_option("--epsilon", gc_eps, "Finite-difference step");
  gc->add_option("--tolerance", gc_tol, "Max relative error allowed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth_gen(common, synth_out, synth_count, synth_seed);
    if (fit->parsed()) return run_efd_fit(fit_in, fit_order, fit_out);
    if (render->parsed())
      return run_efd_render(render_in, render_index, render_h, render_w, render_samples,
                            render_out);
    if (tr->parsed())
      return run_train(common, tr_dataset, tr_out, tr_epochs, tr_lr, tr_momentum, tr_seed);
    if (ev->parsed()) return run_eval(common, ev_dataset, ev_ckpt, ev_dets, ev_kind, ev_out);
    if (in->parsed()) return run_infer(common, in_dataset, in_image, in_ckpt, in_out, in_overlay);
    if (be->parsed()) return run_bench(common, be_dataset, be_ckpt, be_repeats, be_warmup, be_out);
    if (gc->parsed()) return run_gradcheck(gc_eps, gc_tol);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const cpn::numerical_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const cpn::data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::runtime_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
