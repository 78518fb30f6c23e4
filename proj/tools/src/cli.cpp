#include "leafvit_cli/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "leafvit/data.hpp"
#include "leafvit/error.hpp"
#include "leafvit/metrics.hpp"
#include "leafvit/model.hpp"
#include "leafvit/ops.hpp"
#include "leafvit/parallel.hpp"
#include "leafvit/trainer.hpp"
#include "leafvit/weights_io.hpp"

namespace leafvit::cli {

namespace {

using nlohmann::ordered_json;

Architecture parse_architecture(const std::string& text) {
  if (text == "mobilevitv2_050") return Architecture::mobilevitv2_050;
  if (text == "baseline_cnn") return Architecture::baseline_cnn;
  throw ConfigError("unknown architecture '" + text + "' (expected mobilevitv2_050 or baseline_cnn)");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw IngestionError("failed writing '" + path.string() + "'");
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
  fs::path p = path;
  p.replace_extension();
  p += suffix;
  return p;
}

// ---- classify --------------------------------------------------------------------------

struct ClassifyArgs {
  std::string model, labels, image;
  std::size_t topk = 3;
};

int classify(const ClassifyArgs& a, std::ostream& out) {
  const ModelGraph model = model_from_archive(load(a.model));
  const auto labels = read_labels(a.labels);
  if (labels.size() != model.num_classes()) {
    throw LabelError("labels file has " + std::to_string(labels.size()) + " entries but the model has " +
                     std::to_string(model.num_classes()) + " outputs");
  }
  const std::size_t s = model.input_size();
  const Tensor x = reshape(load_image(a.image, s), Shape{1, 3, s, s});
  const Tensor probs = predict(model, x);
  const auto p = probs.data();

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return p[i] > p[j]; });
  order.resize(std::min(a.topk, order.size()));

  ordered_json j = ordered_json::array();
  for (std::size_t k : order) j.push_back({{"label", labels[k]}, {"prob", p[k]}});
  out << j.dump(2) << "\n";
  return kOk;
}

// ---- evaluate --------------------------------------------------------------------------

struct EvaluateArgs {
  std::string model, labels, data_dir, split = "val", out, confusion_csv, roc_csv;
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
};

int evaluate_cmd(const EvaluateArgs& a, std::ostream& out) {
  const Split split = parse_split(a.split);
  const ModelGraph model = model_from_archive(load(a.model));
  const auto labels = read_labels(a.labels);
  if (labels.size() != model.num_classes()) {
    throw LabelError("labels file has " + std::to_string(labels.size()) + " entries but the model has " +
                     std::to_string(model.num_classes()) + " outputs");
  }
  const DatasetIndex index = scan_dataset(a.data_dir, a.seed);
  if (index.labels != labels) {
    throw LabelError("dataset classes do not match the labels file (dataset has " +
                     std::to_string(index.labels.size()) + " classes)");
  }
  const EvaluationReport report = evaluate(model, index, split, a.batch_size);

  const fs::path json_path = a.out;
  const fs::path cm_path = a.confusion_csv.empty() ? sibling(json_path, ".confusion.csv") : fs::path(a.confusion_csv);
  const fs::path roc_path = a.roc_csv.empty() ? sibling(json_path, ".roc.csv") : fs::path(a.roc_csv);
  write_text(json_path, report_to_json(report));
  write_text(cm_path, confusion_to_csv(report));
  write_text(roc_path, roc_to_csv(report));

  out << format_report_table(report);
  out << "split " << report.split << ", " << report.samples << " samples, seed " << a.seed << "\n";
  out << "wrote " << json_path.string() << ", " << cm_path.string() << ", " << roc_path.string() << "\n";
  return kOk;
}

// ---- train -----------------------------------------------------------------------------

struct TrainArgs {
  std::string data_dir, init_weights, out, log, labels_out, arch = "mobilevitv2_050", fine_tune = "head";
  std::size_t num_classes = 0, epochs = 20, batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool no_timing = false;
  PlateauConfig plateau;
  EarlyStopConfig early;
};

int train_cmd(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  cfg.lr = a.lr;
  cfg.batch_size = a.batch_size;
  cfg.max_epochs = a.epochs;
  cfg.scheduler = a.plateau;
  cfg.early_stop = a.early;
  cfg.seed = a.seed;
  cfg.mode = parse_fine_tune(a.fine_tune);
  cfg.record_time = !a.no_timing;
  cfg.validate();
  if (a.lr == 0.0) err << "warning: --lr 0 leaves every weight at its initial value\n";

  ModelGraph model = build_model(parse_architecture(a.arch), a.num_classes, a.seed);
  if (!a.init_weights.empty()) {
    const ApplyReport rep = apply(model, load(a.init_weights), false);
    out << "init weights: " << rep.loaded.size() << " loaded, " << rep.skipped.size() << " skipped (shape), "
        << rep.missing.size() << " missing, " << rep.unexpected.size() << " unexpected\n";
    for (const auto& n : rep.skipped) out << "  kept fresh init: " << n << "\n";
  }

  const DatasetIndex index = scan_dataset(a.data_dir, a.seed);
  out << "dataset: " << index.labels.size() << " classes, " << index.count(Split::train) << " train, "
      << index.count(Split::val) << " val\n";
  out << "arch " << a.arch << ", fine-tune " << a.fine_tune << ", seed " << a.seed << "\n";

  cfg.on_epoch = [&](const EpochLog& e) {
    out << "epoch " << e.epoch << "/" << a.epochs << "  train_loss " << fmt("%.4f", e.train_loss) << "  val_loss "
        << fmt("%.4f", e.val_loss) << "  val_acc " << fmt("%.4f", e.val_acc) << "  lr " << fmt("%.3g", e.lr);
    if (cfg.record_time) out << "  " << fmt("%.1f", e.seconds) << "s";
    out << "\n";
    out.flush();
  };
  const TrainResult result = train(model, index, cfg);

  const fs::path log_path = a.log.empty() ? sibling(a.out, ".log.csv") : fs::path(a.log);
  save(result.best, a.out);
  write_train_log(log_path, result.log);
  if (!a.labels_out.empty()) write_labels(a.labels_out, index.labels);

  const auto& best = result.log.at(result.best_epoch - 1);
  out << (result.stopped_early ? "stopped early" : "finished") << " after " << result.log.size() << " epochs\n";
  out << "best epoch " << result.best_epoch << ": val_loss " << fmt("%.4f", best.val_loss) << ", val_acc "
      << fmt("%.4f", best.val_acc) << "\n";
  out << "wrote " << a.out << ", " << log_path.string();
  if (!a.labels_out.empty()) out << ", " << a.labels_out;
  out << "\n";
  return kOk;
}

// ---- bench / inspect / init / make-fixture ---------------------------------------------

struct BenchArgs {
  std::string model, arch;
  std::size_t num_classes = 10, iters = 100, warmup = 10;
  std::uint64_t seed = 0;
};

int bench_cmd(const BenchArgs& a, std::ostream& out) {
  if (a.model.empty() == a.arch.empty()) throw ConfigError("bench needs exactly one of --model or --arch");
  const ModelGraph model = a.model.empty() ? build_model(parse_architecture(a.arch), a.num_classes, a.seed)
                                           : model_from_archive(load(a.model));
  out << bench_to_json(bench(model, a.iters, a.warmup, a.seed));
  return kOk;
}

int inspect_cmd(const std::string& path, std::ostream& out, std::ostream& err) {
  const ArchiveListing listing = read_listing(path);
  out << format_listing(listing);
  if (!listing.crc_ok()) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "crc mismatch: stored 0x%08x, computed 0x%08x", listing.stored_crc,
                  listing.computed_crc);
    err << "error: " << path << ": " << buf << "\n";
    return kDataError;
  }
  return kOk;
}

struct InitArgs {
  std::string arch = "mobilevitv2_050", out;
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;
};

int init_cmd(const InitArgs& a, std::ostream& out) {
  const ModelGraph model = build_model(parse_architecture(a.arch), a.num_classes, a.seed);
  save(archive_from_model(model), a.out);
  out << "wrote " << a.out << " (" << a.arch << ", " << a.num_classes << " classes, " << count_params(model)
      << " parameters, seed " << a.seed << ")\n";
  return kOk;
}

struct FixtureArgs {
  std::string out;
  std::size_t per_class = 64, size = 224;
  std::uint64_t seed = 0;
};

int fixture_cmd(const FixtureArgs& a, std::ostream& out) {
  const auto labels = make_color_patch_dataset(a.out, a.per_class, a.size, a.seed);
  out << "wrote " << labels.size() * a.per_class << " images in " << labels.size() << " classes to " << a.out
      << " (seed " << a.seed << ")\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lightweight vision transformer for leaf-disease classification", "leafvit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "leafvit 1.0.0");
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker threads (overrides LEAFVIT_THREADS)");

  ClassifyArgs ca;
  auto* classify_app = app.add_subcommand("classify", "top-k predictions for one image as JSON");
  classify_app->add_option("--model", ca.model, "MVW1 weights")->required()->check(CLI::ExistingFile);
  classify_app->add_option("--labels", ca.labels, "label file, one per line")->required()->check(CLI::ExistingFile);
  classify_app->add_option("--image", ca.image, "PPM image")->required()->check(CLI::ExistingFile);
  classify_app->add_option("--topk", ca.topk, "entries to print")->capture_default_str()->check(CLI::PositiveNumber);

  EvaluateArgs ea;
  auto* eval_app = app.add_subcommand("evaluate", "metrics report over one dataset split");
  eval_app->add_option("--model", ea.model)->required()->check(CLI::ExistingFile);
  eval_app->add_option("--labels", ea.labels)->required()->check(CLI::ExistingFile);
  eval_app->add_option("--data-dir", ea.data_dir)->required()->check(CLI::ExistingDirectory);
  eval_app->add_option("--split", ea.split)->capture_default_str()->check(CLI::IsMember({"train", "val"}));
  eval_app->add_option("--seed", ea.seed, "split seed; must match the one used for training")->capture_default_str();
  eval_app->add_option("--batch-size", ea.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  eval_app->add_option("--out", ea.out, "report JSON")->required();
  eval_app->add_option("--confusion-csv", ea.confusion_csv, "default: <out>.confusion.csv");
  eval_app->add_option("--roc-csv", ea.roc_csv, "default: <out>.roc.csv");

  TrainArgs ta;
  auto* train_app = app.add_subcommand("train", "fine-tune on a directory-per-class dataset");
  train_app->add_option("--data-dir", ta.data_dir)->required()->check(CLI::ExistingDirectory);
  train_app->add_option("--num-classes", ta.num_classes)->required()->check(CLI::Range(2, 100000));
  train_app->add_option("--init-weights", ta.init_weights, "MVW1 to start from; mismatched tensors keep fresh init")
      ->check(CLI::ExistingFile);
  train_app->add_option("--epochs", ta.epochs)->capture_default_str();
  train_app->add_option("--batch-size", ta.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  train_app->add_option("--lr", ta.lr)->capture_default_str();
  train_app->add_option("--seed", ta.seed)->capture_default_str();
  train_app->add_option("--out", ta.out, "best weights")->required();
  train_app->add_option("--log", ta.log, "epoch CSV; default: <out>.log.csv");
  train_app->add_option("--labels-out", ta.labels_out, "write the class names in label order");
  train_app->add_option("--arch", ta.arch)->capture_default_str();
  train_app->add_option("--fine-tune", ta.fine_tune)->capture_default_str()->check(CLI::IsMember({"head", "full"}));
  train_app->add_option("--plateau-factor", ta.plateau.factor)->capture_default_str();
  train_app->add_option("--plateau-patience", ta.plateau.patience)->capture_default_str();
  train_app->add_option("--min-lr", ta.plateau.min_lr)->capture_default_str();
  train_app->add_option("--early-stop-patience", ta.early.patience)->capture_default_str();
  train_app->add_option("--min-delta", ta.early.min_delta)->capture_default_str();
  train_app->add_flag("--no-timing", ta.no_timing, "log 0 seconds per epoch so outputs are byte-stable");

  BenchArgs ba;
  auto* bench_app = app.add_subcommand("bench", "params, MACs and CPU latency as JSON");
  bench_app->add_option("--model", ba.model)->check(CLI::ExistingFile);
  bench_app->add_option("--arch", ba.arch, "benchmark a freshly built model instead");
  bench_app->add_option("--num-classes", ba.num_classes)->capture_default_str();
  bench_app->add_option("--iters", ba.iters)->capture_default_str();
  bench_app->add_option("--warmup", ba.warmup)->capture_default_str();
  bench_app->add_option("--seed", ba.seed)->capture_default_str();

  std::string inspect_path;
  auto* inspect_app = app.add_subcommand("inspect", "list the tensors of an MVW1 file");
  inspect_app->add_option("--weights", inspect_path)->required()->check(CLI::ExistingFile);

  InitArgs ia;
  auto* init_app = app.add_subcommand("init", "write freshly initialised weights");
  init_app->add_option("--arch", ia.arch)->capture_default_str();
  init_app->add_option("--num-classes", ia.num_classes)->required();
  init_app->add_option("--seed", ia.seed)->capture_default_str();
  init_app->add_option("--out", ia.out)->required();

  FixtureArgs fa;
  auto* fixture_app = app.add_subcommand("make-fixture", "generate the synthetic color-patch dataset");
  fixture_app->add_option("--out", fa.out)->required();
  fixture_app->add_option("--per-class", fa.per_class)->capture_default_str()->check(CLI::PositiveNumber);
  fixture_app->add_option("--size", fa.size)->capture_default_str()->check(CLI::Range(8, 4096));
  fixture_app->add_option("--seed", fa.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (threads > 0) set_worker_threads(threads);
    if (*classify_app) return classify(ca, out);
    if (*eval_app) return evaluate_cmd(ea, out);
    if (*train_app) return train_cmd(ta, out, err);
    if (*bench_app) return bench_cmd(ba, out);
    if (*inspect_app) return inspect_cmd(inspect_path, out, err);
    if (*init_app) return init_cmd(ia, out);
    if (*fixture_app) return fixture_cmd(fa, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumericError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace leafvit::cli
