#include "whoi/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "whoi/config.hpp"
#include "whoi/data.hpp"
#include "whoi/eval.hpp"
#include "whoi/learning.hpp"
#include "whoi/model.hpp"
#include "whoi/vocab.hpp"

namespace whoi::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string protocol;
  std::string mode;
  std::string vocab, dataset, checkpoint, detections, train_data;
  std::string pr_csv;
  std::string corrupt;  // gradcheck fault-injection hook
};

RunConfig assemble_config(const Options& opt) {
  RunConfig cfg = opt.config_path.empty() ? RunConfig{} : load_config(opt.config_path);
  if (opt.seed) {
    cfg.train.seed = *opt.seed;
    cfg.gen.seed = *opt.seed;
  }
  if (!opt.protocol.empty()) cfg.eval.protocol = eval_protocol_from_string(opt.protocol);
  if (!opt.mode.empty()) cfg.infer.mode = infer_mode_from_string(opt.mode);
  if (!opt.vocab.empty()) cfg.paths.vocab = opt.vocab;
  if (!opt.dataset.empty()) cfg.paths.dataset = opt.dataset;
  if (!opt.checkpoint.empty()) cfg.paths.checkpoint = opt.checkpoint;
  if (!opt.train_data.empty()) cfg.eval.train_data = opt.train_data;
  return cfg;
}

std::string parent_dir(const std::string& path) {
  const fs::path p = fs::path(path).parent_path();
  return p.empty() ? std::string(".") : p.string();
}

void require_output_dir(const std::string& path, const char* what) {
  if (path.empty()) throw std::invalid_argument(std::string(what) + ": no output path given");
  const std::string dir = parent_dir(path);
  if (!fs::is_directory(dir))
    throw std::invalid_argument(std::string(what) + ": output directory " + dir +
                                " does not exist");
}

std::string require_input(const std::string& path, const char* what) {
  if (path.empty())
    throw std::invalid_argument(std::string("no ") + what +
                                " path given (set it in the config or pass the flag)");
  if (!fs::is_regular_file(path))
    throw std::invalid_argument(std::string(what) + " file " + path + " does not exist");
  return path;
}

std::string sibling(const std::string& path, const std::string& name) {
  return (fs::path(parent_dir(path)) / name).string();
}

std::string manifest_path(const std::string& dataset_path) {
  fs::path p(dataset_path);
  p.replace_extension();
  return p.string() + ".manifest.json";
}

nlohmann::json gen_spec_json(const GenSpec& g) {
  return {{"seed", g.seed},
          {"image_count", g.image_count},
          {"image_size", g.image_size},
          {"patch", g.patch},
          {"num_verbs", g.num_verbs},
          {"num_objects", g.num_objects},
          {"num_hoi", g.num_hoi},
          {"min_instances", g.min_instances},
          {"max_instances", g.max_instances},
          {"jitter", g.jitter},
          {"distractors", g.distractors},
          {"skew", g.skew}};
}

std::vector<Image> render_all(const std::vector<SceneRecord>& scenes, const HOIVocabulary& vocab) {
  std::vector<Image> images;
  images.reserve(scenes.size());
  for (const SceneRecord& rec : scenes)
    images.push_back(render_scene(rec, vocab.num_verbs(), vocab.num_objects()));
  return images;
}

void check_vocab_compat(const Checkpoint& ck, const HOIVocabulary& vocab) {
  if (ck.num_verbs != vocab.num_verbs() || ck.num_objects != vocab.num_objects() ||
      ck.num_hoi != vocab.num_hoi())
    throw std::invalid_argument(
        "checkpoint was trained for a different vocabulary (checkpoint " +
        std::to_string(ck.num_verbs) + "/" + std::to_string(ck.num_objects) + "/" +
        std::to_string(ck.num_hoi) + " verbs/objects/interactions, vocab " +
        std::to_string(vocab.num_verbs()) + "/" + std::to_string(vocab.num_objects()) + "/" +
        std::to_string(vocab.num_hoi()) + ")");
}

int cmd_gen_data(const Options& opt, std::ostream& out) {
  RunConfig cfg = assemble_config(opt);
  const std::string data_path = !opt.out.empty() ? opt.out : cfg.paths.dataset;
  require_output_dir(data_path, "gen-data");

  const HOIVocabulary vocab =
      make_toy_vocabulary(cfg.gen.num_verbs, cfg.gen.num_objects, cfg.gen.num_hoi);
  const std::vector<SceneRecord> scenes = generate(cfg.gen);
  save_dataset(scenes, data_path);

  const std::string vocab_path =
      !cfg.paths.vocab.empty() ? cfg.paths.vocab : sibling(data_path, "vocab.json");
  require_output_dir(vocab_path, "gen-data");
  vocab.save(vocab_path);

  nlohmann::json manifest;
  manifest["dataset"] = data_path;
  manifest["vocab"] = vocab_path;
  manifest["images"] = scenes.size();
  manifest["gen"] = gen_spec_json(cfg.gen);
  const std::string mpath = manifest_path(data_path);
  std::ofstream mf(mpath);
  if (!mf) throw std::runtime_error("gen-data: cannot write " + mpath);
  mf << manifest.dump(2) << "\n";

  out << "wrote " << scenes.size() << " scenes to " << data_path << "\n"
      << "vocab: " << vocab_path << "\nmanifest: " << mpath << "\n";
  return 0;
}

int cmd_train(const Options& opt, std::ostream& out) {
  RunConfig cfg = assemble_config(opt);
  const HOIVocabulary vocab = HOIVocabulary::load(require_input(cfg.paths.vocab, "vocab"));
  const std::vector<SceneRecord> scenes =
      load_dataset(require_input(cfg.paths.dataset, "dataset"));

  const std::string ck_path = !opt.out.empty() ? opt.out : cfg.paths.checkpoint;
  require_output_dir(ck_path, "train");
  const std::string metrics_path = (fs::path(cfg.paths.out_dir) / "metrics.csv").string();
  require_output_dir(metrics_path, "train");

  ParameterStore store;
  Network net = Network::create(store, cfg.dims, vocab.num_verbs(), vocab.num_hoi());
  init_params(store, cfg.train.seed);
  const ToyTextEncoder text(cfg.dims.feat_dim);
  init_bank(net, vocab, text);

  const std::vector<Image> images = render_all(scenes, vocab);
  const TrainResult result = train(scenes, images, vocab, net, store, cfg.model, cfg.train);

  write_metrics_csv(result, metrics_path);
  save_checkpoint(ck_path, store, net, cfg.model, vocab.num_objects(), result.iterations);
  out << "trained " << result.iterations << " iterations on " << scenes.size() << " scenes\n"
      << "checkpoint: " << ck_path << "\nmetrics: " << metrics_path << "\n";
  return 0;
}

int cmd_infer(const Options& opt, std::ostream& out) {
  RunConfig cfg = assemble_config(opt);
  const Checkpoint ck = load_checkpoint(require_input(cfg.paths.checkpoint, "checkpoint"));
  const HOIVocabulary vocab = HOIVocabulary::load(require_input(cfg.paths.vocab, "vocab"));
  check_vocab_compat(ck, vocab);
  const std::vector<SceneRecord> scenes =
      load_dataset(require_input(cfg.paths.dataset, "dataset"));

  const std::string det_path =
      !opt.out.empty() ? opt.out : (fs::path(cfg.paths.out_dir) / "detections.jsonl").string();
  require_output_dir(det_path, "infer");

  std::vector<Detection> all;
  for (const SceneRecord& rec : scenes) {
    const Image img = render_scene(rec, vocab.num_verbs(), vocab.num_objects());
    std::vector<Detection> dets =
        cfg.infer.mode == InferMode::full
            ? detect(rec, img, ck.net, ck.cfg, vocab)
            : detect_bank_similarity(rec, img, ck.net, ck.cfg.gamma, vocab);
    all.insert(all.end(), dets.begin(), dets.end());
  }
  save_detections(all, det_path);
  out << "wrote " << all.size() << " detections for " << scenes.size() << " scenes to "
      << det_path << " (mode " << to_string(cfg.infer.mode) << ")\n";
  return 0;
}

int cmd_eval(const Options& opt, std::ostream& out) {
  RunConfig cfg = assemble_config(opt);
  const std::string det_path = !opt.detections.empty()
                                   ? opt.detections
                                   : (fs::path(cfg.paths.out_dir) / "detections.jsonl").string();
  const std::vector<Detection> dets = load_detections(require_input(det_path, "detections"));
  const HOIVocabulary vocab = HOIVocabulary::load(require_input(cfg.paths.vocab, "vocab"));
  const std::vector<SceneRecord> scenes =
      load_dataset(require_input(cfg.paths.dataset, "dataset"));

  // rare classes are defined by training-set frequency when that set is given
  std::set<int> rare;
  if (cfg.eval.train_data.empty()) {
    rare = rare_split(scenes, vocab).first;
  } else {
    const auto train_scenes = load_dataset(require_input(cfg.eval.train_data, "train-data"));
    rare = rare_split(train_scenes, vocab).first;
  }

  const EvalResult result =
      evaluate(dets, scenes, vocab, cfg.eval.protocol, rare, cfg.eval.iou_threshold);
  print_report(out, result, vocab);

  const std::string report_path =
      !opt.out.empty() ? opt.out : (fs::path(cfg.paths.out_dir) / "report.json").string();
  require_output_dir(report_path, "eval");
  save_report(result, report_path);
  if (!opt.pr_csv.empty()) {
    require_output_dir(opt.pr_csv, "eval");
    write_pr_csv(result, opt.pr_csv);
  }
  out << "report: " << report_path << "\n";
  return 0;
}

int cmd_gradcheck(const Options& opt, std::ostream& out) {
  RunConfig cfg = assemble_config(opt);

  // a deliberately small rig: the audit revisits the loss twice per parameter
  GenSpec gen;
  gen.seed = cfg.train.seed;
  gen.image_count = 5;
  gen.image_size = 32;
  gen.num_verbs = 3;
  gen.num_objects = 3;
  gen.num_hoi = 5;
  gen.min_instances = 1;
  gen.max_instances = 2;
  gen.jitter = 0.05;
  gen.distractors = 1;

  ModelDims dims;
  dims.feat_dim = 8;
  dims.patch = 8;
  dims.image_h = gen.image_size;
  dims.image_w = gen.image_size;
  dims.roi_grid = 2;

  ModelConfig mc = cfg.model;
  mc.local_detached = false;  // differences must see the bank, tested apart

  const HOIVocabulary vocab = make_toy_vocabulary(gen.num_verbs, gen.num_objects, gen.num_hoi);
  const std::vector<SceneRecord> scenes = generate(gen);
  const std::vector<Image> images = render_all(scenes, vocab);

  ParameterStore store;
  Network net = Network::create(store, dims, vocab.num_verbs(), vocab.num_hoi());
  init_params(store, gen.seed);
  init_bank(net, vocab, ToyTextEncoder(dims.feat_dim));

  LossWeights w;
  w.global = 1.0;
  w.pairwise = 1.0;
  w.relatedness = 1.0;
  w.regularize = 0.5;

  const GradCheckReport report = gradient_check(scenes, images, vocab, net, store, mc, w,
                                                /*src_active=*/true, cfg.train.top_k,
                                                /*h=*/1e-5, opt.corrupt);

  char line[160];
  for (const GradCheckEntry& e : report.per_tensor) {
    std::snprintf(line, sizeof line, "%-22s max rel err %.3e\n", e.name.c_str(), e.max_rel_err);
    out << line;
  }
  const bool ok = report.max_rel_err < 1e-4;
  std::snprintf(line, sizeof line, "checked %lld entries; worst %s at %.3e: %s\n",
                static_cast<long long>(report.entries_checked), report.worst_param.c_str(),
                report.max_rel_err, ok ? "PASS" : "FAIL");
  out << line;
  return ok ? 0 : 3;
}

int cmd_export_embeddings(const Options& opt, std::ostream& out) {
  RunConfig cfg = assemble_config(opt);
  const Checkpoint ck = load_checkpoint(require_input(cfg.paths.checkpoint, "checkpoint"));
  const HOIVocabulary vocab = HOIVocabulary::load(require_input(cfg.paths.vocab, "vocab"));
  check_vocab_compat(ck, vocab);
  const std::vector<SceneRecord> scenes =
      load_dataset(require_input(cfg.paths.dataset, "dataset"));

  const std::string csv_path =
      !opt.out.empty() ? opt.out : (fs::path(cfg.paths.out_dir) / "embeddings.csv").string();
  require_output_dir(csv_path, "export-embeddings");
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("export-embeddings: cannot write " + csv_path);

  char num[40];
  std::size_t pair_rows = 0;
  for (const SceneRecord& rec : scenes) {
    const Image img = render_scene(rec, vocab.num_verbs(), vocab.num_objects());
    const SceneForward fw = forward_scene(rec, img, ck.net, ck.cfg);
    for (std::size_t m = 0; m < fw.pc.size(); ++m) {
      csv << "pair:" << rec.image_id << ":" << m;
      const Eigen::VectorXd& v = fw.pc[m].vhat;
      for (int d = 0; d < v.size(); ++d) {
        std::snprintf(num, sizeof num, ",%.17g", v(d));
        csv << num;
      }
      csv << "\n";
      ++pair_rows;
    }
  }
  const Eigen::MatrixXd& bank = ck.net.bank->value;
  for (int k = 0; k < bank.rows(); ++k) {
    csv << "bank:" << k;
    for (int d = 0; d < bank.cols(); ++d) {
      std::snprintf(num, sizeof num, ",%.17g", bank(k, d));
      csv << num;
    }
    csv << "\n";
  }
  out << "wrote " << pair_rows << " pair rows and " << bank.rows() << " bank rows to " << csv_path
      << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"weakly supervised human-object interaction pipeline"};
  app.require_subcommand(1);

  Options opt;
  app.add_option("--config", opt.config_path, "JSON run configuration");
  app.add_option("--seed", opt.seed, "override the generation and training seed");

  auto add_common = [&](CLI::App* sub) {
    sub->fallthrough();  // lets --config / --seed appear after the subcommand
    sub->add_option("--out", opt.out, "output path for this command's artifact");
    sub->add_option("--vocab", opt.vocab, "vocabulary JSON path");
    sub->add_option("--dataset", opt.dataset, "dataset JSONL path");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "synthesize a dataset, vocab and manifest");
  add_common(gen);

  CLI::App* tr = app.add_subcommand("train", "fit a model and write checkpoint + metrics");
  add_common(tr);
  tr->add_option("--checkpoint", opt.checkpoint, "checkpoint output path (same as --out)");

  CLI::App* inf = app.add_subcommand("infer", "run detection over a dataset");
  add_common(inf);
  inf->add_option("--checkpoint", opt.checkpoint, "trained checkpoint path");
  inf->add_option("--mode", opt.mode, "full | bank-similarity")
      ->check(CLI::IsMember({"full", "bank-similarity", "bank_similarity_baseline"}));

  CLI::App* ev = app.add_subcommand("eval", "score detections against ground truth");
  add_common(ev);
  ev->add_option("--detections", opt.detections, "detections JSONL path");
  ev->add_option("--protocol", opt.protocol, "correct | flawed")
      ->check(CLI::IsMember({"correct", "flawed"}));
  ev->add_option("--train-data", opt.train_data, "dataset defining rare-class counts");
  ev->add_option("--pr-csv", opt.pr_csv, "also write per-class precision-recall points");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference audit of all gradients");
  gc->fallthrough();
  gc->add_option("--corrupt", opt.corrupt, "perturb this tensor's analytic gradient")
      ->group("");  // hidden: fault injection for the test suite

  CLI::App* ex = app.add_subcommand("export-embeddings",
                                    "dump pair features and bank rows as labeled CSV");
  add_common(ex);
  ex->add_option("--checkpoint", opt.checkpoint, "trained checkpoint path");

  std::vector<const char*> argv{"whoi"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opt, out);
    if (tr->parsed()) return cmd_train(opt, out);
    if (inf->parsed()) return cmd_infer(opt, out);
    if (ev->parsed()) return cmd_eval(opt, out);
    if (gc->parsed()) return cmd_gradcheck(opt, out);
    if (ex->parsed()) return cmd_export_embeddings(opt, out);
    err << "error: no subcommand\n";
    return 2;
  } catch (const TrainingDiverged& e) {
    err << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace whoi::cli
