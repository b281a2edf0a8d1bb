#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tseg/checkpoint.hpp"
#include "tseg/config.hpp"
#include "tseg/experiment.hpp"
#include "tseg/gradsuite.hpp"
#include "tseg/pnm.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace tseg;

namespace {

constexpr const char* kVersion = "tseg 0.1.0";
constexpr int kExitCheck = 1;
constexpr int kExitConfig = 2;

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "key = value configuration file")->check(CLI::ExistingFile);
    app->add_option("-s,--set", overrides, "override one key, e.g. --set seed=3");
  }
  RunConfig load() const {
    RunConfig cfg;
    if (!file.empty()) {
      std::ifstream in(file);
      std::stringstream ss;
      ss << in.rdbuf();
      cfg = parse_config(ss.str());
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
  }
};

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) { write_file(path, bytes); }

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

json manifest(const RunConfig& cfg, const std::string& command) {
  return json{{"version", kVersion},
              {"command", command},
              {"seed", cfg.train.seed},
              {"config_hash", config_hash(cfg)},
              {"config", canonical_text(cfg)}};
}

RunConfig config_from_checkpoint(const Checkpoint& ck) {
  RunConfig cfg = parse_config(ck.config_text);
  cfg.validate();
  return cfg;
}

Model model_from_checkpoint(const Checkpoint& ck, const RunConfig& cfg) { return Model(cfg.train.encoder, ck.params); }

json summary_json(const EvalSummary& s) {
  json j{{"miou", s.miou}, {"pairs", s.pairs.size()}};
  j["per_kind"] = json::object();
  for (const auto& [k, v] : s.per_kind) j["per_kind"][k] = v;
  j["overlap"] = {{"scenes_with_gt_overlap", s.overlap_scenes},
                  {"of_which_pred_overlap", s.overlap_scenes_with_pred_overlap},
                  {"scenes_with_pred_overlap", s.scenes_with_any_pred_overlap}};
  if (s.seen_miou) j["seen_miou"] = *s.seen_miou;
  if (s.unseen_miou) j["unseen_miou"] = *s.unseen_miou;
  return j;
}

int cmd_gen_data(const ConfigArgs& ca, const fs::path& out, std::size_t count, const std::string& split,
                 std::uint64_t seed_override, bool has_seed) {
  RunConfig cfg = ca.load();
  if (has_seed) cfg.train.seed = seed_override;
  const bool eval = split == "eval";
  const GeneratorConfig gen = eval ? eval_generator(cfg) : cfg.train_generator();
  const std::uint64_t stream = eval ? eval_data_seed(cfg.train.seed) : train_data_seed(cfg.train.seed);
  fs::create_directories(out);
  json m = manifest(cfg, "gen-data");
  m["split"] = split;
  m["scenes"] = json::array();
  SceneStream scenes(stream, gen);
  for (std::size_t k = 0; k < count; ++k) {
    const SynthScene s = scenes.at(k);
    char name[32];
    std::snprintf(name, sizeof name, "scene%05zu", k);
    const std::string image_file = std::string(name) + ".ppm";
    write_bytes(out / image_file, encode_ppm(s.image));
    json js{{"index", k}, {"seed", s.seed}, {"image", image_file}, {"expressions", json::array()}};
    for (std::size_t j = 0; j < s.expressions.size(); ++j) {
      const std::string mask_file = std::string(name) + "_expr" + std::to_string(j) + ".pgm";
      write_bytes(out / mask_file, encode_pgm(s.gt_mask(j)));
      js["expressions"].push_back({{"tokens", s.expressions[j].tokens},
                                   {"text", s.expressions[j].text()},
                                   {"kind", expression_kind_name(s.expressions[j].kind)},
                                   {"mask", mask_file}});
    }
    m["scenes"].push_back(std::move(js));
  }
  write_json(out / "manifest.json", m);
  std::cout << "wrote " << count << " " << split << " scenes to " << out.string() << "\n";
  return 0;
}

int cmd_train(const ConfigArgs& ca, const fs::path& out, bool quiet) {
  const RunConfig cfg = ca.load();
  fs::create_directories(out);
  TrainConfig tc = cfg.train;
  tc.generator = cfg.train_generator();
  std::ofstream log(out / "loss.tsv");
  log << "iteration\tloss\n";
  const std::uint64_t every = std::max<std::uint64_t>(1, tc.total_iters / 20);
  const TrainResult r = train(tc, [&](std::uint64_t n, double loss) {
    log << n << "\t" << loss << "\n";
    if (!quiet && (n % every == 0 || n + 1 == tc.total_iters)) std::cerr << "iter " << n << " loss " << loss << "\n";
  });
  make_checkpoint(r, canonical_text(cfg)).save(out / "model.ckpt");
  json m = manifest(cfg, "train");
  m["iterations"] = r.iterations;
  m["final_loss"] = r.loss_history.back();
  write_json(out / "manifest.json", m);
  std::cout << "checkpoint " << (out / "model.ckpt").string() << " config_hash " << config_hash(cfg) << "\n";
  return 0;
}

void write_masks(const fs::path& dir, const std::string& stem, const PixelMask& m) {
  write_bytes(dir / (stem + ".pgm"), encode_pgm(m.binary));
  write_bytes(dir / (stem + "_prob.pgm"), encode_pgm(m.prob));
}

int cmd_eval(const fs::path& ckpt, const fs::path& out, std::uint64_t eval_seed, bool has_seed, std::size_t scenes,
             std::size_t mask_scenes) {
  const Checkpoint ck = Checkpoint::load(ckpt);
  const RunConfig trained = config_from_checkpoint(ck);
  RunConfig cfg = trained;
  if (scenes > 0) cfg.eval_scenes = scenes;
  const Model model = model_from_checkpoint(ck, cfg);
  const std::uint64_t seed = has_seed ? eval_seed : cfg.train.seed;
  const auto split = eval_scenes(cfg, seed);
  const SegmentOptions opt = segment_options(cfg);
  const EvalSummary s = evaluate(model, split, opt, cfg.heldout);
  fs::create_directories(out);
  json report = manifest(trained, "eval");
  report["checkpoint_iteration"] = ck.iteration;
  report["eval_seed"] = seed;
  report["eval_scenes"] = split.size();
  report["mechanism"] = cfg.train.mode == TrainMode::Full ? std::string("full") : mechanism_name(cfg.train.pooling.mechanism);
  report["decode"] = decode_mode_name(opt.mode);
  report["results"] = summary_json(s);
  const fs::path mask_dir = out / "masks";
  if (mask_scenes > 0) fs::create_directories(mask_dir);
  for (std::size_t k = 0; k < std::min(mask_scenes, split.size()); ++k) {
    std::vector<TokenSeq> queries;
    for (const auto& e : split[k].expressions) queries.push_back(e.tokens);
    const Segmentation seg = segment(model, split[k].image, queries, opt);
    for (std::size_t j = 0; j < seg.masks.size(); ++j) {
      write_masks(mask_dir, "scene" + std::to_string(k) + "_expr" + std::to_string(j), seg.masks[j]);
    }
  }
  write_json(out / "report.json", report);
  std::cout << "mIoU " << s.miou << " over " << s.pairs.size() << " pairs; config_hash " << config_hash(trained)
            << "\n";
  return 0;
}

int cmd_segment(const fs::path& ckpt, const fs::path& image_path, const std::vector<std::string>& exprs,
                const fs::path& out, bool merge) {
  const Checkpoint ck = Checkpoint::load(ckpt);
  const RunConfig cfg = config_from_checkpoint(ck);
  const Model model = model_from_checkpoint(ck, cfg);
  const Image image = to_image(decode_pnm(read_file(image_path)));
  std::vector<TokenSeq> queries;
  for (const auto& e : exprs) queries.push_back(Vocabulary::encode(e));
  SegmentOptions opt = segment_options(cfg);
  opt.clear_absent = true;
  const Segmentation seg = segment(model, image, queries, opt);
  fs::create_directories(out);
  json report = manifest(cfg, "segment");
  report["image"] = image_path.string();
  report["queries"] = json::array();
  for (std::size_t j = 0; j < queries.size(); ++j) {
    const std::string stem = "mask" + std::to_string(j);
    write_masks(out, stem, seg.masks[j]);
    const bool absent = seg.scores[j] < 0.0;
    report["queries"].push_back({{"expression", exprs[j]},
                                 {"score", seg.scores[j]},
                                 {"absent", absent},
                                 {"area", seg.masks[j].binary.area()},
                                 {"mask", stem + ".pgm"}});
    std::cout << exprs[j] << ": z=" << seg.scores[j] << (absent ? " absent" : "") << "\n";
  }
  if (merge) {
    const PixelMask merged = merge_masks(seg.masks);
    write_masks(out, "merged", merged);
    report["merged"] = {{"mask", "merged.pgm"}, {"area", merged.binary.area()}};
  }
  write_json(out / "segment.json", report);
  return 0;
}

int cmd_gradcheck(std::size_t points) {
  GradSuiteOptions o;
  o.points = points;
  bool ok = true;
  for (const auto& r : run_grad_suite(o)) {
    std::printf("%-34s points=%zu max_rel_err=%.3e %s\n", r.name.c_str(), r.points, r.max_rel_error,
                r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? 0 : kExitCheck;
}

int cmd_compare(const ConfigArgs& ca, const std::vector<std::uint64_t>& seeds, bool with_full, const fs::path& out,
                bool quiet) {
  const RunConfig base = ca.load();
  struct Row {
    std::string name;
    std::vector<double> miou;
  };
  std::vector<Row> rows;
  std::vector<std::pair<std::string, RunConfig>> variants;
  for (Mechanism m : {Mechanism::GMP, Mechanism::GAP, Mechanism::SPA, Mechanism::MPA}) {
    RunConfig c = base;
    c.train.mode = TrainMode::Weak;
    c.train.pooling.mechanism = m;
    variants.emplace_back(mechanism_name(m), c);
  }
  if (with_full) {
    RunConfig c = base;
    c.train.mode = TrainMode::Full;
    variants.emplace_back("full", c);
  }
  json report = manifest(base, "compare");
  report["runs"] = json::array();
  for (auto& [name, c] : variants) {
    Row row{name, {}};
    for (std::uint64_t seed : seeds) {
      c.train.seed = seed;
      if (!quiet) std::cerr << "training " << name << " seed " << seed << "\n";
      const RunOutcome o = run_experiment(c, seed);
      row.miou.push_back(o.summary.miou);
      json run{{"method", name}, {"seed", seed}, {"config_hash", config_hash(c)}};
      run["results"] = summary_json(o.summary);
      report["runs"].push_back(std::move(run));
    }
    rows.push_back(std::move(row));
  }
  std::printf("%-10s", "Method");
  for (auto s : seeds) std::printf("  seed %-4llu", static_cast<unsigned long long>(s));
  std::printf("  %8s\n", "mean");
  for (const auto& r : rows) {
    double mean = 0.0;
    std::printf("%-10s", r.name.c_str());
    for (double v : r.miou) {
      std::printf("  %9.2f", 100.0 * v);
      mean += v;
    }
    std::printf("  %8.2f\n", 100.0 * mean / static_cast<double>(r.miou.size()));
  }
  if (!out.empty()) {
    fs::create_directories(out);
    write_json(out / "compare.json", report);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-to-patch weakly supervised segmentation on synthetic scenes"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  ConfigArgs gen_cfg, train_cfg, cmp_cfg;
  std::string out_dir = "out", split = "train", ckpt, image, out_seg = "segment";
  std::size_t count = 16, scenes = 0, mask_scenes = 4, points = 20;
  std::uint64_t seed = 0;
  std::vector<std::string> exprs;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool quiet = false, merge = false, with_full = false;

  auto* gen = app.add_subcommand("gen-data", "write scenes, masks and a manifest");
  gen_cfg.attach(gen);
  gen->add_option("-o,--out", out_dir, "output directory");
  gen->add_option("-n,--count", count, "number of scenes");
  gen->add_option("--split", split, "train or eval")->check(CLI::IsMember({"train", "eval"}));
  auto* gen_seed = gen->add_option("--seed", seed, "override the run seed");

  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint and loss log");
  train_cfg.attach(tr);
  tr->add_option("-o,--out", out_dir, "output directory");
  tr->add_flag("-q,--quiet", quiet, "no progress output");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the eval split");
  ev->add_option("checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("-o,--out", out_dir, "output directory");
  auto* ev_seed = ev->add_option("--seed", seed, "eval split seed (default: training seed)");
  ev->add_option("--scenes", scenes, "number of eval scenes (default: from config)");
  ev->add_option("--mask-scenes", mask_scenes, "scenes whose masks are written");

  auto* sg = app.add_subcommand("segment", "segment one image for a list of expressions");
  sg->add_option("checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  sg->add_option("-i,--image", image, "P6 image")->required()->check(CLI::ExistingFile);
  sg->add_option("-e,--expr", exprs, "expression, e.g. \"red square\"")->required();
  sg->add_option("-o,--out", out_seg, "output directory");
  sg->add_flag("--merge", merge, "also write the union of all masks");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable pipeline");
  gc->add_option("--points", points, "random points per pipeline");

  auto* cmp = app.add_subcommand("compare", "train all pooling mechanisms on shared seeds and tabulate mIoU");
  cmp_cfg.attach(cmp);
  cmp->add_option("--seeds", seeds, "seeds")->delimiter(',');
  cmp->add_flag("--with-full", with_full, "add a fully supervised row");
  cmp->add_option("-o,--out", out_dir, "directory for compare.json");
  cmp->add_flag("-q,--quiet", quiet, "no progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(gen_cfg, out_dir, count, split, seed, gen_seed->count() > 0);
    if (*tr) return cmd_train(train_cfg, out_dir, quiet);
    if (*ev) return cmd_eval(ckpt, out_dir, seed, ev_seed->count() > 0, scenes, mask_scenes);
    if (*sg) return cmd_segment(ckpt, image, exprs, out_seg, merge);
    if (*gc) return cmd_gradcheck(points);
    if (*cmp) return cmd_compare(cmp_cfg, seeds, with_full, out_dir, quiet);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheck;
  }
  return kExitConfig;
}
