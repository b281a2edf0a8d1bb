#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "fixtures.hpp"
#include "pnm_reader.hpp"
#include "tseg/checkpoint.hpp"

#ifndef TSEG_BIN
#error "TSEG_BIN must name the command-line binary"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(TSEG_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path workdir() {
  const fs::path dir = fs::temp_directory_path() / "tseg_test_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json load_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

fs::path write_tiny_config(const fs::path& dir) {
  tseg::RunConfig rc = fixture::tiny_run();
  rc.train.total_iters = 2;
  const fs::path path = dir / "tiny.cfg";
  std::ofstream(path) << tseg::canonical_text(rc);
  return path;
}

}  // namespace

TEST_CASE("gradcheck subcommand succeeds") { CHECK(run("gradcheck --points 2") == 0); }

TEST_CASE("configuration errors exit with status 2") {
  const fs::path dir = workdir();
  CHECK(run("train -o " + (dir / "x").string() + " --set bogus=1") == 2);
  CHECK(run("train -o " + (dir / "x").string() + " --set seed=minus") == 2);
  CHECK(run("train -o " + (dir / "x").string() + " --set image_size=36") == 2);
  CHECK(run("no-such-command") == 2);
  CHECK(run("eval " + (dir / "missing.ckpt").string()) == 2);
  std::ofstream(dir / "bad.cfg") << "seed = 1\nseed = 2\n";
  CHECK(run("train -c " + (dir / "bad.cfg").string() + " -o " + (dir / "x").string()) == 2);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK(run("eval " + (dir / "junk.ckpt").string() + " -o " + (dir / "x").string()) == 1);
}

TEST_CASE("gen-data, train, eval and segment round trip") {
  const fs::path dir = workdir();
  const fs::path cfg = write_tiny_config(dir);
  const std::string c = " -c " + cfg.string();

  REQUIRE(run("gen-data" + c + " -n 2 --split eval -o " + (dir / "data").string()) == 0);
  const json data = load_json(dir / "data" / "manifest.json");
  CHECK(data["scenes"].size() == 2);
  for (const auto& s : data["scenes"]) {
    const auto img = oracle::read_pnm_file((dir / "data" / s["image"].get<std::string>()).string());
    REQUIRE(img.has_value());
    CHECK(img->magic == "P6");
    CHECK(img->width == 32);
    for (const auto& e : s["expressions"]) {
      const auto m = oracle::read_pnm_file((dir / "data" / e["mask"].get<std::string>()).string());
      REQUIRE(m.has_value());
      CHECK(m->magic == "P5");
    }
  }

  REQUIRE(run("train -q" + c + " -o " + (dir / "run").string()) == 0);
  const json train_manifest = load_json(dir / "run" / "manifest.json");
  CHECK(train_manifest["iterations"] == 2);
  const tseg::Checkpoint ck = tseg::Checkpoint::load(dir / "run" / "model.ckpt");
  CHECK(ck.iteration == 2);
  CHECK(tseg::config_hash(tseg::parse_config(ck.config_text)) == train_manifest["config_hash"]);

  const std::string ckpt = (dir / "run" / "model.ckpt").string();
  REQUIRE(run("eval " + ckpt + " --scenes 3 --mask-scenes 1 -o " + (dir / "ev").string()) == 0);
  const json report = load_json(dir / "ev" / "report.json");
  CHECK(report["config_hash"] == train_manifest["config_hash"]);
  CHECK(report["seed"] == train_manifest["seed"]);
  CHECK(report["eval_scenes"] == 3);
  CHECK(report["results"]["miou"].get<double>() >= 0.0);
  CHECK(fs::exists(dir / "ev" / "masks" / "scene0_expr0.pgm"));

  const std::string image = (dir / "data" / data["scenes"][0]["image"].get<std::string>()).string();
  REQUIRE(run("segment " + ckpt + " -i " + image + " -e \"red square\" -e \"large thing\" --merge -o " +
              (dir / "seg").string()) == 0);
  const json seg = load_json(dir / "seg" / "segment.json");
  REQUIRE(seg["queries"].size() == 2);
  for (const auto& q : seg["queries"]) {
    CHECK(q["absent"].get<bool>() == (q["score"].get<double>() < 0.0));
    if (q["absent"].get<bool>()) CHECK(q["area"] == 0);
    CHECK(oracle::read_pnm_file((dir / "seg" / q["mask"].get<std::string>()).string()).has_value());
  }
  CHECK(oracle::read_pnm_file((dir / "seg" / "merged.pgm").string()).has_value());
  CHECK(run("segment " + ckpt + " -i " + image + " -e \"purple square\" -o " + (dir / "seg2").string()) == 1);

  // Same configuration, same bytes.
  REQUIRE(run("train -q" + c + " -o " + (dir / "run2").string()) == 0);
  CHECK(tseg::read_file(dir / "run2" / "model.ckpt") == tseg::read_file(dir / "run" / "model.ckpt"));
  REQUIRE(run("eval " + (dir / "run2" / "model.ckpt").string() + " --scenes 3 --mask-scenes 1 -o " +
              (dir / "ev2").string()) == 0);
  CHECK(tseg::read_file(dir / "ev2" / "masks" / "scene0_expr0.pgm") ==
        tseg::read_file(dir / "ev" / "masks" / "scene0_expr0.pgm"));
}
