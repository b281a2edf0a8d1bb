#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fixtures.hpp"
#include "pnm_reader.hpp"
#include "tseg/checkpoint.hpp"
#include "tseg/experiment.hpp"
#include "tseg/pnm.hpp"

using namespace tseg;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "tseg_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("pnm encodings parse under an independent reader") {
  BinaryMask m(3, 5);
  m.set(1, 2);
  m.set(2, 4);
  const auto pgm = encode_pgm(m);
  const auto r = oracle::read_pnm(pgm);
  REQUIRE(r.has_value());
  CHECK(r->magic == "P5");
  CHECK(r->width == 5);
  CHECK(r->height == 3);
  CHECK(r->maxval == 255);
  CHECK(r->data[1 * 5 + 2] == 255);
  CHECK(r->data[0] == 0);

  Grid g(2, 2);
  g.values = {0.0, 0.5, 1.0, 2.0};
  const auto gr = oracle::read_pnm(encode_pgm(g));
  REQUIRE(gr.has_value());
  CHECK(gr->data == std::vector<std::uint8_t>{0, 128, 255, 255});

  const SynthScene s = scene_at(1, 0, GeneratorConfig{});
  const auto ppm = encode_ppm(s.image);
  const auto pr = oracle::read_pnm(ppm);
  REQUIRE(pr.has_value());
  CHECK(pr->magic == "P6");
  CHECK(pr->data.size() == 64 * 64 * 3);
  CHECK(pr->data[(10 * 64 + 20) * 3 + 1] == quantize(s.image.at(10, 20, 1)));

  // Library round trip, comments included.
  CHECK(to_image(decode_pnm(ppm)) == to_image(decode_pnm(encode_ppm(to_image(decode_pnm(ppm))))));
  const std::string commented = "P5\n# note\n2 1\n255\n\x01\x02";
  const Pnm p = decode_pnm(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(commented.data()),
                                                           commented.size()));
  CHECK(p.width == 2);
  CHECK(p.pixels == std::vector<std::uint8_t>{1, 2});
  const std::string truncated = "P6\n2 2\n255\n\x01";
  CHECK_THROWS_AS(decode_pnm(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(truncated.data()),
                                                            truncated.size())),
                  std::runtime_error);
  const std::string deep = "P5\n1 1\n65535\n\x01\x02";
  CHECK_THROWS_AS(
      decode_pnm(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(deep.data()), deep.size())),
      std::runtime_error);
}

TEST_CASE("checkpoint round trip is byte identical") {
  const TrainConfig tc = fixture::tiny_train();
  const Model model(tc.encoder, 3);
  const RunConfig rc = fixture::tiny_run();
  Checkpoint ck{model.params(), 1234, canonical_text(rc)};
  const auto bytes = ck.serialize();
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "TSEGCKPT");
  const Checkpoint back = Checkpoint::deserialize(bytes);
  CHECK(back.iteration == 1234);
  CHECK(back.config_text == ck.config_text);
  CHECK(back.serialize() == bytes);
  for (const auto& [name, t] : back.params) {
    const Tensor& orig = model.params().at(name);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == static_cast<double>(static_cast<float>(orig[i])));
  }
  const auto path = scratch("rt.ckpt");
  ck.save(path);
  CHECK(read_file(path) == bytes);
  CHECK(Checkpoint::load(path).serialize() == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(Checkpoint::deserialize(bad), std::runtime_error);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(Checkpoint::deserialize(cut), std::runtime_error);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(Checkpoint::deserialize(extra), std::runtime_error);
}

TEST_CASE("one training iteration records its counter") {
  TrainConfig tc = fixture::tiny_train();
  tc.total_iters = 1;
  const TrainResult r = train(tc);
  const Checkpoint ck = Checkpoint::deserialize(make_checkpoint(r, "seed = 1\n").serialize());
  CHECK(ck.iteration == 1);
  CHECK_NOTHROW(Model(tc.encoder, ck.params));
}

TEST_CASE("config text round trip") {
  RunConfig c = fixture::tiny_run();
  c.train.pooling.mechanism = Mechanism::SPA;
  c.train.pooling.lambda = 0.02;
  c.train.base_lr = 1.0 / 3.0;
  c.heldout = {{2, ShapeKind::Triangle}, {5, ShapeKind::Square}};
  const std::string text = canonical_text(c);
  CHECK(text.find("mechanism = spa\n") != std::string::npos);
  CHECK(text.find("heldout = blue triangle, magenta square\n") != std::string::npos);
  const RunConfig back = parse_config(text);
  CHECK(canonical_text(back) == text);
  CHECK(back.train.base_lr == c.train.base_lr);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(c).size() == 16);
  // one key per line, every key present
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  CHECK(lines == config_keys().size());
}

TEST_CASE("config parsing rejects bad input") {
  CHECK_THROWS_AS(parse_config("colour = red\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("base_lr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("mechanism = cam\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("hflip = yes\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("just words\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("heldout = purple square\n"), ConfigError);
  try {
    parse_config("# header\nseed = 1\nbogus = 2\n");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  const RunConfig c = parse_config("  mechanism = GMP  # trailing comment\n\nbatch_size=8\n");
  CHECK(c.train.pooling.mechanism == Mechanism::GMP);
  CHECK(c.train.batch_size == 8);

  RunConfig o;
  apply_override(o, "seed=9");
  CHECK(o.train.seed == 9);
  CHECK_THROWS_AS(apply_override(o, "nope=1"), ConfigError);
  RunConfig bad;
  bad.cam_beta = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  apply_override(bad, "image_size=36");
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("segment flags absent expressions") {
  const TrainConfig tc = fixture::tiny_train();
  const Model model(tc.encoder, 5);
  const SynthScene s = scene_at(2, 0, tc.generator);
  std::vector<TokenSeq> queries;
  for (const auto& e : s.expressions) queries.push_back(e.tokens);
  queries.push_back(Vocabulary::encode("small white thing"));
  for (DecodeMode mode : {DecodeMode::MPA, DecodeMode::SPA, DecodeMode::CAM, DecodeMode::Logits}) {
    SegmentOptions opt;
    opt.mode = mode;
    opt.clear_absent = true;
    const Segmentation seg = segment(model, s.image, queries, opt);
    REQUIRE(seg.masks.size() == queries.size());
    CHECK(seg.similarity.shape() == Shape{tc.encoder.num_patches(), queries.size()});
    for (std::size_t j = 0; j < queries.size(); ++j) {
      CHECK(seg.masks[j].binary.height == 32);
      if (seg.scores[j] < 0.0) CHECK(seg.masks[j].binary.area() == 0);
    }
  }
  // Flat similarities against a high background logit: every mask is near
  // empty, the size penalty dominates and every score is negative.
  ParamSet flat = model.params();
  flat["proj.log_temperature"][0] = std::log(10.0);
  const Model cold(tc.encoder, flat);
  SegmentOptions opt;
  opt.clear_absent = true;
  opt.pooling.s_bg = 5.0;
  const Segmentation seg = segment(cold, s.image, queries, opt);
  for (std::size_t j = 0; j < queries.size(); ++j) {
    CHECK(seg.scores[j] < 0.0);
    CHECK(seg.masks[j].binary.area() == 0);
  }
}

TEST_CASE("evaluation summary bookkeeping") {
  RunConfig rc = fixture::tiny_run();
  const Model model(rc.train.encoder, 8);
  const auto scenes = eval_scenes(rc, 4);
  CHECK(scenes.size() == 6);
  const EvalSummary s = evaluate(model, scenes, segment_options(rc));
  std::size_t expected_pairs = 0;
  for (const auto& sc : scenes) expected_pairs += sc.expressions.size();
  CHECK(s.pairs.size() == expected_pairs);
  double total = 0.0;
  for (const auto& p : s.pairs) total += p.record.iou;
  CHECK(s.miou == doctest::Approx(total / static_cast<double>(expected_pairs)));
  CHECK(s.overlap_scenes_with_pred_overlap <= s.overlap_scenes);
  CHECK_FALSE(s.seen_miou.has_value());
  CHECK(decode_mode_for(rc.train) == DecodeMode::MPA);
  rc.train.mode = TrainMode::Full;
  CHECK(decode_mode_for(rc.train) == DecodeMode::Logits);
  rc.train.mode = TrainMode::Weak;
  rc.train.pooling.mechanism = Mechanism::GAP;
  CHECK(decode_mode_for(rc.train) == DecodeMode::CAM);
}
