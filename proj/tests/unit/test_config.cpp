#include <doctest.h>

#include "promos/config.hpp"
#include "promos/error.hpp"
#include "support.hpp"

using namespace promos;
using nlohmann::json;

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.train.lr == 5e-3);
  CHECK(c.train.epochs == 10);
  CHECK(c.train.lambda == 0.5);
  CHECK(c.model.num_students == 20);
  CHECK(c.model.num_prototypes == 20);
  CHECK(c.model.top_k == 2);
  CHECK(c.model.beta == 1.0);
  CHECK(c.model.mu == 0.6);
  CHECK(c.model.temperature == 2.0);
  CHECK(c.injection.clique_size == 15);
}

TEST_CASE("json round trip is lossless") {
  RunConfig c;
  c.seed = 17;
  c.unify_dim = 12;
  c.model.num_students = 5;
  c.model.mu = 0.123456789012345;
  c.train.optimizer = OptimizerKind::Adam;
  c.train.use_psd = false;
  c.train.div_weight = 0.25;
  c.ssl.epochs = 3;
  c.injection.candidates = 9;
  c.train_graphs = {"a", "b"};
  c.output_dir = "out";
  c.resolve();
  const RunConfig back = run_config_from_json(to_json(c));
  CHECK(dump_config(back) == dump_config(c));
  CHECK(config_hash(back) == config_hash(c));
  CHECK(back.train.seed == 17);
  CHECK(back.injection.seed == 17);
  CHECK(back.ssl.seed == 17);
  CHECK(back.train.optimizer == OptimizerKind::Adam);
  c.seed = 18;
  CHECK(config_hash(back) != config_hash(c));
}

TEST_CASE("partial configs keep defaults") {
  const RunConfig c = run_config_from_json(json{{"train", {{"epochs", 3}}}});
  CHECK(c.train.epochs == 3);
  CHECK(c.train.lr == 5e-3);
}

TEST_CASE("every problem is reported at once") {
  const json j = {{"bogus", 1},
                  {"model", {{"top_k", "two"}, {"extra", true}}},
                  {"train", {{"lr", -1.0}, {"optimizer", "rmsprop"}}}};
  try {
    run_config_from_json(j);
    FAIL("accepted");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bogus") != std::string::npos);
    CHECK(msg.find("model.top_k") != std::string::npos);
    CHECK(msg.find("model.extra") != std::string::npos);
    CHECK(msg.find("optimizer") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
    CHECK(msg.find("invalid config") == 0);
  }
}

TEST_CASE("files") {
  testing::TempDir dir("cfg");
  testing::write_file(dir / "c.json", "{\"seed\": 4}");
  CHECK(load_run_config(dir / "c.json").seed == 4);
  testing::write_file(dir / "bad.json", "{seed: ");
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ValidationError);
  CHECK_THROWS_AS(load_run_config(dir / "none.json"), ValidationError);
}
