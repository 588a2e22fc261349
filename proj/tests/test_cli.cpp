// Runs the tprune-cli executable end to end. Fixtures are built with the core library.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <sstream>

#include "support.hpp"
#include "tprune/model_io.hpp"

using namespace tprune;
using testing::slurp;
using testing::TempDir;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

// stdout is captured, stderr goes to a file next to the fixtures
Run cli(const std::string& args, const TempDir& dir) {
  const std::string cmd = std::string(TPRUNE_CLI_PATH) + " " + args + " 2>" + (dir / "stderr.txt").string();
  Run r;
  std::FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t got = 0;
  while ((got = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, got);
  const int raw = pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

// Last line of `text` (the data row of eval/bench/flops output).
std::string last_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return last;
}

std::vector<std::string> fields(const std::string& row) {
  std::vector<std::string> f;
  std::stringstream ss(row);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  return f;
}

std::vector<std::string> data_lines(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') lines.push_back(line);
  return lines;
}

std::string tiny_unet(const TempDir& dir, std::uint64_t seed = 1) {
  UNetConfig cfg;
  cfg.depth = 1;
  cfg.base_channels = 4;
  cfg.height = cfg.width = 32;
  const auto path = dir / ("unet_" + std::to_string(seed));
  save_model(build_unet(cfg, seed), path);
  return path.string();
}

const std::string kData = "--n 16 --hw 32 --score-frac 0.5 --eval-frac 0.5 --train-frac 0";

}  // namespace

TEST_CASE("flops on a single 3x3 conv") {
  TempDir dir;
  Model m;
  m.add_conv("conv", m.add_input("input", 3, 32, 32), 8, 3, true);
  save_model(m, dir / "conv");
  const Run r = cli("flops --model " + (dir / "conv").string(), dir);
  REQUIRE(r.status == 0);
  CHECK(r.out.rfind("# schema: tprune.flops.v1\n", 0) == 0);
  CHECK(r.out.find("flops,params,prunable_channels,height,width\n") != std::string::npos);
  CHECK(last_line(r.out) == "450560,224,8,32,32");
  CHECK(last_line(cli("flops --model " + (dir / "conv").string() + " --height 64 --width 64", dir).out) ==
        "1802240,224,8,64,64");
}

TEST_CASE("eval on an identity model scores IoU 1") {
  TempDir dir;
  Model m;
  m.add_conv("head", m.add_input("input", 1, 32, 32), 1, 1, false);
  m.layer(1).weight[0] = 100.0f;
  m.layer(1).bias[0] = -50.0f;
  save_model(m, dir / "identity");
  Dataset pairs;
  for (const auto& p : generate_blobs(6, 32, 32, 3)) pairs.push_back({p.mask, p.mask, p.id});
  save_pairs(dir / "data", pairs);
  const Run r = cli("eval --model " + (dir / "identity").string() + " --data " + (dir / "data").string() +
                        " --eval-frac 1 --score-frac 0 --train-frac 0",
                    dir);
  REQUIRE(r.status == 0);
  CHECK(r.out.rfind("# schema: tprune.eval.v1\n", 0) == 0);
  const auto f = fields(last_line(r.out));
  REQUIRE(f.size() == 5);
  CHECK(f[0] == "1");
  CHECK(f[1] == "1");
  CHECK(f[2] == "6");
}

TEST_CASE("importance is reproducible and honours --samples") {
  TempDir dir;
  const std::string model = tiny_unet(dir);
  const std::string base = "importance --model " + model + " " + kData + " --seed 3";
  REQUIRE(cli(base + " --out " + (dir / "a.csv").string(), dir).status == 0);
  REQUIRE(cli(base + " --out " + (dir / "b.csv").string(), dir).status == 0);
  REQUIRE(cli(base + " --samples 3 --out " + (dir / "c.csv").string(), dir).status == 0);
  const std::string a = slurp(dir / "a.csv");
  CHECK(a == slurp(dir / "b.csv"));
  const auto rows = data_lines(a);
  CHECK(rows.front() == "layer_id,filter_index,score");
  CHECK(rows.size() == 1 + 32);
  CHECK(a.find("# sample_count=") != std::string::npos);
  CHECK(a.find("# seed=3\n") != std::string::npos);
  const std::string c = slurp(dir / "c.csv");
  CHECK(c.find("importance.samples=3") != std::string::npos);
  CHECK(c != a);
}

TEST_CASE("prune then eval reproduces the sweep row") {
  TempDir dir;
  const std::string model = tiny_unet(dir, 2);
  const std::string common = "--model " + model + " " + kData + " --seed 5";
  const std::string report = (dir / "r.csv").string();
  REQUIRE(cli("importance " + common + " --out " + report, dir).status == 0);
  REQUIRE(cli("sweep " + common + " --report " + report + " --schedule 0,6 --no-latency --out " +
                  (dir / "sweep.csv").string(),
              dir)
              .status == 0);
  CHECK(std::filesystem::exists(dir / "sweep_iou_params.svg"));
  CHECK(std::filesystem::exists(dir / "sweep_time_flops.svg"));
  const auto rows = data_lines(slurp(dir / "sweep.csv"));
  REQUIRE(rows.size() == 3);
  const auto row6 = fields(rows[2]);
  CHECK(row6[0] == "6");

  REQUIRE(cli("prune " + common + " --report " + report + " -P 6 --out " + (dir / "p6").string(), dir).status == 0);
  const Run ev = cli("eval --model " + (dir / "p6").string() + " " + kData + " --seed 5", dir);
  REQUIRE(ev.status == 0);
  CHECK(fields(last_line(ev.out))[0] == row6[1]);

  // P = 0 writes the same weights back
  REQUIRE(cli("prune " + common + " --report " + report + " -P 0 --out " + (dir / "p0").string(), dir).status == 0);
  CHECK(slurp(dir / "p0" / kWeightsFile) == slurp(std::filesystem::path(model) / kWeightsFile));
}

TEST_CASE("failures exit non-zero and leave nothing behind") {
  TempDir dir;
  std::filesystem::create_directories(dir / "junk");
  std::ofstream(dir / "junk" / kManifestFile) << "{ nope";
  const Run r = cli("flops --model " + (dir / "junk").string(), dir);
  CHECK(r.status != 0);
  CHECK(slurp(dir / "stderr.txt").find("tprune flops:") != std::string::npos);

  const std::string model = tiny_unet(dir);
  const std::string out = (dir / "never.csv").string();
  // 40 exceeds the prune budget of this model
  const Run s = cli("sweep --model " + model + " " + kData + " --schedule 0,40 --no-latency --out " + out, dir);
  CHECK(s.status != 0);
  CHECK_FALSE(std::filesystem::exists(out));
  CHECK_FALSE(std::filesystem::exists(out + ".partial"));

  const Run p = cli("prune --model " + model + " --report " + (dir / "missing.csv").string() + " -P 1 --out " +
                        (dir / "pm").string(),
                    dir);
  CHECK(p.status != 0);
  CHECK_FALSE(std::filesystem::exists(dir / "pm"));
  CHECK_FALSE(std::filesystem::exists(dir / "pm.partial"));

  CHECK(cli("no-such-command", dir).status != 0);
}

TEST_CASE("config file supplies defaults and flags win") {
  TempDir dir;
  const std::string model = tiny_unet(dir, 3);
  std::ofstream(dir / "cfg.toml") << "seed = 11\nn = 16\nhw = 32\nscore-frac = 0.5\neval-frac = 0.5\ntrain-frac = 0\n";
  const std::string cfg = " --config " + (dir / "cfg.toml").string();
  const Run a = cli("eval --model " + model + cfg, dir);
  REQUIRE(a.status == 0);
  CHECK(a.out.find("# seed=11\n") != std::string::npos);
  CHECK(a.out.find("# n=16\n") != std::string::npos);
  const Run b = cli("eval --model " + model + cfg + " --seed 12", dir);
  REQUIRE(b.status == 0);
  CHECK(b.out.find("# seed=12\n") != std::string::npos);
  CHECK(b.out.find("# data-seed=12\n") != std::string::npos);
}

TEST_CASE("train writes a model and a step log") {
  TempDir dir;
  const std::string out = (dir / "trained").string();
  const Run r = cli("train --n 16 --hw 32 --seed 2 --out " + out + " --depth 1 --base 4 --steps 3 --batch 2", dir);
  REQUIRE(r.status == 0);
  CHECK(std::filesystem::exists(std::filesystem::path(out) / kManifestFile));
  const std::string log = slurp(out + ".train_log.csv");
  CHECK(log.rfind("# schema: tprune.train_log.v1\n", 0) == 0);
  const auto rows = data_lines(log);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "step,loss,iou");
  CHECK(fields(rows[3]).size() == 3);
  CHECK(slurp(std::filesystem::path(out) / kManifestFile).find("train.steps=3") != std::string::npos);

  const Run b = cli("bench --model " + out + " --samples 2 --batch 1 --reps 2 --warmup 0", dir);
  REQUIRE(b.status == 0);
  CHECK(b.out.find("mean_s,std_s,min_s,std_defined,samples,batch,warmup,reps\n") != std::string::npos);
  CHECK(fields(last_line(b.out))[3] == "1");
}
