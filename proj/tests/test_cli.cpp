#include <doctest.h>

#include <numbers>
#include <sstream>

#include "nmsr/io.hpp"
#include "nmsr/metrics.hpp"
#include "nmsr_cli/cli.hpp"
#include "support.hpp"

using namespace nmsr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome nmsr_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string path(const fs::path& p) { return p.string(); }

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<std::string> na, nb;
  for (const auto& e : fs::directory_iterator(a)) na.push_back(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) nb.push_back(e.path().filename().string());
  std::sort(na.begin(), na.end());
  std::sort(nb.begin(), nb.end());
  if (na != nb) return false;
  for (const auto& n : na) {
    if (testing::read_bytes(a / n) != testing::read_bytes(b / n)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("gen is deterministic and static sequences are constant") {
  const auto root = testing::scratch_dir("cli_gen");
  const std::vector<std::string> base{"gen", "--u", "1.5", "--v", "-0.5", "--frames", "4", "--seed", "3"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", path(root / "a")});
  b.insert(b.end(), {"--out", path(root / "b")});
  REQUIRE(nmsr_cli(a).code == cli::kSuccess);
  REQUIRE(nmsr_cli(b).code == cli::kSuccess);
  CHECK(same_tree(root / "a", root / "b"));

  REQUIRE(nmsr_cli({"gen", "--u", "0", "--v", "0", "--noise", "0", "--frames", "3", "--out",
                    path(root / "s")})
              .code == cli::kSuccess);
  const auto s = read_sequence_dir(root / "s");
  CHECK(s.sequence.frames[0] == s.sequence.frames[1]);
  CHECK(s.sequence.frames[1] == s.sequence.frames[2]);
  CHECK(s.flows.size() == 2);

  CHECK(nmsr_cli({"gen", "--kind", "spiral", "--out", path(root / "x")}).code == cli::kInputError);
  CHECK(nmsr_cli({"gen"}).code == cli::kInputError);
}

TEST_CASE("register defaults are echoed in the manifest") {
  const cli::RunConfig defaults;
  const auto kv = defaults.echo();
  CHECK(find_value(kv, "run.scales") == "1/8,1/4,1/2,1");
  CHECK(find_value(kv, "run.steps") == "3500");
  CHECK(find_value(kv, "run.lambda") == "10");
  CHECK(find_value(kv, "run.ncc_radius") == "6");
  CHECK(find_value(kv, "run.lr") == "0.001");

  const auto root = testing::scratch_dir("cli_defaults");
  REQUIRE(nmsr_cli({"gen", "--u", "1", "--frames", "2", "--out", path(root / "seq")}).code == 0);
  // Only the step count is overridden; everything else is the default.
  const auto r = nmsr_cli({"register", "-i", path(root / "seq"), "-o", path(root / "res"), "--steps", "2"});
  REQUIRE(r.code == cli::kSuccess);
  const auto m = read_key_values(root / "res" / "manifest.txt");
  CHECK(find_value(m, "scales") == "1/8,1/4,1/2,1");
  CHECK(find_value(m, "variant") == "multi_scale");
  CHECK(find_value(m, "lambda") == "10");
  CHECK(find_value(m, "ncc_radius") == "6");
  CHECK(find_value(m, "learning_rate") == "0.001");
  CHECK(find_value(m, "optimizer") == "adam");
  CHECK(find_value(m, "run.lambda") == "10");
  CHECK(fs::exists(root / "res" / "loss_scale_1_8.csv"));
  CHECK(fs::exists(root / "res" / "flow_0001.flo"));
}

TEST_CASE("register: single scale, determinism, multiple inputs") {
  const auto root = testing::scratch_dir("cli_register");
  for (const char* name : {"p", "q"}) {
    REQUIRE(nmsr_cli({"gen", "--u", "1", "--v", "0.5", "--frames", "3", "--size", "32", "--out",
                      path(root / name)})
                .code == 0);
  }
  const std::vector<std::string> small{"--steps", "5", "--encoder", "4,4", "--decoder", "4,4"};
  auto reg = [&](std::vector<std::string> extra, const std::string& out) {
    std::vector<std::string> args{"register", "-i", path(root / "p"), "-o", path(root / out)};
    args.insert(args.end(), small.begin(), small.end());
    args.insert(args.end(), extra.begin(), extra.end());
    return nmsr_cli(args).code;
  };
  REQUIRE(reg({"--scales", "1"}, "one") == 0);
  REQUIRE(reg({"--variant", "single_scale"}, "single") == 0);
  CHECK(read_flow_dir(root / "one") == read_flow_dir(root / "single"));

  REQUIRE(reg({"--scales", "1/4,1/2,1"}, "r1") == 0);
  REQUIRE(reg({"--scales", "1/4,1/2,1"}, "r2") == 0);
  for (const char* f : {"flow_0001.flo", "flow_0002.flo"}) {
    CHECK(testing::read_bytes(root / "r1" / f) == testing::read_bytes(root / "r2" / f));
  }

  const auto both = nmsr_cli({"register", "-i", path(root / "p"), "-i", path(root / "q"), "-o",
                              path(root / "both"), "--steps", "2", "--scales", "1", "--encoder",
                              "4,4", "--decoder", "4,4", "--jobs", "2"});
  CHECK(both.code == 0);
  CHECK(fs::exists(root / "both" / "p" / "flow_0002.flo"));
  CHECK(fs::exists(root / "both" / "q" / "flow_0002.flo"));

  CHECK(reg({"--scales", "1/2,1/4,1"}, "bad") == cli::kInputError);
  CHECK(reg({"--lambda", "-1"}, "bad") == cli::kInputError);
  CHECK(reg({"--warm-start", "from_checkpoint"}, "bad") == cli::kInputError);
  CHECK(nmsr_cli({"register", "-i", path(root / "nope"), "-o", path(root / "x")}).code ==
        cli::kInputError);
}

TEST_CASE("eval") {
  const auto root = testing::scratch_dir("cli_eval");
  REQUIRE(nmsr_cli({"gen", "--u", "1.25", "--v", "-0.75", "--noise", "0", "--frames", "3", "--out",
                    path(root / "seq")})
              .code == 0);
  // The stored truth warps each frame onto the next.
  const auto r = nmsr_cli({"eval", "-s", path(root / "seq"), "-f", path(root / "seq"), "-o",
                           path(root / "rep")});
  REQUIRE(r.code == cli::kSuccess);
  std::istringstream csv(testing::read_bytes(root / "rep" / "report.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "pair,mse,mean_cc,epe,angular_error_deg");
  int rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string cell;
    std::vector<double> cells;
    while (std::getline(row, cell, ',')) cells.push_back(std::stod(cell));
    CHECK(cells[1] < 1e-6);
    CHECK(cells[3] == 0.0);
    ++rows;
  }
  CHECK(rows == 2);

  REQUIRE(nmsr_cli({"gen", "--u", "0", "--v", "0", "--noise", "0", "--frames", "3", "--out",
                    path(root / "static")})
              .code == 0);
  fs::create_directories(root / "zero");
  for (int i = 1; i <= 2; ++i) write_flo(root / "zero" / flow_name(i), FlowField(64, 64));
  REQUIRE(nmsr_cli({"eval", "-s", path(root / "static"), "-f", path(root / "zero")}).code == 0);
  std::istringstream zcsv(testing::read_bytes(root / "zero" / "report.csv"));
  std::getline(zcsv, line);
  while (std::getline(zcsv, line)) {
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    const auto third = line.find(',', second + 1);
    CHECK(std::stod(line.substr(second + 1, third - second - 1)) > 1.0 - 1e-3);
  }

  fs::remove(root / "zero" / flow_name(2));
  CHECK(nmsr_cli({"eval", "-s", path(root / "static"), "-f", path(root / "zero")}).code ==
        cli::kInputError);
}

TEST_CASE("viz") {
  const auto root = testing::scratch_dir("cli_viz");
  fs::create_directories(root / "z");
  write_flo(root / "z" / flow_name(1), FlowField(6, 4));
  REQUIRE(nmsr_cli({"viz", "-f", path(root / "z")}).code == 0);
  const auto white = read_ppm(root / "z" / "flow_0001.ppm");
  for (auto c : white.rgb) CHECK(c == 255);

  // A fixed scale colours the same vector identically across files.
  fs::create_directories(root / "m");
  FlowField a(2, 1), b(2, 1);
  a.dx(0, 0) = 1.0;
  a.dx(1, 0) = 2.0;
  b.dx(0, 0) = 1.0;
  b.dx(1, 0) = 8.0;
  write_flo(root / "m" / flow_name(1), a);
  write_flo(root / "m" / flow_name(2), b);
  REQUIRE(nmsr_cli({"viz", "-f", path(root / "m"), "--max-mag", "8"}).code == 0);
  const auto ia = read_ppm(root / "m" / "flow_0001.ppm");
  const auto ib = read_ppm(root / "m" / "flow_0002.ppm");
  for (int c = 0; c < 3; ++c) CHECK(ia.channel(0, 0, c) == ib.channel(0, 0, c));

  // Around the vortex core the hue passes through every primary.
  REQUIRE(nmsr_cli({"gen", "--kind", "vortex", "--max-speed", "3", "--core-radius", "20", "--frames",
                    "2", "--out", path(root / "v")})
              .code == 0);
  REQUIRE(nmsr_cli({"viz", "-f", path(root / "v"), "-o", path(root / "vimg")}).code == 0);
  const auto img = read_ppm(root / "vimg" / "flow_0001.ppm");
  bool dominant[3] = {false, false, false};
  for (int k = 0; k < 72; ++k) {
    const double t = 2.0 * std::numbers::pi * k / 72.0;
    const auto x = static_cast<std::int64_t>(std::lround(32.0 + 20.0 * std::cos(t)));
    const auto y = static_cast<std::int64_t>(std::lround(32.0 + 20.0 * std::sin(t)));
    int best = 0;
    for (int c = 1; c < 3; ++c) {
      if (img.channel(x, y, c) > img.channel(x, y, best)) best = c;
    }
    dominant[best] = true;
  }
  CHECK(dominant[0]);
  CHECK(dominant[1]);
  CHECK(dominant[2]);

  CHECK(nmsr_cli({"viz", "-f", path(root / "empty")}).code == cli::kInputError);
}

TEST_CASE("selftest exit codes") {
  const auto ok = nmsr_cli({"selftest"});
  CHECK(ok.code == cli::kSuccess);
  const auto bad = nmsr_cli({"selftest", "--corrupt-conv-backward"});
  CHECK(bad.code == cli::kSelftestFailure);
  CHECK(bad.out.find("conv2d") != std::string::npos);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("divergence maps to its own exit code") {
  const auto root = testing::scratch_dir("cli_diverge");
  REQUIRE(nmsr_cli({"gen", "--u", "1", "--frames", "2", "--size", "32", "--out", path(root / "seq")})
              .code == 0);
  // An absurd learning rate drives the parameters, and then the loss, non-finite.
  const auto r = nmsr_cli({"register", "-i", path(root / "seq"), "-o", path(root / "res"), "--scales",
                           "1", "--steps", "20", "--lr", "1e300", "--encoder", "4,4", "--decoder",
                           "4,4"});
  CHECK(r.code == cli::kNumericDivergence);
  CHECK(r.err.find("non-finite") != std::string::npos);
}
