#include "support.hpp"

#include <chrono>
#include <fstream>
#include <sys/wait.h>

#include "json.hpp"

using sct::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result sctctl(const std::string &args, const fs::path &scratch) {
  const fs::path out = scratch / "stdout.txt";
  const std::string cmd = "SCT_QUIET=1 " + std::string(SCTCTL_PATH) + " " + args + " > " + out.string() + " 2>" +
                          (scratch / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  r.out.assign(std::istreambuf_iterator<char>(in), {});
  return r;
}

} // namespace

TEST_CASE("command line exit codes") {
  TempDir dir("cli");
  CHECK(sctctl("--help", dir.path()).code == 0);
  CHECK(sctctl("", dir.path()).code == 2);
  CHECK(sctctl("bogus", dir.path()).code == 2);
  CHECK(sctctl("misalign", dir.path()).code == 2);
  CHECK(sctctl("train --variant nope --data-root " + dir.path().string(), dir.path()).code == 2);
  CHECK(sctctl("train --quality 50 --data-root " + dir.path().string(), dir.path()).code == 2);
  CHECK(sctctl("generate --set train.no_such_key=1", dir.path()).code == 2);
  CHECK(sctctl("generate --config " + (dir / "missing.json").string(), dir.path()).code == 2);
  CHECK(sctctl("eval --checkpoint " + (dir / "missing.pt").string(), dir.path()).code == 3);
  CHECK(sctctl("misalign --alpha 0.5 --data-root " + (dir / "nothing").string(), dir.path()).code == 3);
  CHECK(sctctl("report --output-dir " + (dir / "empty").string(), dir.path()).code == 3);
}

TEST_CASE("generate, train, eval and report through the command line") {
  TempDir dir("cli-flow");
  const std::string data = " --data-root " + (dir / "data").string();
  const std::string out = " --output-dir " + (dir / "runs").string();
  const std::string grid = " --set 'grid.variants=[\"mm_stn\"]' --set 'grid.alpha_a_levels=[0.25]'"
                           " --set 'grid.quality_levels=[32]' --n-splits 1";

  REQUIRE(sctctl("generate --n-cases 11 --set phantom.size=32" + data + grid, dir.path()).code == 0);
  CHECK(fs::exists(dir / "data" / "manifest.json"));
  CHECK(fs::exists(dir / "data" / "case_010" / "cbct_q32.nii.gz"));
  CHECK_FALSE(fs::exists(dir / "data" / "case_000" / "cbct_q64.nii.gz"));
  REQUIRE(sctctl("misalign --alpha 0.25" + data, dir.path()).code == 0);

  const auto t0 = std::chrono::steady_clock::now();
  const Result train = sctctl("train --epochs 2 --variant mm_stn --alpha 0.25 --quality 32" + data + out, dir.path());
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE(train.code == 0);
  MESSAGE("train --epochs 2 at 32^3 with 8 training cases: " << seconds << " s");
  CHECK(seconds < 60.0);
  const fs::path ckpt = dir / "runs" / "mm_stn_a0.25_q32" / "split_0.pt";
  CHECK(fs::exists(ckpt));

  const Result eval = sctctl("eval --format json --checkpoint " + ckpt.string() + data + out, dir.path());
  REQUIRE(eval.code == 0);
  const auto j = nlohmann::json::parse(eval.out);
  CHECK(j.at("cases").size() == 1);
  CHECK(j.at("n_runs") == 1);

  CHECK(sctctl("grid --epochs 2" + data + out + grid, dir.path()).code == 0);
  CHECK(fs::exists(dir / "runs" / "table.csv"));
  CHECK_FALSE(fs::exists(dir / "runs" / "table.md"));
  const Result report = sctctl("report --no-montage" + data + out + grid, dir.path());
  CHECK(report.code == 3); // the MM and Base counterparts are missing from this grid

  const Result untrained =
      sctctl("train --epochs 0 --variant mm_stn --alpha 0.25 --quality 32" + data + " --output-dir " +
                 (dir / "untrained").string(),
             dir.path());
  REQUIRE(untrained.code == 0);
  const Result ident = sctctl("eval --format json --checkpoint " +
                                  (dir / "untrained" / "mm_stn_a0.25_q32" / "split_0.pt").string() + data,
                              dir.path());
  REQUIRE(ident.code == 0);
  const auto k = nlohmann::json::parse(ident.out);
  for (const auto &c : k.at("cases")) CHECK(c.at("ct_only") == c.at("ct_warped"));
}

TEST_CASE("divergence maps to the runtime exit code") {
  TempDir dir("cli-div");
  const std::string data = " --data-root " + (dir / "data").string();
  const std::string small = " --set phantom.size=16 --set 'unet.features=[2,2,2,2]'"
                            " --set 'localization.conv_filters=[2,2,2]' --extractor identity --set 'grid.quality_levels=[32]'";
  REQUIRE(sctctl("generate --n-cases 10" + data + small, dir.path()).code == 0);
  CHECK(sctctl("train --epochs 3 --variant mm --alpha 0 --quality 32 --set train.learning_rate=1e38" + data + small +
                   " --output-dir " + (dir / "runs").string(),
               dir.path())
            .code == 4);
}
