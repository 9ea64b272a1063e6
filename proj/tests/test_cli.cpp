#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "nirsfreq/cli.hpp"
#include "nirsfreq/common.hpp"
#include "nirsfreq/diff/nn.hpp"
#include "nirsfreq/harness.hpp"

using namespace nirsfreq;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

RunConfig small_run() {
  RunConfig cfg;
  cfg.synthetic.n_subjects = 8;
  cfg.synthetic.n_channels = 8;
  cfg.synthetic.planted_channels = {0, 1, 2};
  cfg.synthetic.effect_amplitude = 4.0;
  cfg.model.channels = 8;
  cfg.model.k = 2;
  cfg.model.d_k = 4;
  cfg.model.l_num = 1;
  cfg.model.gru_hidden = 4;
  cfg.model.gru_layers = 1;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 4;
  cfg.n_folds = 4;
  cfg.proportions = {0.5, 1.0};
  cfg.sweep_k = {1, 2};
  cfg.fam_k = {2};
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nirsfreq_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> list_files(const fs::path& root) {
  std::vector<std::string> rel;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file())
      rel.push_back(fs::relative(entry.path(), root).generic_string());
  std::sort(rel.begin(), rel.end());
  return rel;
}

// byte-level equality of two directory trees
bool same_tree(const fs::path& a, const fs::path& b) {
  const auto fa = list_files(a);
  const auto fb = list_files(b);
  if (fa != fb) return false;
  for (const auto& rel : fa)
    if (read_text_file(a / rel) != read_text_file(b / rel)) return false;
  return true;
}

const char* cli_bin() {
  const char* bin = std::getenv("NIRSFREQ_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "NIRSFREQ_BIN must point at the CLI binary");
  return bin;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("'") + cli_bin() + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string first_line(const fs::path& path) {
  const std::string text = read_text_file(path);
  return text.substr(0, text.find('\n'));
}

}  // namespace

// ===========================================================================
// run configuration
// ===========================================================================

TEST_CASE("run config json round trips and rejects unknown keys") {
  RunConfig cfg = small_run();
  cfg.train.learning_rate = 0.0025;
  cfg.welch.segment_length = 128;
  const RunConfig back = run_config_from_json(run_config_to_json(cfg));
  CHECK(back.synthetic.n_subjects == 8);
  CHECK(back.synthetic.planted_channels == cfg.synthetic.planted_channels);
  CHECK(back.model.k == 2);
  CHECK(back.model.fam_enabled == cfg.model.fam_enabled);
  CHECK(back.train.learning_rate == 0.0025);  // exact through shortest round trip
  CHECK(back.welch.segment_length == 128);
  CHECK(back.n_folds == 4);
  CHECK(back.proportions == cfg.proportions);
  CHECK(back.sweep_k == cfg.sweep_k);
  CHECK(run_config_hash(back) == run_config_hash(cfg));

  CHECK_THROWS_AS(run_config_from_json("{\"bogus\": 1}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json("{\"model\": {\"bogus\": 1}}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json("nope"), ConfigError);
  // missing keys keep defaults
  const RunConfig sparse = run_config_from_json("{\"model\": {\"k\": 5}}");
  CHECK(sparse.model.k == 5);
  CHECK(sparse.model.d_k == 16);
  CHECK(sparse.synthetic.n_subjects == 64);
}

TEST_CASE("config hash is stable and content-sensitive") {
  const RunConfig a = small_run();
  RunConfig b = small_run();
  CHECK(run_config_hash(a) == run_config_hash(b));
  CHECK(run_config_hash(a).size() == 16);  // fnv-1a 64-bit hex
  b.model.k = 3;
  CHECK(run_config_hash(a) != run_config_hash(b));
  RunConfig c = small_run();
  c.train.seed = 9;
  CHECK(run_config_hash(a) != run_config_hash(c));
}

TEST_CASE("validate_run_config rejects out-of-range knobs") {
  RunConfig cfg = small_run();
  CHECK_NOTHROW(validate_run_config(cfg));
  cfg.proportions = {0.0};
  CHECK_THROWS_AS(validate_run_config(cfg), ConfigError);
  cfg = small_run();
  cfg.n_folds = 1;
  CHECK_THROWS_AS(validate_run_config(cfg), ConfigError);
  cfg = small_run();
  cfg.threads = 0;
  CHECK_THROWS_AS(validate_run_config(cfg), ConfigError);
  cfg = small_run();
  cfg.welch.overlap = 1.0;
  CHECK_THROWS_AS(validate_run_config(cfg), ConfigError);
  cfg = small_run();
  cfg.sweep_k = {};
  CHECK_THROWS_AS(validate_run_config(cfg), ConfigError);
}

// ===========================================================================
// generate / extract / analyze (in process)
// ===========================================================================

TEST_CASE("cmd_generate writes a loadable, reproducible dataset") {
  const RunConfig cfg = small_run();
  const fs::path a = fresh_dir("gen_a");
  const fs::path b = fresh_dir("gen_b");
  cmd_generate(cfg, a.string());
  cmd_generate(cfg, b.string());
  CHECK(same_tree(a, b));

  const Dataset ds = load_dataset(a);
  CHECK(ds.manifest.n_subjects == 8);
  CHECK(ds.manifest.config_hash == run_config_hash(cfg));
  CHECK(fs::exists(a / "run_config.json"));
  // the stored config reproduces the run bit for bit
  const RunConfig stored = run_config_from_json(read_text_file(a / "run_config.json"));
  CHECK(run_config_hash(stored) == run_config_hash(cfg));

  RunConfig bad = cfg;
  bad.synthetic.fraction_positive = 1.5;
  CHECK_THROWS_AS(cmd_generate(bad, fresh_dir("gen_bad").string()), ConfigError);
}

TEST_CASE("cmd_extract writes biomarkers, stat features, and priors") {
  const RunConfig cfg = small_run();
  const fs::path ds_dir = fresh_dir("ext_ds");
  const fs::path out = fresh_dir("ext_out");
  cmd_generate(cfg, ds_dir.string());
  cmd_extract(cfg, ds_dir.string(), out.string());

  // one biomarker file per subject
  for (int i = 0; i < 8; ++i) {
    const fs::path f = out / "biomarkers" / ("s00" + std::to_string(i) + ".json");
    REQUIRE(fs::exists(f));
    const json j = json::parse(read_text_file(f));
    CHECK(j.at("config_hash") == run_config_hash(cfg));
    CHECK(j.at("k") == 2);
    const json& cell = j.at("features").at("task").at("hbo").at("ch00");
    CHECK(cell.at("freq_indices").size() == 2);
    CHECK(cell.at("amplitudes").size() == 2);
    CHECK(cell.at("phases").size() == 2);
  }

  // 18 prior matrices: 3 periods x 3 substances x {corr, cohe}
  int priors = 0;
  for (const auto& entry : fs::directory_iterator(out / "priors")) {
    ++priors;
    // header + 8 channel rows after the hash comment
    const std::string text = read_text_file(entry.path());
    CHECK(text.rfind("# config_hash=", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 10);
  }
  CHECK(priors == 18);
  CHECK(fs::exists(out / "priors" / "task_hbo_corr.csv"));
  CHECK(fs::exists(out / "priors" / "post_total_cohe.csv"));

  CHECK(first_line(out / "otf_features.csv") == "# config_hash=" + run_config_hash(cfg));

  // reruns are bit-identical
  const fs::path out2 = fresh_dir("ext_out2");
  cmd_extract(cfg, ds_dir.string(), out2.string());
  CHECK(same_tree(out, out2));

  // k beyond the silent half-spectrum
  RunConfig bad = cfg;
  bad.model.k = 999;
  CHECK_THROWS_AS(cmd_extract(bad, ds_dir.string(), fresh_dir("ext_bad").string()), ConfigError);
}

TEST_CASE("cmd_analyze emits one screening heatmap per period and proportion") {
  const RunConfig cfg = small_run();
  const fs::path ds_dir = fresh_dir("ana_ds");
  const fs::path out = fresh_dir("ana_out");
  cmd_generate(cfg, ds_dir.string());
  cmd_analyze(cfg, ds_dir.string(), out.string());

  int heatmaps = 0;
  for (const char* period : {"silent", "task", "post"}) {
    for (const char* tag : {"p050", "p100"}) {
      const fs::path f = out / ("heatmap_" + std::string(period) + "_" + tag + ".csv");
      REQUIRE_MESSAGE(fs::exists(f), f.string());
      ++heatmaps;
      // |r| entries lie in [0, 1]
      const std::string text = read_text_file(f);
      std::istringstream in(text);
      std::string line;
      std::getline(in, line);  // hash comment
      std::getline(in, line);  // header
      int rows = 0;
      while (std::getline(in, line)) {
        ++rows;
        size_t pos = line.find(',');
        int cells = 0;
        while (pos != std::string::npos) {
          const size_t next = line.find(',', pos + 1);
          const std::string field = line.substr(pos + 1, next - pos - 1);
          const double v = std::stod(field);
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
          ++cells;
          pos = next;
        }
        CHECK(cells == 2);  // k slots
      }
      CHECK(rows == 8);  // channels
    }
  }
  CHECK(heatmaps == 6);
}

// ===========================================================================
// train / ablate / report (in process)
// ===========================================================================

TEST_CASE("cmd_train writes metrics, rocs, checkpoints, and cv json") {
  const RunConfig cfg = small_run();
  const fs::path ds_dir = fresh_dir("trn_ds");
  const fs::path out = fresh_dir("trn_out");
  cmd_generate(cfg, ds_dir.string());
  cmd_train(cfg, ds_dir.string(), out.string());

  // metrics.csv: hash comment + header + 4 fold rows + 1 mean row
  const std::string metrics = read_text_file(out / "report" / "metrics.csv");
  CHECK(metrics.rfind("# config_hash=", 0) == 0);
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 7);
  CHECK(metrics.find("\nmean,") != std::string::npos);

  for (int f = 0; f < 4; ++f) {
    CHECK(fs::exists(out / "report" / ("roc_fold" + std::to_string(f) + ".csv")));
    const fs::path ckpt = out / "checkpoints" / ("fold" + std::to_string(f) + ".ckpt");
    REQUIRE(fs::exists(ckpt));
    // checkpoints restore into a matching model
    Model holder(cfg.model, cfg.train.seed + static_cast<std::uint64_t>(f));
    CHECK_NOTHROW(diff::load_checkpoint(holder.params(), ckpt));
  }

  const json cv = json::parse(read_text_file(out / "cv.json"));
  CHECK(cv.at("config_hash") == run_config_hash(cfg));
  CHECK(cv.at("folds").size() == 4);
  CHECK(cv.at("mean_best").contains("f1"));
  // serialized folds reload through the harness parser
  const CvResult parsed = cv_result_from_json(read_text_file(out / "cv.json"));
  CHECK(parsed.folds.size() == 4);

  for (const char* period : {"silent", "task", "post"})
    CHECK(fs::exists(out / "report" / ("pb_heatmap_" + std::string(period) + ".csv")));

  // a rerun reproduces every byte
  const fs::path out2 = fresh_dir("trn_out2");
  cmd_train(cfg, ds_dir.string(), out2.string());
  CHECK(same_tree(out, out2));
}

TEST_CASE("cmd_ablate writes the sweep tables and cmd_report renders them") {
  const RunConfig cfg = small_run();
  const fs::path ds_dir = fresh_dir("abl_ds");
  const fs::path out = fresh_dir("abl_out");
  cmd_generate(cfg, ds_dir.string());

  cmd_ablate(cfg, ds_dir.string(), out.string(), "k");
  const std::string k_csv = read_text_file(out / "report" / "ablation_k.csv");
  CHECK(k_csv.find("k,accuracy,precision,recall,f1") != std::string::npos);
  CHECK(k_csv.find("\n1,") != std::string::npos);
  CHECK(k_csv.find("\n2,") != std::string::npos);

  cmd_ablate(cfg, ds_dir.string(), out.string(), "fam");
  const std::string fam_csv = read_text_file(out / "report" / "ablation_fam.csv");
  CHECK(fam_csv.find("k,fam,accuracy,precision,recall,f1") != std::string::npos);
  CHECK(fam_csv.find("\n2,with,") != std::string::npos);
  CHECK(fam_csv.find("\n2,without,") != std::string::npos);

  CHECK_THROWS_AS(cmd_ablate(cfg, ds_dir.string(), out.string(), "bogus"), ConfigError);

  cmd_report(cfg, out.string());
  const fs::path summary = out / "report" / "summary.txt";
  REQUIRE(fs::exists(summary));
  CHECK(first_line(summary) == "# config_hash=" + run_config_hash(cfg));
  const std::string text = read_text_file(summary);
  CHECK(text.find("k sweep") != std::string::npos);
  CHECK(text.find("attention ablation") != std::string::npos);
  const std::string svg = read_text_file(out / "report" / "metric_vs_k.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("config_hash=" + run_config_hash(cfg)) != std::string::npos);

  CHECK_THROWS_AS(cmd_report(cfg, fresh_dir("rep_empty").string()), DataError);
}

// ===========================================================================
// process boundary
// ===========================================================================

TEST_CASE("cli subprocess matches the in-process library calls") {
  const RunConfig cfg = small_run();
  const fs::path cfg_path = fresh_dir("sub_cfg") / "config.json";
  atomic_write_file(cfg_path, run_config_to_json(cfg) + "\n");

  const fs::path lib_dir = fresh_dir("sub_lib");
  cmd_generate(cfg, lib_dir.string());

  const fs::path sub_dir = fresh_dir("sub_proc");
  const int code = run_cli("generate --config '" + cfg_path.string() + "' --out '" +
                           sub_dir.string() + "'");
  CHECK(code == 0);
  CHECK(same_tree(lib_dir, sub_dir));
}

TEST_CASE("cli exit codes distinguish usage, config, and data failures") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("generate --help") == 0);
  CHECK(run_cli("") == 2);                         // missing subcommand
  CHECK(run_cli("generate --bogus 1 --out /tmp/x") == 2);  // unknown flag
  CHECK(run_cli("frobnicate") == 2);               // unknown subcommand

  const fs::path out = fresh_dir("sub_bad");
  CHECK(run_cli("generate --out '" + out.string() + "' --n 8 --channels 8 --fraction 1.5") == 2);
  CHECK(run_cli("extract --dataset /nonexistent_nirsfreq --out '" + out.string() + "'") == 3);
  CHECK(run_cli("train --dataset /nonexistent_nirsfreq --out '" + out.string() + "'") == 3);
}

TEST_CASE("cli flags override the config file") {
  RunConfig cfg = small_run();
  const fs::path root = fresh_dir("sub_ovr");
  const fs::path cfg_path = root / "config.json";
  atomic_write_file(cfg_path, run_config_to_json(cfg) + "\n");

  const fs::path ds_dir = root / "ds";
  cmd_generate(cfg, ds_dir.string());

  const fs::path out = root / "out";
  const int code = run_cli("extract --config '" + cfg_path.string() + "' --dataset '" +
                           ds_dir.string() + "' --out '" + out.string() + "' --k 1");
  CHECK(code == 0);

  const RunConfig stored = run_config_from_json(read_text_file(out / "run_config.json"));
  CHECK(stored.model.k == 1);  // the flag wins over the file's k=2
  // every hash comment matches the stored (overridden) config
  CHECK(first_line(out / "otf_features.csv") == "# config_hash=" + run_config_hash(stored));
  const json j = json::parse(read_text_file(out / "biomarkers" / "s000.json"));
  CHECK(j.at("k") == 1);

  // mutually exclusive attention flags
  CHECK(run_cli("train --dataset '" + ds_dir.string() + "' --out '" + root.string() +
                "/x' --fam --no-fam") == 2);
}
