// dkdlab: command-line front end over the dkd C API.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dkd/dkd.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

// Carries an exit code out of a subcommand.
struct Exit {
  int code;
};

[[noreturn]] void die(int code, const std::string& msg) {
  std::cerr << "dkdlab: " << msg << '\n';
  throw Exit{code};
}

void check(dkd_status st, const char* what) {
  if (st == DKD_OK) return;
  die(st == DKD_ERR_CONFIG ? kUsage : kFailure, std::string(what) + ": " + dkd_last_error());
}

// Owns a string handed out by the library.
struct Text {
  char* p = nullptr;
  ~Text() { dkd_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) die(kFailure, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) die(kFailure, "cannot write " + path.string());
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) die(kFailure, "cannot create " + dir + ": " + ec.message());
}

json parse_json_or_usage(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    die(kUsage, origin + " is not valid JSON: " + e.what());
  }
}

struct Dataset {
  dkd_dataset* p = nullptr;
  ~Dataset() { dkd_dataset_free(p); }
};

// A directory holds train.csv and test.csv; a file holds both splits.
void load_data(const std::string& path, Dataset& ds) {
  if (fs::is_directory(path)) {
    check(dkd_dataset_load((fs::path(path) / "train.csv").c_str(), &ds.p), "loading train.csv");
    Dataset test;
    check(dkd_dataset_load((fs::path(path) / "test.csv").c_str(), &test.p), "loading test.csv");
    check(dkd_dataset_append(ds.p, test.p), "merging splits");
  } else {
    check(dkd_dataset_load(path.c_str(), &ds.p), "loading data");
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

struct RunOptions {
  std::string config, data, out, arm;
  std::int64_t seed = -1;
};

std::string effective_config(const RunOptions& o) {
  json cfg = o.config.empty() ? json::object() : parse_json_or_usage(read_file(o.config), o.config);
  if (!cfg.is_object()) die(kUsage, "config must be a JSON object");
  if (o.seed >= 0) cfg["seed"] = o.seed;
  if (!o.arm.empty()) cfg["arm"] = o.arm;
  Text canonical;
  check(dkd_config_normalize(cfg.dump().c_str(), &canonical.p), "config");
  return canonical.str();
}

void add_run_flags(CLI::App* cmd, RunOptions& o, bool with_arm) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--data", o.data, "feature file, or directory with train.csv and test.csv")
      ->required()
      ->check(CLI::ExistingPath);
  cmd->add_option("--seed", o.seed, "overrides the config seed")->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", o.out, "output directory")->required();
  if (with_arm) cmd->add_option("--arm", o.arm, "ikd | ikd+rkd | ikd+dkd");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%8.2f", v);
  return buf;
}

int cmd_gen(const json& flags, const std::string& config, const std::string& out) {
  json spec = config.empty() ? json::object() : parse_json_or_usage(read_file(config), config);
  if (!spec.is_object()) die(kUsage, "generator spec must be a JSON object");
  for (auto it = flags.begin(); it != flags.end(); ++it) spec[it.key()] = it.value();
  Text canonical;
  check(dkd_genspec_normalize(spec.dump().c_str(), &canonical.p), "generator spec");
  Dataset ds;
  check(dkd_dataset_generate(canonical.p, &ds.p), "generating data");
  make_dir(out);
  check(dkd_dataset_save(ds.p, (fs::path(out) / "train.csv").c_str(), DKD_SPLIT_TRAIN), "writing train.csv");
  check(dkd_dataset_save(ds.p, (fs::path(out) / "test.csv").c_str(), DKD_SPLIT_TEST), "writing test.csv");
  write_file(fs::path(out) / "spec.json", canonical.str() + "\n");
  std::cout << "wrote " << dkd_dataset_size(ds.p) << " records (dim " << dkd_dataset_dim(ds.p)
            << ") to " << out << '\n';
  return kOk;
}

int cmd_run(const RunOptions& o) {
  const std::string cfg = effective_config(o);
  Dataset ds;
  load_data(o.data, ds);
  dkd_run* run = nullptr;
  check(dkd_run_experiment(ds.p, cfg.c_str(), &run), "run");
  struct Guard {
    dkd_run* r;
    ~Guard() { dkd_run_free(r); }
  } guard{run};

  make_dir(o.out);
  Text manifest, csv, ckpt;
  check(dkd_run_manifest(run, &manifest.p), "manifest");
  check(dkd_run_sessions_csv(run, &csv.p), "sessions");
  check(dkd_run_checkpoint(run, &ckpt.p), "checkpoint");
  write_file(fs::path(o.out) / "manifest.json", manifest.str());
  write_file(fs::path(o.out) / "sessions.csv", csv.str());
  write_file(fs::path(o.out) / "checkpoint.json", ckpt.str());

  std::cout << "session      acc    acc_b    acc_n       sa       kr       ad\n";
  for (size_t s = 0; s < dkd_run_session_count(run); ++s) {
    dkd_metric_row r{};
    check(dkd_run_metric(run, s, &r), "metrics");
    std::cout << std::setw(7) << r.session << ' ' << fmt(r.acc) << ' ' << fmt(r.acc_b) << ' '
              << fmt(r.acc_n) << ' ' << fmt(r.sa) << ' ' << fmt(r.kr) << ' ' << fmt(r.ad) << '\n';
  }
  const json m = json::parse(manifest.str());
  std::cout << "final KR " << fmt(m["summary"]["kr"].get<double>()) << "  AD "
            << fmt(m["summary"]["ad"].get<double>()) << "  AA " << fmt(m["summary"]["aa"].get<double>())
            << '\n';
  return kOk;
}

int cmd_ablate(const RunOptions& o) {
  const std::string cfg = effective_config(o);
  Dataset ds;
  load_data(o.data, ds);
  Text csv;
  check(dkd_ablate(ds.p, cfg.c_str(), &csv.p), "ablate");
  make_dir(o.out);
  write_file(fs::path(o.out) / "ablation.csv", csv.str());
  std::cout << csv.str();
  return kOk;
}

int cmd_attack(const RunOptions& o, const std::string& pct_list, const std::string& arm_list) {
  const std::string cfg = effective_config(o);
  std::vector<double> pcts;
  for (const std::string& p : split_list(pct_list)) {
    try {
      std::size_t used = 0;
      pcts.push_back(std::stod(p, &used));
      if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::exception&) {
      die(kUsage, "bad --pct entry '" + p + "'");
    }
  }
  if (pcts.empty()) die(kUsage, "--pct needs at least one value");
  const std::vector<std::string> arms = split_list(arm_list);
  std::vector<const char*> arm_ptrs;
  for (const std::string& a : arms) arm_ptrs.push_back(a.c_str());

  Dataset ds;
  load_data(o.data, ds);
  const std::uint64_t seed = json::parse(cfg)["seed"].get<std::uint64_t>();
  Text csv;
  const dkd_status st = dkd_attack(ds.p, cfg.c_str(), pcts.data(), pcts.size(), arm_ptrs.data(),
                                   arm_ptrs.size(), seed, &csv.p);
  if (st == DKD_ERR_INVALID_ARGUMENT) die(kUsage, std::string("attack: ") + dkd_last_error());
  check(st, "attack");
  make_dir(o.out);
  write_file(fs::path(o.out) / "attack.csv", csv.str());
  std::cout << csv.str();
  return kOk;
}

int cmd_losscheck(std::size_t n, std::size_t c, std::size_t trials, std::uint64_t seed) {
  Text report;
  int passed = 0;
  const dkd_status st = dkd_losscheck(n, c, trials, seed, &report.p, &passed);
  if (st == DKD_ERR_INVALID_ARGUMENT) die(kUsage, std::string("losscheck: ") + dkd_last_error());
  check(st, "losscheck");
  std::cout << report.str();
  return passed ? kOk : kFailure;
}

int cmd_compare(const std::string& a, const std::string& b) {
  Text diff;
  int same = 0;
  check(dkd_compare_manifests(read_file(a).c_str(), read_file(b).c_str(), &diff.p, &same), "compare");
  std::cout << diff.str();
  return same ? kOk : kFailure;
}

// "1,2;3,4" -> rows.
std::vector<std::vector<double>> parse_matrix(const std::string& text, const char* name) {
  std::vector<std::vector<double>> rows;
  std::stringstream ss(text);
  for (std::string row; std::getline(ss, row, ';');) {
    std::vector<double> r;
    for (const std::string& cell : split_list(row)) {
      try {
        r.push_back(std::stod(cell));
      } catch (const std::exception&) {
        die(kUsage, std::string("bad number in --") + name + ": '" + cell + "'");
      }
    }
    if (!rows.empty() && r.size() != rows.front().size()) die(kUsage, std::string("--") + name + " rows differ in length");
    rows.push_back(std::move(r));
  }
  if (rows.empty() || rows.front().empty()) die(kUsage, std::string("--") + name + " is empty");
  return rows;
}

int cmd_losses(const std::string& student, const std::string& teacher, bool grads) {
  const auto s = parse_matrix(student, "student"), t = parse_matrix(teacher, "teacher");
  if (s.size() != t.size() || s.front().size() != t.front().size())
    die(kUsage, "student and teacher shapes differ");
  const size_t n = s.size(), c = s.front().size();
  std::vector<double> zs, zt;
  for (size_t i = 0; i < n; ++i) {
    zs.insert(zs.end(), s[i].begin(), s[i].end());
    zt.insert(zt.end(), t[i].begin(), t[i].end());
  }
  const std::pair<const char*, dkd_loss_kind> kinds[] = {
      {"ikd", DKD_LOSS_IKD},
      {"rkd_inner", DKD_LOSS_RKD_INNER},
      {"rkd_euclid", DKD_LOSS_RKD_EUCLID},
      {"rkd_cosine", DKD_LOSS_RKD_COSINE},
      {"dkd", DKD_LOSS_DKD}};
  std::vector<double> g(n * c);
  for (const auto& [name, kind] : kinds) {
    if (n < 2 && kind != DKD_LOSS_IKD) {
      std::cout << name << " n/a (needs two rows)\n";
      continue;
    }
    double loss = 0.0;
    check(dkd_batch_loss(kind, zs.data(), zt.data(), n, c, &loss, g.data()), name);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", loss);
    std::cout << name << ' ' << buf << '\n';
    if (grads)
      for (size_t i = 0; i < n; ++i) {
        std::cout << "  grad[" << i << "]";
        for (size_t k = 0; k < c; ++k) {
          std::snprintf(buf, sizeof buf, " %.9g", g[i * c + k]);
          std::cout << buf;
        }
        std::cout << '\n';
      }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dkdlab: displacement distillation lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dkd_version());

  // gen
  std::string gen_out, gen_config;
  std::size_t classes = 0, base = 0, way = 0, shot = 0, dim = 0, train_pc = 0, test_pc = 0;
  double spread = 0, within = 0, gap = 0;
  std::int64_t gen_seed = -1;
  auto* gen = app.add_subcommand("gen", "generate a synthetic feature dataset");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--config", gen_config, "JSON generator spec")->check(CLI::ExistingFile);
  gen->add_option("--classes", classes)->check(CLI::PositiveNumber);
  gen->add_option("--base", base, "base-session classes")->check(CLI::PositiveNumber);
  gen->add_option("--way", way)->check(CLI::PositiveNumber);
  gen->add_option("--shot", shot)->check(CLI::PositiveNumber);
  gen->add_option("--dim", dim)->check(CLI::PositiveNumber);
  gen->add_option("--train-per-class", train_pc)->check(CLI::PositiveNumber);
  gen->add_option("--test-per-class", test_pc)->check(CLI::PositiveNumber);
  gen->add_option("--spread", spread);
  gen->add_option("--std", within, "within-class standard deviation");
  gen->add_option("--gap", gap, "extra offset of novel class centers");
  gen->add_option("--seed", gen_seed)->check(CLI::NonNegativeNumber);

  RunOptions run_o, abl_o, att_o;
  auto* run = app.add_subcommand("run", "train all sessions and report metrics");
  add_run_flags(run, run_o, true);
  auto* abl = app.add_subcommand("ablate", "distillation arm x selector component grid");
  add_run_flags(abl, abl_o, false);
  auto* att = app.add_subcommand("attack", "outlier robustness sweep");
  add_run_flags(att, att_o, false);
  std::string pct_list = "1,5,10,20";
  std::string att_arms;
  att->add_option("--pct", pct_list, "comma-separated outlier percentages");
  att->add_option("--arm", att_arms, "comma-separated arms (default ikd+rkd,ikd+dkd)");

  std::size_t lc_n = 8, lc_c = 16, lc_trials = 100;
  std::uint64_t lc_seed = 0;
  auto* lc = app.add_subcommand("losscheck", "gradient and oracle verification suite");
  lc->add_option("--n", lc_n, "largest batch size");
  lc->add_option("--c", lc_c, "largest logit width");
  lc->add_option("--trials", lc_trials);
  lc->add_option("--seed", lc_seed);

  std::string man_a, man_b;
  auto* cmp = app.add_subcommand("compare", "diff two run manifests");
  cmp->add_option("a", man_a)->required()->check(CLI::ExistingFile);
  cmp->add_option("b", man_b)->required()->check(CLI::ExistingFile);

  std::string ls_student, ls_teacher;
  bool ls_grads = false;
  auto* ls = app.add_subcommand("losses", "evaluate distillation losses on small matrices");
  ls->add_option("--student", ls_student, "rows separated by ';', entries by ','")->required();
  ls->add_option("--teacher", ls_teacher)->required();
  ls->add_flag("--grad", ls_grads, "also print gradients");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) {
      json flags = json::object();
      if (gen->count("--classes")) flags["classes"] = classes;
      if (gen->count("--base")) flags["base_classes"] = base;
      if (gen->count("--way")) flags["way"] = way;
      if (gen->count("--shot")) flags["shot"] = shot;
      if (gen->count("--dim")) flags["dim"] = dim;
      if (gen->count("--train-per-class")) flags["train_per_class"] = train_pc;
      if (gen->count("--test-per-class")) flags["test_per_class"] = test_pc;
      if (gen->count("--spread")) flags["spread"] = spread;
      if (gen->count("--std")) flags["within_std"] = within;
      if (gen->count("--gap")) flags["gap"] = gap;
      if (gen_seed >= 0) flags["seed"] = gen_seed;
      return cmd_gen(flags, gen_config, gen_out);
    }
    if (*run) return cmd_run(run_o);
    if (*abl) return cmd_ablate(abl_o);
    if (*att) return cmd_attack(att_o, pct_list, att_arms);
    if (*lc) return cmd_losscheck(lc_n, lc_c, lc_trials, lc_seed);
    if (*cmp) return cmd_compare(man_a, man_b);
    if (*ls) return cmd_losses(ls_student, ls_teacher, ls_grads);
  } catch (const Exit& e) {
    return e.code;
  }
  return kUsage;
}
