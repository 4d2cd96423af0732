#include <avpretrain/avpretrain.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 1, kFailure = 2;

struct Failure {
  avp_status status;
  std::string what;
  std::string detail;
};

void check(avp_status s, const std::string& what) {
  if (s != AVP_OK) throw Failure{s, what, avp_last_error()};
}

struct Owned {
  char* p = nullptr;
  ~Owned() { avp_free(p); }
  std::string str() const { return p ? p : ""; }
};

using ConfigPtr = std::unique_ptr<avp_config, decltype(&avp_config_destroy)>;

struct Options {
  std::string config_path;
  std::int64_t seed = -1;
  std::string out;
  std::vector<std::string> sets;
  bool quiet = false, verbose = false;
  std::string manifest, checkpoint, resume, query;
  std::size_t seeds = 20;
};

std::string key_listing() {
  std::string out = "Config keys (--set key=value, or key = value lines in --config):\n";
  for (std::size_t i = 0; i < avp_config_key_count(); ++i) {
    char line[512];
    std::snprintf(line, sizeof line, "  %-32s %-14s %s\n", avp_config_key_name(i), avp_config_key_default(i),
                  avp_config_key_help(i));
    out += line;
  }
  return out;
}

ConfigPtr build_config(const Options& o) {
  avp_config* raw = nullptr;
  check(avp_config_create(&raw), "config");
  ConfigPtr cfg(raw, avp_config_destroy);
  if (!o.config_path.empty()) check(avp_config_load(cfg.get(), o.config_path.c_str()), "--config");
  if (o.seed >= 0) check(avp_config_set(cfg.get(), "seed", std::to_string(o.seed).c_str()), "--seed");
  for (const auto& s : o.sets) check(avp_config_apply(cfg.get(), s.c_str()), "--set " + s);
  return cfg;
}

std::string config_value(const avp_config* cfg, const char* key) {
  Owned v;
  check(avp_config_get(cfg, key, &v.p), key);
  return v.str();
}

std::string run_dir(const Options& o, const avp_config* cfg) {
  if (!o.out.empty()) return o.out;
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::localtime(&now));
  return (fs::path("runs") / (std::string(stamp) + "-seed" + config_value(cfg, "seed"))).string();
}

struct LogSink {
  bool quiet = false, verbose = false;
  std::size_t every = 25;
};

void on_log(const char* line, void* user) {
  const auto& sink = *static_cast<LogSink*>(user);
  const std::string s(line);
  if (s.rfind("warning", 0) == 0) {
    std::cerr << s << "\n";
    return;
  }
  if (sink.quiet) return;
  if (s.empty() || s[0] != '{') {
    std::cout << s << "\n";
    return;
  }
  const auto j = nlohmann::json::parse(s);
  const auto step = j["step"].get<std::size_t>();
  if (!sink.verbose && step % sink.every != 0) return;
  std::printf("step %6zu  loss %.5f  pos %.4f  neg %.4f  active %.3f  lr %.2e  %.1fs\n", step,
              j["loss"].get<double>(), j["mean_pos"].get<double>(), j["mean_neg"].get<double>(),
              j["active_frac"].get<double>(), j["lr"].get<double>(), j["wall_time"].get<double>());
  std::fflush(stdout);
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
  if (!f) throw Failure{AVP_ERR_IO, "write", "cannot write " + p.string()};
}

int cmd_synth(const Options& o) {
  auto cfg = build_config(o);
  const auto dir = run_dir(o, cfg.get());
  std::size_t n = 0;
  check(avp_synth(cfg.get(), dir.c_str(), &n), "synth");
  if (!o.quiet) std::printf("wrote %zu pairs to %s\n", n, (fs::path(dir) / "manifest.csv").c_str());
  return 0;
}

int cmd_train(const Options& o) {
  auto cfg = build_config(o);
  const auto dir = run_dir(o, cfg.get());
  LogSink sink{o.quiet, o.verbose};
  check(avp_train(cfg.get(), o.manifest.c_str(), dir.c_str(), o.resume.empty() ? nullptr : o.resume.c_str(), on_log,
                  &sink),
        "train");
  if (!o.quiet) std::printf("final checkpoint %s\n", (fs::path(dir) / "final.ckpt").c_str());
  return 0;
}

int cmd_embed(const Options& o) {
  auto cfg = build_config(o);
  const auto dir = run_dir(o, cfg.get());
  LogSink sink{o.quiet, o.verbose};
  std::size_t n = 0;
  check(avp_embed(cfg.get(), o.checkpoint.c_str(), o.manifest.c_str(), dir.c_str(), &n, on_log, &sink), "embed");
  if (!o.quiet) std::printf("embedded %zu pairs into %s\n", n, dir.c_str());
  return 0;
}

int cmd_retrieve(const Options& o) {
  auto cfg = build_config(o);
  Owned listing;
  check(avp_retrieve(cfg.get(), o.checkpoint.c_str(), o.manifest.c_str(), o.query.c_str(), &listing.p), "retrieve");
  std::fputs(listing.str().c_str(), stdout);
  return 0;
}

int cmd_eval(const Options& o) {
  auto cfg = build_config(o);
  const auto dir = run_dir(o, cfg.get());
  avp_report* raw = nullptr;
  check(avp_eval(cfg.get(), o.checkpoint.c_str(), o.manifest.c_str(), &raw), "eval");
  std::unique_ptr<avp_report, decltype(&avp_report_destroy)> report(raw, avp_report_destroy);
  Owned json, table;
  check(avp_report_json(report.get(), &json.p), "report");
  check(avp_report_table(report.get(), &table.p), "report");
  fs::create_directories(dir);
  write_file(fs::path(dir) / "report.json", json.str());
  write_file(fs::path(dir) / "report.txt", table.str());
  if (!o.quiet) std::printf("%s\nreport written to %s\n", table.str().c_str(), dir.c_str());
  return 0;
}

int cmd_ablate(const Options& o) {
  auto cfg = build_config(o);
  const auto dir = run_dir(o, cfg.get());
  LogSink sink{o.quiet, o.verbose};
  Owned table;
  check(avp_ablate(cfg.get(), o.manifest.c_str(), dir.c_str(), &table.p, on_log, &sink), "ablate");
  if (!o.quiet) std::printf("%s\nreport written to %s\n", table.str().c_str(), dir.c_str());
  return 0;
}

int cmd_grad_check(const Options& o) {
  auto cfg = build_config(o);
  Owned table;
  int passed = 0;
  check(avp_grad_check(cfg.get(), o.seeds, &table.p, &passed), "grad-check");
  if (!o.quiet || !passed) std::fputs(table.str().c_str(), stdout);
  return passed ? 0 : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal audio / overhead-image pretraining toolkit"};
  app.set_version_flag("--version", std::string(avp_version()));
  app.footer(key_listing() +
             "\nExit status: 0 success, 1 usage error, 2 runtime failure.\n"
             "Without --out, results go to runs/<timestamp>-seed<seed>.");
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Seed for data, initialisation and sampling")->check(CLI::NonNegativeNumber);
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--set", o.sets, "Override one config key (key=value), repeatable")->expected(1)->take_all();
  auto* quiet = app.add_flag("-q,--quiet", o.quiet, "Only print errors and warnings");
  app.add_flag("-v,--verbose", o.verbose, "Print every training record")->excludes(quiet);

  auto manifest = [&](CLI::App* c) {
    c->add_option("--manifest", o.manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  };
  auto checkpoint = [&](CLI::App* c) {
    c->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic paired dataset");
  auto* train = app.add_subcommand("train", "Pretrain both encoders on the manifest's train split");
  manifest(train);
  train->add_option("--resume", o.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  auto* embed = app.add_subcommand("embed", "Export visual and audio embeddings of the eval split");
  checkpoint(embed);
  manifest(embed);
  auto* retrieve = app.add_subcommand("retrieve", "List the nearest targets for one query id");
  checkpoint(retrieve);
  manifest(retrieve);
  retrieve->add_option("--query", o.query, "Query id")->required();
  auto* eval = app.add_subcommand("eval", "Cross-modal retrieval metrics; writes report.json and report.txt");
  checkpoint(eval);
  manifest(eval);
  auto* ablate = app.add_subcommand("ablate", "Train and compare the three losses");
  manifest(ablate);
  auto* grad = app.add_subcommand("grad-check", "Finite-difference checks of losses and toy encoders");
  grad->add_option("--seeds", o.seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*embed) return cmd_embed(o);
    if (*retrieve) return cmd_retrieve(o);
    if (*eval) return cmd_eval(o);
    if (*ablate) return cmd_ablate(o);
    if (*grad) return cmd_grad_check(o);
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s: %s: %s\n", f.what.c_str(), avp_status_name(f.status), f.detail.c_str());
    return f.status == AVP_ERR_INVALID_ARGUMENT && f.what.rfind("--", 0) == 0 ? kUsage : kFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kUsage;
}
