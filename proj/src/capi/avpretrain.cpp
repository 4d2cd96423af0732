#include "avpretrain/avpretrain.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include "binary_io.hpp"
#include "config.hpp"
#include "data.hpp"
#include "gradcheck.hpp"
#include "retrieval.hpp"
#include "training.hpp"

namespace fs = std::filesystem;
using namespace avp;

struct avp_config {
  config::RunConfig rc;
};

struct avp_report {
  retrieval::Report r;
};

namespace {

thread_local std::string g_last_error;

avp_status fail(avp_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

avp_status from_errc(Errc c) {
  switch (c) {
    case Errc::invalid_argument: return AVP_ERR_INVALID_ARGUMENT;
    case Errc::io: return AVP_ERR_IO;
    case Errc::format: return AVP_ERR_FORMAT;
    case Errc::numeric: return AVP_ERR_NUMERIC;
    case Errc::checksum: return AVP_ERR_CHECKSUM;
    case Errc::version: return AVP_ERR_VERSION;
    case Errc::state: return AVP_ERR_STATE;
  }
  return AVP_ERR_INTERNAL;
}

template <typename F>
avp_status guarded(F&& body) {
  try {
    body();
    return AVP_OK;
  } catch (const Error& e) {
    return fail(from_errc(e.code()), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(AVP_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(AVP_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(AVP_ERR_INTERNAL, e.what());
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(Errc::invalid_argument, std::string(what) + " must not be NULL");
}

void emit(avp_log_fn log, void* user, const std::string& line) {
  if (log) log(line.c_str(), user);
}

retrieval::CorpusEmbeddings embed_split(const config::RunConfig& rc, const train::Checkpoint& ckpt,
                                        const data::Manifest& m, avp_log_fn log, void* user) {
  const auto tc = train::checkpoint_config(ckpt);
  const data::DataSource src(m, rc.eval.split, tc.frontend, rc.train.worker_count(), true);
  for (const auto& s : src.skipped()) emit(log, user, "warning: skipped " + s);
  return retrieval::embed_corpus(ckpt, src, rc.eval.batch, rc.train.worker_count());
}

}  // namespace

extern "C" {

const char* avp_version(void) { return "1.0.0"; }

const char* avp_status_name(avp_status s) {
  switch (s) {
    case AVP_OK: return "ok";
    case AVP_ERR_INVALID_ARGUMENT: return "invalid argument";
    case AVP_ERR_IO: return "i/o error";
    case AVP_ERR_FORMAT: return "format error";
    case AVP_ERR_NUMERIC: return "numeric error";
    case AVP_ERR_CHECKSUM: return "checksum mismatch";
    case AVP_ERR_VERSION: return "version mismatch";
    case AVP_ERR_STATE: return "invalid state";
    case AVP_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* avp_last_error(void) { return g_last_error.c_str(); }

void avp_free(void* p) { std::free(p); }

avp_status avp_config_create(avp_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new avp_config;
  });
}

void avp_config_destroy(avp_config* cfg) { delete cfg; }

avp_status avp_config_load(avp_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg && path, "cfg and path");
    auto copy = cfg->rc;
    config::apply_text(copy, read_text_file(path));
    cfg->rc = std::move(copy);
  });
}

avp_status avp_config_set(avp_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg && key && value, "cfg, key and value");
    config::set(cfg->rc, key, value);
  });
}

avp_status avp_config_apply(avp_config* cfg, const char* assignment) {
  return guarded([&] {
    require(cfg && assignment, "cfg and assignment");
    config::apply_override(cfg->rc, assignment);
  });
}

avp_status avp_config_get(const avp_config* cfg, const char* key, char** value) {
  return guarded([&] {
    require(cfg && key && value, "cfg, key and value");
    *value = dup(config::get(cfg->rc, key));
  });
}

avp_status avp_config_to_text(const avp_config* cfg, char** text) {
  return guarded([&] {
    require(cfg && text, "cfg and text");
    *text = dup(config::to_text(cfg->rc));
  });
}

size_t avp_config_key_count(void) { return config::keys().size(); }

const char* avp_config_key_name(size_t index) {
  return index < config::keys().size() ? config::keys()[index].key.c_str() : nullptr;
}

const char* avp_config_key_default(size_t index) {
  return index < config::keys().size() ? config::keys()[index].default_value.c_str() : nullptr;
}

const char* avp_config_key_help(size_t index) {
  return index < config::keys().size() ? config::keys()[index].description.c_str() : nullptr;
}

avp_status avp_synth(const avp_config* cfg, const char* out_dir, size_t* entries) {
  return guarded([&] {
    require(cfg && out_dir, "cfg and out_dir");
    const auto m = data::generate_synthetic(cfg->rc.synth, out_dir);
    if (entries) *entries = m.entries.size();
  });
}

avp_status avp_train(const avp_config* cfg, const char* manifest, const char* out_dir, const char* resume_checkpoint,
                     avp_log_fn log, void* user) {
  return guarded([&] {
    require(cfg && manifest && out_dir, "cfg, manifest and out_dir");
    const auto& tc = cfg->rc.train;
    tc.validate();
    const auto m = data::load_manifest(manifest);
    train::Checkpoint resume;
    train::TrainOptions opt;
    opt.out_dir = out_dir;
    if (resume_checkpoint) {
      resume = train::load_checkpoint(resume_checkpoint);
      opt.resume = &resume;
    }
    opt.on_log = [&](const train::LogRecord& r) { emit(log, user, train::to_json_line(r)); };
    const data::DataSource src(m, data::Split::train, tc.frontend, tc.worker_count());
    fs::create_directories(out_dir);
    write_text_file((fs::path(out_dir) / "config.txt").string(), config::to_text(cfg->rc));
    train::train(tc, src, opt);
  });
}

avp_status avp_embed(const avp_config* cfg, const char* checkpoint, const char* manifest, const char* out_dir,
                     size_t* count, avp_log_fn log, void* user) {
  return guarded([&] {
    require(cfg && checkpoint && manifest && out_dir, "cfg, checkpoint, manifest and out_dir");
    const auto ckpt = train::load_checkpoint(checkpoint);
    const auto corpus = embed_split(cfg->rc, ckpt, data::load_manifest(manifest), log, user);
    fs::create_directories(out_dir);
    retrieval::write_index((fs::path(out_dir) / "visual.emb").string(), corpus.visual);
    retrieval::write_index((fs::path(out_dir) / "audio.emb").string(), corpus.audio);
    if (count) *count = corpus.visual.ids.size();
  });
}

avp_status avp_retrieve(const avp_config* cfg, const char* checkpoint, const char* manifest, const char* query_id,
                        char** listing) {
  return guarded([&] {
    require(cfg && checkpoint && manifest && query_id && listing, "cfg, checkpoint, manifest, query_id and listing");
    const auto ckpt = train::load_checkpoint(checkpoint);
    const auto corpus = embed_split(cfg->rc, ckpt, data::load_manifest(manifest), nullptr, nullptr);
    const bool from_image = cfg->rc.eval.direction == retrieval::Direction::image_to_audio;
    const auto& queries = from_image ? corpus.visual : corpus.audio;
    const auto& targets = from_image ? corpus.audio : corpus.visual;
    const auto it = std::find(queries.ids.begin(), queries.ids.end(), std::string(query_id));
    if (it == queries.ids.end())
      throw Error(Errc::invalid_argument, std::string("query id '") + query_id + "' is not in the " +
                                              data::to_string(cfg->rc.eval.split) + " split");
    const auto row = static_cast<std::size_t>(it - queries.ids.begin());
    const auto hits = retrieval::nearest(targets, queries.vectors.row(row), cfg->rc.eval.top_k);
    std::string text;
    char line[256];
    for (std::size_t i = 0; i < hits.size(); ++i) {
      std::snprintf(line, sizeof line, "%zu %s %.6f%s\n", i + 1, hits[i].id.c_str(), hits[i].distance,
                    hits[i].id == query_id ? " *" : "");
      text += line;
    }
    *listing = dup(text);
  });
}

avp_status avp_eval(const avp_config* cfg, const char* checkpoint, const char* manifest, avp_report** out) {
  return guarded([&] {
    require(cfg && checkpoint && manifest && out, "cfg, checkpoint, manifest and out");
    const auto ckpt = train::load_checkpoint(checkpoint);
    const auto corpus = embed_split(cfg->rc, ckpt, data::load_manifest(manifest), nullptr, nullptr);
    auto* r = new avp_report;
    try {
      r->r = retrieval::evaluate(corpus, cfg->rc.eval);
    } catch (...) {
      delete r;
      throw;
    }
    *out = r;
  });
}

void avp_report_destroy(avp_report* r) { delete r; }

size_t avp_report_size(const avp_report* r) { return r ? r->r.m : 0; }

double avp_report_median_rank(const avp_report* r) { return r ? r->r.median_rank : 0.0; }

double avp_report_class_recall(const avp_report* r) { return r ? r->r.class_recall_at_1 : 0.0; }

double avp_report_baseline_median_rank(const avp_report* r) { return r ? r->r.baseline_median_rank : 0.0; }

avp_status avp_report_recall(const avp_report* r, size_t k, double* recall) {
  return guarded([&] {
    require(r && recall, "report and recall");
    for (std::size_t i = 0; i < r->r.ks.size(); ++i)
      if (r->r.ks[i] == k) {
        *recall = r->r.recall[i];
        return;
      }
    throw Error(Errc::invalid_argument, "Recall@" + std::to_string(k) + " was not computed (see eval.ks)");
  });
}

avp_status avp_report_rank(const avp_report* r, size_t i, size_t* rank) {
  return guarded([&] {
    require(r && rank, "report and rank");
    if (i >= r->r.ranks.size()) throw Error(Errc::invalid_argument, "query index out of range");
    *rank = r->r.ranks[i];
  });
}

avp_status avp_report_json(const avp_report* r, char** json) {
  return guarded([&] {
    require(r && json, "report and json");
    *json = dup(retrieval::report_json(r->r));
  });
}

avp_status avp_report_table(const avp_report* r, char** table) {
  return guarded([&] {
    require(r && table, "report and table");
    *table = dup(retrieval::report_table(r->r));
  });
}

avp_status avp_ablate(const avp_config* cfg, const char* manifest, const char* out_dir, char** table, avp_log_fn log,
                      void* user) {
  return guarded([&] {
    require(cfg && manifest && out_dir, "cfg, manifest and out_dir");
    const auto m = data::load_manifest(manifest);
    const auto& base = cfg->rc.train;
    const std::size_t threads = base.worker_count();
    const data::DataSource train_src(m, data::Split::train, base.frontend, threads);
    std::vector<train::Checkpoint> ckpts;
    std::vector<std::string> names;
    for (auto kind : {loss::Kind::naive_triplet, loss::Kind::batch_triplet, loss::Kind::contrastive}) {
      auto tc = base;
      tc.loss_kind = kind;
      if (cfg->rc.ablate.steps > 0) tc.steps = cfg->rc.ablate.steps;
      const auto dir = (fs::path(out_dir) / loss::to_string(kind)).string();
      emit(log, user, std::string("arm ") + loss::to_string(kind));
      train::TrainOptions opt;
      opt.out_dir = dir;
      opt.on_log = [&](const train::LogRecord& r) { emit(log, user, train::to_json_line(r)); };
      auto rc = cfg->rc;
      rc.train = tc;
      fs::create_directories(dir);
      write_text_file((fs::path(dir) / "config.txt").string(), config::to_text(rc));
      auto res = train::train(tc, train_src, opt);
      ckpts.push_back(std::move(res.final_state));
      names.push_back(res.checkpoint_path);
    }
    const data::DataSource eval_src(m, cfg->rc.eval.split, base.frontend, threads, true);
    for (const auto& s : eval_src.skipped()) emit(log, user, "warning: skipped " + s);
    const auto rows = retrieval::ablation_report(ckpts, names, eval_src, cfg->rc.eval, threads);
    const auto text = retrieval::ablation_table(rows);
    write_text_file((fs::path(out_dir) / "ablation.json").string(), retrieval::ablation_json(rows));
    write_text_file((fs::path(out_dir) / "ablation.txt").string(), text);
    if (table) *table = dup(text);
  });
}

avp_status avp_grad_check(const avp_config* cfg, size_t seeds, char** table, int* passed) {
  return guarded([&] {
    require(cfg, "cfg");
    if (seeds == 0) throw Error(Errc::invalid_argument, "seeds must be positive");
    const auto s = gradcheck::run_suite(cfg->rc.train.seed, seeds);
    if (table) *table = dup(gradcheck::summary_table(s));
    if (passed) *passed = s.passed ? 1 : 0;
  });
}

}  // extern "C"
