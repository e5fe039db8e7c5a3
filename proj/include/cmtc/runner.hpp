#pragma once

#include <filesystem>
#include <iostream>

#include "cmtc/config.hpp"
#include "cmtc/dataset.hpp"

namespace cmtc {

// Command implementations behind the CLI. Each validates its configuration
// before touching the filesystem and keeps every emitted file deterministic
// for a fixed (config, seed).

namespace detail_run {

inline void prepare_out_dir(const std::string& dir, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) {
      throw ValueError("output directory '" + dir + "' is not empty (use --force to overwrite)");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

/// The run seed feeds synthesis, the protocol split and training streams.
inline RunConfig resolved(RunConfig cfg) {
  cfg.dataset.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.train.clip_cap = cfg.clip_cap;
  return cfg;
}

inline void apply_threads(const RunConfig& cfg) {
  int n = cfg.threads;
  if (n == 0) {
    n = static_cast<int>(std::min(8u, std::max(1u, std::thread::hardware_concurrency())));
  }
  set_thread_count(n);
}

template <typename T>
void write_embeddings(const std::vector<ClipEmbedding>& queries,
                      const std::vector<ClipEmbedding>& gallery, const std::string& ckpt_path,
                      const std::string& meta_path) {
  Checkpoint ck;
  auto put_set = [&](const std::vector<ClipEmbedding>& set, const std::string& prefix) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s/%04zu", prefix.c_str(), i);
      std::vector<T> vals(set[i].vec.begin(), set[i].vec.end());
      ck.put<T>(name, vals, {static_cast<std::int64_t>(vals.size())});
    }
  };
  put_set(queries, "query");
  put_set(gallery, "gallery");
  ck.save(ckpt_path);

  std::ofstream f(meta_path, std::ios::trunc);
  if (!f) throw IoError("write_embeddings: cannot open '" + meta_path + "'");
  f << "set,index,person_id,camera_id\n";
  for (std::size_t i = 0; i < queries.size(); ++i) {
    f << "query," << i << ',' << queries[i].person_id << ',' << queries[i].camera_id << '\n';
  }
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    f << "gallery," << i << ',' << gallery[i].person_id << ',' << gallery[i].camera_id << '\n';
  }
}

template <typename T>
void write_eval_artifacts(CmtcModel<T>& model, const std::vector<LoadedClip<T>>& clips,
                          const ProtocolSplit& split, const std::string& out_dir) {
  namespace fs = std::filesystem;
  auto q = extract_embeddings(model, clips, split.query);
  auto g = extract_embeddings(model, clips, split.gallery);
  EvalReport rep = cmc_map(distance_matrix(q, g), q, g);
  write_report(rep, (fs::path(out_dir) / "report.json").string(),
               (fs::path(out_dir) / "report.csv").string());
  write_rankings_csv(rep, g, (fs::path(out_dir) / "rankings.csv").string());
  write_embeddings<T>(q, g, (fs::path(out_dir) / "embeddings.ckpt").string(),
                      (fs::path(out_dir) / "embeddings_meta.csv").string());
}

}  // namespace detail_run

/// synth: generate the event dataset, masks and manifest.
inline void run_synth(const RunConfig& raw_cfg, const std::string& out_dir, bool force) {
  RunConfig cfg = detail_run::resolved(raw_cfg);
  cfg.validate();
  detail_run::apply_threads(cfg);
  auto clips = synth_dataset(cfg.dataset);
  save_dataset(clips, cfg.dataset, out_dir, force);
  cfg.save((std::filesystem::path(out_dir) / "synth_config.json").string());
  std::cout << "synth: wrote " << clips.size() << " clips to " << out_dir << "\n";
}

template <typename T>
TrainResult<T> run_train_impl(const RunConfig& cfg, const std::string& data_dir,
                              const std::string& out_dir, const std::string& resume) {
  auto clips = load_dataset<T>(data_dir, cfg.clip_cap);
  ProtocolSplit split = protocol_split(clip_labels(clips), cfg.seed);
  CmtcModel<T> model(cfg.ablation, cfg.model, static_cast<std::int64_t>(split.train_ids.size()),
                     cfg.seed);
  TrainResult<T> result = train_reid(model, clips, split, cfg.train, out_dir, resume);
  if (!out_dir.empty()) {
    detail_run::write_eval_artifacts(model, clips, split, out_dir);
  }
  return result;
}

/// train: optional EventNet pretraining plus end-to-end ReID training with
/// per-epoch metrics, checkpoints and final evaluation artifacts.
inline EpochMetrics run_train(const RunConfig& raw_cfg, const std::string& data_dir,
                              const std::string& out_dir, bool force,
                              const std::string& resume = "") {
  RunConfig cfg = detail_run::resolved(raw_cfg);
  cfg.validate();
  if (!std::filesystem::exists(std::filesystem::path(data_dir) / "manifest.json")) {
    throw ValueError("train: no dataset manifest under '" + data_dir + "' (run synth first)");
  }
  detail_run::apply_threads(cfg);
  if (resume.empty()) {
    detail_run::prepare_out_dir(out_dir, force);
  } else if (!std::filesystem::exists(resume)) {
    throw ValueError("train: resume checkpoint '" + resume + "' does not exist");
  }
  cfg.save((std::filesystem::path(out_dir) / "config.json").string());

  EpochMetrics final_row;
  if (cfg.precision == "f64") {
    auto res = run_train_impl<double>(cfg, data_dir, out_dir, resume);
    final_row = res.history.back();
  } else {
    auto res = run_train_impl<float>(cfg, data_dir, out_dir, resume);
    final_row = res.history.back();
  }
  std::cout << "train[" << cfg.ablation.name() << "]: epoch " << final_row.epoch
            << " rank1=" << final_row.rank1 << " mAP=" << final_row.map << "\n";
  return final_row;
}

template <typename T>
void run_eval_impl(const RunConfig& cfg, const std::string& checkpoint,
                   const std::string& data_dir, const std::string& out_dir) {
  auto clips = load_dataset<T>(data_dir, cfg.clip_cap);
  ProtocolSplit split = protocol_split(clip_labels(clips), cfg.seed);
  Checkpoint ck = Checkpoint::load(checkpoint);
  const auto num_classes =
      static_cast<std::int64_t>(ck.get_scalar<std::uint64_t>("meta/num_classes"));
  CmtcModel<T> model(cfg.ablation, cfg.model, num_classes, cfg.seed);
  restore_checkpoint<T>(ck, model, nullptr);
  detail_run::write_eval_artifacts(model, clips, split, out_dir);
}

/// eval: restore a checkpoint and write report + rankings + embeddings.
inline void run_eval(const RunConfig& raw_cfg, const std::string& checkpoint,
                     const std::string& data_dir, const std::string& out_dir, bool force) {
  RunConfig cfg = detail_run::resolved(raw_cfg);
  cfg.validate();
  if (!std::filesystem::exists(checkpoint)) {
    throw ValueError("eval: checkpoint '" + checkpoint + "' does not exist");
  }
  if (!std::filesystem::exists(std::filesystem::path(data_dir) / "manifest.json")) {
    throw ValueError("eval: no dataset manifest under '" + data_dir + "'");
  }
  detail_run::apply_threads(cfg);
  detail_run::prepare_out_dir(out_dir, force);
  if (cfg.precision == "f64") {
    run_eval_impl<double>(cfg, checkpoint, data_dir, out_dir);
  } else {
    run_eval_impl<float>(cfg, checkpoint, data_dir, out_dir);
  }
  std::cout << "eval: wrote report to " << out_dir << "\n";
}

struct AblationRow {
  AblationConfig config;
  std::vector<double> rank1;  // per seed
  std::vector<double> map;
  double rank1_median = 0;
  double map_median = 0;
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// ablate: the five-stage ablation matrix over several seeds, one run
/// directory per cell, consolidated into ablation.csv in the canonical
/// row order (baseline, +EventNet, +EventNet+MC, +EventNet+TC, full).
inline std::vector<AblationRow> run_ablate(const RunConfig& raw_cfg, const std::string& data_dir,
                                           const std::string& out_dir, bool force, int n_seeds) {
  RunConfig cfg = detail_run::resolved(raw_cfg);
  cfg.validate();
  if (n_seeds < 1) throw ValueError("ablate: need at least 1 seed");
  if (!std::filesystem::exists(std::filesystem::path(data_dir) / "manifest.json")) {
    throw ValueError("ablate: no dataset manifest under '" + data_dir + "'");
  }
  detail_run::apply_threads(cfg);
  detail_run::prepare_out_dir(out_dir, force);

  const std::array<const char*, 5> rows = {"baseline", "eventnet", "mc", "tc", "full"};
  std::vector<AblationRow> table;
  for (const char* name : rows) {
    AblationRow row;
    row.config = AblationConfig::from_name(name);
    for (int s = 0; s < n_seeds; ++s) {
      RunConfig run_cfg = cfg;
      run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(s);
      run_cfg.ablation = row.config;
      run_cfg.train.checkpoint_interval = 0;  // keep only the final checkpoint per cell
      const std::string cell_dir =
          (std::filesystem::path(out_dir) / (std::string(name) + "_seed" +
                                             std::to_string(run_cfg.seed)))
              .string();
      EpochMetrics final_row = run_train(run_cfg, data_dir, cell_dir, true);
      row.rank1.push_back(final_row.rank1);
      row.map.push_back(final_row.map);
    }
    row.rank1_median = median(row.rank1);
    row.map_median = median(row.map);
    table.push_back(std::move(row));
  }

  std::ofstream f((std::filesystem::path(out_dir) / "ablation.csv").string(), std::ios::trunc);
  if (!f) throw IoError("ablate: cannot write ablation.csv");
  f << "eventnet,mc,tc,name";
  for (int s = 0; s < n_seeds; ++s) f << ",rank1_seed" << (cfg.seed + static_cast<std::uint64_t>(s));
  for (int s = 0; s < n_seeds; ++s) f << ",map_seed" << (cfg.seed + static_cast<std::uint64_t>(s));
  f << ",rank1_median,map_median\n";
  for (const auto& row : table) {
    f << (row.config.use_eventnet ? 1 : 0) << ',' << (row.config.use_mc ? 1 : 0) << ','
      << (row.config.use_tc ? 1 : 0) << ',' << row.config.name();
    for (double v : row.rank1) f << ',' << v;
    for (double v : row.map) f << ',' << v;
    f << ',' << row.rank1_median << ',' << row.map_median << '\n';
  }
  return table;
}

}  // namespace cmtc
