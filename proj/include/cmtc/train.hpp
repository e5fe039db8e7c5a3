#pragma once

#include <filesystem>
#include <map>

#include "cmtc/eval.hpp"
#include "cmtc/eventnet.hpp"
#include "cmtc/modality.hpp"
#include "cmtc/reid.hpp"
#include "cmtc/temporal.hpp"

namespace cmtc {

/// Which network stages are active. MC and TC both consume the auxiliary
/// modality, so they require EventNet.
struct AblationConfig {
  bool use_eventnet = true;
  bool use_mc = true;
  bool use_tc = true;

  void validate() const {
    if ((use_mc || use_tc) && !use_eventnet) {
      throw ValueError("ablation: MC and TC require EventNet (they consume auxiliaries)");
    }
  }

  std::string name() const {
    if (!use_eventnet) return "baseline";
    if (use_mc && use_tc) return "full";
    if (use_mc) return "eventnet+mc";
    if (use_tc) return "eventnet+tc";
    return "eventnet";
  }

  static AblationConfig from_name(const std::string& name) {
    if (name == "baseline") return {false, false, false};
    if (name == "eventnet") return {true, false, false};
    if (name == "mc" || name == "eventnet+mc") return {true, true, false};
    if (name == "tc" || name == "eventnet+tc") return {true, false, true};
    if (name == "full") return {true, true, true};
    throw ValueError("ablation: unknown configuration '" + name +
                     "' (expect baseline|eventnet|mc|tc|full)");
  }
};

struct ModelConfig {
  std::array<std::int64_t, 3> encoder_channels{16, 32, 64};
  std::array<std::int64_t, 3> eventnet_channels{16, 32, 64};
  double leaky_slope = 0.1;
  bool attention_scale = false;
  bool attention_renorm = false;
  double bn_momentum = 0.1;
};

/// The assembled network for one ablation configuration. Replaced stages
/// follow the ablation wiring: without MC the modalities are channel-concat
/// fused; without TC the per-frame features are averaged over time.
template <typename T>
struct CmtcModel {
  AblationConfig ablation;
  ModelConfig cfg;
  std::int64_t num_classes = 0;
  std::int64_t embed_dim = 0;

  EventNet<T> eventnet;
  Encoder<T> encoder;
  CmsBlock<T> cms_block;
  CmfBlock<T> cmf_block;
  CtaBlock<T> cta_block;
  CtiBlock<T> cti_event, cti_aux;
  nn::BatchNorm1d<T> neck;
  nn::Linear<T> classifier;

  CmtcModel() = default;

  CmtcModel(AblationConfig ab, ModelConfig mc, std::int64_t classes, std::uint64_t seed)
      : ablation(ab), cfg(mc), num_classes(classes) {
    ablation.validate();
    Rng rng = Rng(seed).fork("model");
    const std::int64_t C = cfg.encoder_channels[2];
    encoder = Encoder<T>(cfg.encoder_channels, cfg.leaky_slope, rng.fork("encoder"));
    if (ablation.use_eventnet) {
      eventnet = EventNet<T>(2, cfg.eventnet_channels, cfg.leaky_slope, rng.fork("eventnet"));
    }
    if (ablation.use_mc) {
      cms_block = CmsBlock<T>(C, cfg.leaky_slope, rng.fork("cms"));
      cmf_block = CmfBlock<T>(C, cfg.leaky_slope, rng.fork("cmf"));
    }
    if (ablation.use_tc) {
      cta_block = CtaBlock<T>(C, cfg.leaky_slope, rng.fork("cta"));
      cti_event = CtiBlock<T>(C, cfg.leaky_slope, rng.fork("cti_event"));
      cti_aux = CtiBlock<T>(C, cfg.leaky_slope, rng.fork("cti_aux"));
    }
    if (!ablation.use_eventnet) {
      embed_dim = C;
    } else if (ablation.use_tc) {
      embed_dim = 4 * C;
    } else {
      embed_dim = 2 * C;
    }
    neck = nn::BatchNorm1d<T>(embed_dim, cfg.bn_momentum);
    classifier = nn::Linear<T>(embed_dim, num_classes, cfg.leaky_slope, rng.fork("classifier"));
  }

  void collect(nn::ParamMap<T>& out, bool include_eventnet = true) {
    encoder.collect("encoder", out);
    if (ablation.use_eventnet && include_eventnet) eventnet.collect("eventnet", out);
    if (ablation.use_mc) {
      cms_block.collect("cms", out);
      cmf_block.collect("cmf", out);
    }
    if (ablation.use_tc) {
      cta_block.collect("cta", out);
      cti_event.collect("cti_event", out);
      cti_aux.collect("cti_aux", out);
    }
    neck.collect("neck", out);
    classifier.collect("classifier", out);
  }

  void collect_buffers(nn::BufferMap<T>& out) { neck.collect_buffers("neck", out); }

  /// Pre-neck descriptor of one clip, shape 1 x embed_dim.
  Tensor<T> clip_descriptor(const Tensor<T>& frames) const {
    const std::int64_t clip_len = frames.dim(0);
    AttentionOptions att;
    att.scale_by_sqrt_dim = cfg.attention_scale;
    TemporalOptions topt;
    topt.attention = att;
    topt.renormalize_combined = cfg.attention_renorm;

    Tensor<T> fe, fa;
    if (ablation.use_eventnet) {
      Tensor<T> aux = eventnet(frames);
      auto pair = encode(frames, aux, encoder);
      fe = pair.first;
      fa = pair.second;
    } else {
      fe = encoder.event_branch(frames);
    }

    std::vector<Tensor<T>> fe_i(static_cast<std::size_t>(clip_len));
    std::vector<Tensor<T>> fa_i(static_cast<std::size_t>(clip_len));
    for (std::int64_t i = 0; i < clip_len; ++i) {
      fe_i[static_cast<std::size_t>(i)] = slice(fe, 0, i, 1);
      if (ablation.use_eventnet) fa_i[static_cast<std::size_t>(i)] = slice(fa, 0, i, 1);
    }

    std::vector<Tensor<T>> fused(static_cast<std::size_t>(clip_len));
    for (std::int64_t i = 0; i < clip_len; ++i) {
      const auto s = static_cast<std::size_t>(i);
      if (ablation.use_mc) {
        fused[s] = mc_forward(fe_i[s], fa_i[s], cms_block, cmf_block, att).fused;
      } else if (ablation.use_eventnet) {
        fused[s] = concat<T>({fe_i[s], fa_i[s]}, 1);
      } else {
        fused[s] = fe_i[s];
      }
    }

    std::vector<Tensor<T>> features;
    if (ablation.use_tc) {
      for (const auto& [i, j] : pair_schedule(clip_len)) {
        const auto si = static_cast<std::size_t>(i), sj = static_cast<std::size_t>(j);
        CtaOut<T> attended = cta(fe_i[si], fe_i[sj], fa_i[si], fa_i[sj], cta_block, topt);
        features.push_back(tc_forward(fused[si], attended, cti_event, cti_aux));
      }
    } else {
      features = fused;
    }
    return aggregate_pair_features(features);
  }
};

struct TrainConfig {
  int epochs = 40;
  double lr = 3e-4;
  double decay_factor = 0.1;
  std::int64_t decay_interval = 20;
  int batch_p = 4;
  int batch_k = 4;
  double margin = 0.3;
  int pretrain_epochs = 8;
  double pretrain_lr = 3e-4;
  double lambda_p = 0.1;
  bool eventnet_joint = true;  // false freezes EventNet after pretraining
  int eval_interval = 1;
  int checkpoint_interval = 1;  // 0 keeps only the final checkpoint
  std::int64_t clip_cap = 5;
  std::uint64_t seed = 1;
};

struct EpochMetrics {
  int epoch = 0;
  double id_loss = 0, triplet_loss = 0, total_loss = 0;
  double rank1 = -1, rank5 = -1, rank10 = -1, map = -1;  // -1 when not evaluated
};

template <typename T>
struct TrainResult {
  std::vector<EpochMetrics> history;
  EvalReport final_report;
};

namespace detail_train {

/// P identities x K clips per batch, derived from (seed, epoch) only, so a
/// resumed run samples exactly what the uninterrupted run would have. Enough
/// batches are drawn per epoch to cover every training clip once in
/// expectation.
inline std::vector<std::vector<std::size_t>> pk_batches(
    const std::map<int, std::vector<std::size_t>>& by_id, int P, int K, std::uint64_t seed,
    int epoch) {
  std::vector<int> all_ids;
  all_ids.reserve(by_id.size());
  std::size_t total_clips = 0;
  for (const auto& [id, clips] : by_id) {
    all_ids.push_back(id);
    total_clips += clips.size();
  }
  const std::size_t per_batch = static_cast<std::size_t>(P) * static_cast<std::size_t>(K);
  const std::size_t want_batches = std::max<std::size_t>(1, (total_clips + per_batch - 1) / per_batch);

  Rng rng = Rng(seed).fork("batches").fork(static_cast<std::uint64_t>(epoch));
  std::vector<std::vector<std::size_t>> batches;
  std::vector<int> ids = all_ids;
  shuffle(ids.begin(), ids.end(), rng);
  std::size_t cursor = 0;
  while (batches.size() < want_batches) {
    std::vector<std::size_t> batch;
    for (int p = 0; p < P && static_cast<std::size_t>(p) < all_ids.size(); ++p) {
      if (cursor >= ids.size()) {
        shuffle(ids.begin(), ids.end(), rng);
        cursor = 0;
      }
      const int id = ids[cursor++];
      const auto& clips = by_id.at(id);
      std::vector<std::size_t> order(clips.size());
      for (std::size_t k = 0; k < clips.size(); ++k) order[k] = k;
      Rng crng = rng.fork(static_cast<std::uint64_t>(id) * 1315423911ULL +
                          static_cast<std::uint64_t>(batches.size()));
      shuffle(order.begin(), order.end(), crng);
      for (int k = 0; k < K; ++k) {
        batch.push_back(clips[order[static_cast<std::size_t>(k) % order.size()]]);
      }
    }
    if (batch.size() >= 2) batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace detail_train

template <typename T>
Checkpoint snapshot_checkpoint(CmtcModel<T>& model, Adam<T>& opt, std::int64_t epochs_done) {
  Checkpoint ck;
  nn::ParamMap<T> params;
  model.collect(params);
  for (const auto& p : params) {
    ck.put<T>("param/" + p.path, {p.tensor->values().begin(), p.tensor->values().end()},
              p.tensor->shape());
  }
  nn::BufferMap<T> buffers;
  model.collect_buffers(buffers);
  for (const auto& b : buffers) {
    ck.put<T>("buffer/" + b.path, *b.data,
              {static_cast<std::int64_t>(std::max<std::size_t>(1, b.data->size()))});
  }
  nn::BufferMap<T> opt_state;
  opt.collect_state("opt", opt_state);
  for (const auto& b : opt_state) {
    ck.put<T>(b.path, *b.data, {static_cast<std::int64_t>(std::max<std::size_t>(1, b.data->size()))});
  }
  ck.put_scalar<std::uint64_t>("meta/epochs_done", static_cast<std::uint64_t>(epochs_done));
  ck.put_scalar<std::uint64_t>("meta/step", static_cast<std::uint64_t>(opt.step_count()));
  ck.put_scalar<std::uint64_t>("meta/embed_dim", static_cast<std::uint64_t>(model.embed_dim));
  ck.put_scalar<std::uint64_t>("meta/num_classes", static_cast<std::uint64_t>(model.num_classes));
  return ck;
}

/// Restores parameters, BN buffers and optimizer moments. Returns the number
/// of completed epochs recorded in the checkpoint.
template <typename T>
std::int64_t restore_checkpoint(const Checkpoint& ck, CmtcModel<T>& model, Adam<T>* opt) {
  nn::ParamMap<T> params;
  model.collect(params);
  for (auto& p : params) {
    const std::string key = "param/" + p.path;
    auto vals = ck.get<T>(key);
    if (ck.shape(key) != p.tensor->shape()) {
      throw IoError("checkpoint: shape mismatch for '" + p.path + "'");
    }
    Tensor<T> fresh = Tensor<T>::from(p.tensor->shape(), std::move(vals));
    fresh.set_requires_grad(true);
    *p.tensor = fresh;
  }
  nn::BufferMap<T> buffers;
  model.collect_buffers(buffers);
  for (auto& b : buffers) {
    auto vals = ck.get<T>("buffer/" + b.path);
    if (vals.size() != b.data->size()) throw IoError("checkpoint: buffer size mismatch");
    *b.data = std::move(vals);
  }
  if (opt) {
    nn::BufferMap<T> opt_state;
    opt->collect_state("opt", opt_state);
    for (auto& b : opt_state) {
      if (!ck.has(b.path)) continue;
      auto vals = ck.get<T>(b.path);
      if (vals.size() != b.data->size()) throw IoError("checkpoint: moment size mismatch");
      *b.data = std::move(vals);
    }
    opt->set_step_count(static_cast<std::int64_t>(ck.get_scalar<std::uint64_t>("meta/step")));
  }
  return static_cast<std::int64_t>(ck.get_scalar<std::uint64_t>("meta/epochs_done"));
}

/// Embeddings for a set of clips in eval mode (no recording, running BN stats).
template <typename T>
std::vector<ClipEmbedding> extract_embeddings(CmtcModel<T>& model,
                                              const std::vector<LoadedClip<T>>& clips,
                                              const std::vector<std::size_t>& indices) {
  NoGradScope<T> no_grad;
  std::vector<ClipEmbedding> out;
  out.reserve(indices.size());
  for (const std::size_t idx : indices) {
    Tensor<T> desc = model.clip_descriptor(clips[idx].frames.frames);
    Tensor<T> emb = model.neck(desc, false);
    ClipEmbedding e;
    e.vec.assign(emb.values().begin(), emb.values().end());
    e.person_id = clips[idx].person_id;
    e.camera_id = clips[idx].camera_id;
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
EvalReport evaluate_split(CmtcModel<T>& model, const std::vector<LoadedClip<T>>& clips,
                          const ProtocolSplit& split) {
  if (split.query.empty() || split.gallery.empty()) {
    throw ValueError("evaluate_split: empty query or gallery split");
  }
  auto q = extract_embeddings(model, clips, split.query);
  auto g = extract_embeddings(model, clips, split.gallery);
  return cmc_map(distance_matrix(q, g), q, g);
}

/// End-to-end training: optional EventNet pretraining, then joint ReID
/// optimization with per-epoch evaluation, metrics CSV and checkpoints under
/// run_dir (pass "" for no file output). Deterministic per (clips, config).
template <typename T>
TrainResult<T> train_reid(CmtcModel<T>& model, const std::vector<LoadedClip<T>>& clips,
                          const ProtocolSplit& split, const TrainConfig& cfg,
                          const std::string& run_dir = "",
                          const std::string& resume_checkpoint = "") {
  namespace fs = std::filesystem;
  if (split.train.empty()) throw ValueError("train: empty training split");

  // map person ids to class indices
  std::map<int, std::int64_t> class_of;
  for (int id : split.train_ids) {
    const auto next = static_cast<std::int64_t>(class_of.size());
    class_of[id] = next;
  }
  if (static_cast<std::int64_t>(class_of.size()) != model.num_classes) {
    throw ValueError("train: model has " + std::to_string(model.num_classes) +
                     " classes but the split has " + std::to_string(class_of.size()) +
                     " training identities");
  }
  std::map<int, std::vector<std::size_t>> by_id;
  for (const std::size_t idx : split.train) by_id[clips[idx].person_id].push_back(idx);

  std::string ckpt_dir;
  std::ofstream metrics;
  if (!run_dir.empty()) {
    ckpt_dir = (fs::path(run_dir) / "checkpoints").string();
    fs::create_directories(ckpt_dir);
  }

  // stage 1: EventNet pretraining on the training clips
  if (model.ablation.use_eventnet && cfg.pretrain_epochs > 0 && resume_checkpoint.empty()) {
    std::vector<LoadedClip<T>> train_clips;
    for (const std::size_t idx : split.train) train_clips.push_back(clips[idx]);
    PretrainConfig pcfg;
    pcfg.epochs = cfg.pretrain_epochs;
    pcfg.lr = cfg.pretrain_lr;
    pcfg.lambda_p = cfg.lambda_p;
    pcfg.seed = cfg.seed;
    pcfg.checkpoint_dir = ckpt_dir;
    PerceptualExtractor<T> extractor(cfg.seed);
    auto hist = pretrain_eventnet(model.eventnet, train_clips, extractor, pcfg);
    if (!run_dir.empty()) {
      std::ofstream f((fs::path(run_dir) / "eventnet_pretrain.csv").string(), std::ios::trunc);
      f << "epoch,mse,perceptual,total\n";
      for (const auto& row : hist) {
        f << row.epoch << ',' << row.mse << ',' << row.perceptual << ',' << row.total << '\n';
      }
    }
  }

  nn::ParamMap<T> params;
  model.collect(params, cfg.eventnet_joint);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.decay_factor = cfg.decay_factor;
  acfg.decay_interval = cfg.decay_interval;
  Adam<T> opt(params, acfg);

  std::int64_t start_epoch = 0;
  if (!resume_checkpoint.empty()) {
    start_epoch = restore_checkpoint(Checkpoint::load(resume_checkpoint), model, &opt);
  }

  if (!run_dir.empty()) {
    const auto mode = start_epoch > 0 ? std::ios::app : std::ios::trunc;
    metrics.open((fs::path(run_dir) / "metrics.csv").string(), mode);
    if (start_epoch == 0) {
      metrics << "epoch,id_loss,triplet_loss,total_loss,rank1,rank5,rank10,mAP\n";
    }
  }

  TrainResult<T> result;
  std::int64_t global_step = opt.step_count();
  for (int epoch = static_cast<int>(start_epoch); epoch < cfg.epochs; ++epoch) {
    opt.set_epoch(epoch);
    EpochMetrics em;
    em.epoch = epoch;
    double id_sum = 0, tri_sum = 0, total_sum = 0;
    std::size_t steps = 0;

    for (const auto& batch : detail_train::pk_batches(by_id, cfg.batch_p, cfg.batch_k, cfg.seed,
                                                      epoch)) {
      ++global_step;
      opt.zero_grad();
      Tape<T> tape;
      ReidLossOut<T> loss;
      {
        GradScope<T> scope(tape);
        std::vector<Tensor<T>> descs;
        std::vector<std::int64_t> labels;
        descs.reserve(batch.size());
        for (const std::size_t idx : batch) {
          descs.push_back(model.clip_descriptor(clips[idx].frames.frames));
          labels.push_back(class_of.at(clips[idx].person_id));
        }
        Tensor<T> stacked = concat(descs, 0);
        Tensor<T> embeddings = model.neck(stacked, true);
        Tensor<T> logits = model.classifier(embeddings);
        loss = reid_loss(embeddings, logits, labels, cfg.margin);
        if (!std::isfinite(static_cast<double>(loss.total.item()))) {
          throw ValueError("train: non-finite loss at step " + std::to_string(global_step));
        }
        tape.backward(loss.total);
      }
      opt.step();
      id_sum += loss.id_part;
      tri_sum += loss.triplet_part;
      total_sum += static_cast<double>(loss.total.item());
      ++steps;
    }
    em.id_loss = id_sum / static_cast<double>(steps);
    em.triplet_loss = tri_sum / static_cast<double>(steps);
    em.total_loss = total_sum / static_cast<double>(steps);

    if (cfg.eval_interval > 0 && ((epoch + 1) % cfg.eval_interval == 0 || epoch + 1 == cfg.epochs)) {
      EvalReport rep = evaluate_split(model, clips, split);
      em.rank1 = rep.rank1;
      em.rank5 = rep.rank5;
      em.rank10 = rep.rank10;
      em.map = rep.map;
      if (epoch + 1 == cfg.epochs) result.final_report = rep;
    }
    result.history.push_back(em);
    if (metrics.is_open()) {
      metrics << em.epoch << ',' << em.id_loss << ',' << em.triplet_loss << ',' << em.total_loss
              << ',' << em.rank1 << ',' << em.rank5 << ',' << em.rank10 << ',' << em.map << '\n';
      metrics.flush();
    }
    if (!ckpt_dir.empty()) {
      const bool periodic = cfg.checkpoint_interval > 0 &&
                            (epoch + 1) % cfg.checkpoint_interval == 0;
      if (periodic || epoch + 1 == cfg.epochs) {
        char name[64];
        std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch + 1);
        snapshot_checkpoint(model, opt, epoch + 1).save(ckpt_dir + "/" + name);
      }
    }
  }
  if (result.history.empty() || result.history.back().rank1 < 0) {
    result.final_report = evaluate_split(model, clips, split);
  }
  return result;
}

}  // namespace cmtc
