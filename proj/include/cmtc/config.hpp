#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "cmtc/synth.hpp"
#include "cmtc/train.hpp"

namespace cmtc {

/// Full run configuration: dataset synthesis, model dims, schedule and
/// ablation flags. Serialized as JSON; CLI flags override individual fields.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string precision = "f32";  // f32 | f64
  int threads = 0;                // 0 = auto

  SynthConfig dataset;
  std::int64_t clip_cap = 5;
  ModelConfig model;
  TrainConfig train;
  AblationConfig ablation;

  void validate() const {
    if (precision != "f32" && precision != "f64") {
      throw ValueError("config: precision must be f32 or f64, got '" + precision + "'");
    }
    if (threads < 0) throw ValueError("config: threads must be >= 0");
    validate_synth_config(dataset);
    if (clip_cap < 1) throw ValueError("config: clip_cap must be >= 1");
    if (dataset.sensor_width % 8 != 0 || dataset.sensor_height % 8 != 0) {
      throw ValueError("config: sensor dims must be multiples of 8 (network downsampling)");
    }
    if (train.epochs < 1) throw ValueError("config: epochs must be >= 1");
    if (train.batch_p < 1 || train.batch_k < 1) {
      throw ValueError("config: batch_p and batch_k must be >= 1");
    }
    if (train.lr <= 0 || train.pretrain_lr <= 0) throw ValueError("config: learning rates must be positive");
    if (train.margin < 0) throw ValueError("config: margin must be >= 0");
    if (train.pretrain_epochs < 0) throw ValueError("config: pretrain_epochs must be >= 0");
    if (!(model.leaky_slope > 0.0 && model.leaky_slope < 1.0)) {
      throw ValueError("config: leaky_slope must lie in (0,1)");
    }
    ablation.validate();
  }

  /// Presets: smoke (seconds), desk (minutes, the benchmark scale), paper
  /// (the published schedule and resolution).
  static RunConfig preset(const std::string& name) {
    RunConfig cfg;
    if (name == "desk") {
      return cfg;  // defaults are the desk preset
    }
    if (name == "smoke") {
      cfg.dataset.identities = 4;
      cfg.dataset.clips_per_id_cam = 2;
      cfg.train.epochs = 1;
      cfg.train.pretrain_epochs = 1;
      cfg.train.batch_p = 2;
      cfg.train.batch_k = 2;
      return cfg;
    }
    if (name == "paper") {
      cfg.dataset.sensor_width = 128;
      cfg.dataset.sensor_height = 256;
      cfg.train.epochs = 400;
      cfg.train.decay_interval = 50;
      cfg.train.batch_p = 8;
      cfg.train.batch_k = 4;
      return cfg;
    }
    throw ValueError("config: unknown preset '" + name + "' (expect smoke|desk|paper)");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["precision"] = precision;
    j["threads"] = threads;
    j["dataset"] = {{"identities", dataset.identities},
                    {"cameras", dataset.cameras},
                    {"clips_per_id_cam", dataset.clips_per_id_cam},
                    {"sensor_width", dataset.sensor_width},
                    {"sensor_height", dataset.sensor_height},
                    {"clip_len", dataset.clip_len},
                    {"t_window_us", dataset.t_window_us},
                    {"sim_step_us", dataset.sim_step_us},
                    {"speed_scale", dataset.speed_scale},
                    {"noise_scale", dataset.noise_scale},
                    {"clip_cap", clip_cap}};
    j["model"] = {{"encoder_channels", model.encoder_channels},
                  {"eventnet_channels", model.eventnet_channels},
                  {"leaky_slope", model.leaky_slope},
                  {"attention_scale", model.attention_scale},
                  {"attention_renorm", model.attention_renorm},
                  {"bn_momentum", model.bn_momentum}};
    j["train"] = {{"epochs", train.epochs},
                  {"lr", train.lr},
                  {"decay_factor", train.decay_factor},
                  {"decay_interval", train.decay_interval},
                  {"batch_p", train.batch_p},
                  {"batch_k", train.batch_k},
                  {"margin", train.margin},
                  {"pretrain_epochs", train.pretrain_epochs},
                  {"pretrain_lr", train.pretrain_lr},
                  {"lambda_p", train.lambda_p},
                  {"eventnet_joint", train.eventnet_joint},
                  {"eval_interval", train.eval_interval},
                  {"checkpoint_interval", train.checkpoint_interval}};
    j["ablation"] = {{"use_eventnet", ablation.use_eventnet},
                     {"use_mc", ablation.use_mc},
                     {"use_tc", ablation.use_tc}};
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.precision = j.value("precision", cfg.precision);
    cfg.threads = j.value("threads", cfg.threads);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      cfg.dataset.identities = d.value("identities", cfg.dataset.identities);
      cfg.dataset.cameras = d.value("cameras", cfg.dataset.cameras);
      cfg.dataset.clips_per_id_cam = d.value("clips_per_id_cam", cfg.dataset.clips_per_id_cam);
      cfg.dataset.sensor_width = d.value("sensor_width", cfg.dataset.sensor_width);
      cfg.dataset.sensor_height = d.value("sensor_height", cfg.dataset.sensor_height);
      cfg.dataset.clip_len = d.value("clip_len", cfg.dataset.clip_len);
      cfg.dataset.t_window_us = d.value("t_window_us", cfg.dataset.t_window_us);
      cfg.dataset.sim_step_us = d.value("sim_step_us", cfg.dataset.sim_step_us);
      cfg.dataset.speed_scale = d.value("speed_scale", cfg.dataset.speed_scale);
      cfg.dataset.noise_scale = d.value("noise_scale", cfg.dataset.noise_scale);
      cfg.clip_cap = d.value("clip_cap", cfg.clip_cap);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      cfg.model.encoder_channels = m.value("encoder_channels", cfg.model.encoder_channels);
      cfg.model.eventnet_channels = m.value("eventnet_channels", cfg.model.eventnet_channels);
      cfg.model.leaky_slope = m.value("leaky_slope", cfg.model.leaky_slope);
      cfg.model.attention_scale = m.value("attention_scale", cfg.model.attention_scale);
      cfg.model.attention_renorm = m.value("attention_renorm", cfg.model.attention_renorm);
      cfg.model.bn_momentum = m.value("bn_momentum", cfg.model.bn_momentum);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.lr = t.value("lr", cfg.train.lr);
      cfg.train.decay_factor = t.value("decay_factor", cfg.train.decay_factor);
      cfg.train.decay_interval = t.value("decay_interval", cfg.train.decay_interval);
      cfg.train.batch_p = t.value("batch_p", cfg.train.batch_p);
      cfg.train.batch_k = t.value("batch_k", cfg.train.batch_k);
      cfg.train.margin = t.value("margin", cfg.train.margin);
      cfg.train.pretrain_epochs = t.value("pretrain_epochs", cfg.train.pretrain_epochs);
      cfg.train.pretrain_lr = t.value("pretrain_lr", cfg.train.pretrain_lr);
      cfg.train.lambda_p = t.value("lambda_p", cfg.train.lambda_p);
      cfg.train.eventnet_joint = t.value("eventnet_joint", cfg.train.eventnet_joint);
      cfg.train.eval_interval = t.value("eval_interval", cfg.train.eval_interval);
      cfg.train.checkpoint_interval = t.value("checkpoint_interval", cfg.train.checkpoint_interval);
    }
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      cfg.ablation.use_eventnet = a.value("use_eventnet", cfg.ablation.use_eventnet);
      cfg.ablation.use_mc = a.value("use_mc", cfg.ablation.use_mc);
      cfg.ablation.use_tc = a.value("use_tc", cfg.ablation.use_tc);
    }
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValueError("config: bad JSON in '" + path + "': " + e.what());
    }
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("config: cannot write '" + path + "'");
    f << to_json().dump(2) << '\n';
  }
};

}  // namespace cmtc
