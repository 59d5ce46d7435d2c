#include "freeml/config.hpp"

#include <fstream>
#include <set>

namespace freeml {

namespace {

// Tracks consumed keys; anything left over is a configuration error.
class StrictSection {
 public:
  StrictSection(const nlohmann::json& obj, std::string path)
      : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) {
      throw std::invalid_argument("config section '" + path_ + "' must be an object");
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    seen_.insert(key);
    if (it->is_null()) return;
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument("config key '" + path_ + "." + key + "' has the wrong type");
    }
  }

  void get_optional_string(const char* key, std::optional<std::string>& out) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    seen_.insert(key);
    if (it->is_null()) {
      out.reset();
      return;
    }
    if (!it->is_string()) {
      throw std::invalid_argument("config key '" + path_ + "." + key + "' must be a string");
    }
    out = it->get<std::string>();
  }

  const nlohmann::json* child(const char* key) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return nullptr;
    seen_.insert(key);
    if (it->is_null()) return nullptr;
    return &*it;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw std::invalid_argument("unknown config key '" + path_ + "." + it.key() + "'");
      }
    }
  }

 private:
  const nlohmann::json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_train(const nlohmann::json& j, const std::string& path, TrainConfig& cfg) {
  StrictSection s(j, path);
  s.get("epochs", cfg.epochs);
  s.get("batch_size", cfg.batch_size);
  s.get("learning_rate", cfg.learning_rate);
  s.get("beta1", cfg.beta1);
  s.get("beta2", cfg.beta2);
  s.get("eps", cfg.eps);
  s.get("grad_clip", cfg.grad_clip);
  s.get("patience", cfg.patience);
  s.get("val_fraction", cfg.val_fraction);
  s.get("seed", cfg.seed);
  s.get("freeze_encoder", cfg.freeze_encoder);
  s.get("pretrain_fraction", cfg.pretrain_fraction);
  s.get("threads", cfg.threads);
  s.finish();
  cfg.validate();
}

nlohmann::json train_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"learning_rate", cfg.learning_rate},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"eps", cfg.eps},
          {"grad_clip", cfg.grad_clip},
          {"patience", cfg.patience},
          {"val_fraction", cfg.val_fraction},
          {"seed", cfg.seed},
          {"freeze_encoder", cfg.freeze_encoder},
          {"pretrain_fraction", cfg.pretrain_fraction},
          {"threads", cfg.threads}};
}

}  // namespace

RunConfig::RunConfig() {
  scratch_cfg = TrainConfig::finetune_defaults();
  scratch_cfg.learning_rate = 1e-3;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  StrictSection root(j, "");

  if (const auto* data = root.child("data")) {
    StrictSection s(*data, "data");
    s.get_optional_string("csv", cfg.data_csv);
    s.get("schema", cfg.schema);
    s.get_optional_string("neighbors", cfg.neighbors_csv);
    s.get("train_end", cfg.train_end);
    s.finish();
  }

  if (const auto* bench = root.child("benchmark")) {
    StrictSection s(*bench, "benchmark");
    s.get("sites", cfg.benchmark.n_sites);
    s.get("days", cfg.benchmark.days);
    s.get("obs_bias", cfg.benchmark.obs_bias);
    s.get("obs_noise_sd", cfg.benchmark.obs_noise_sd);
    s.get("obs_seed", cfg.benchmark.obs_seed);
    s.finish();
  }

  if (const auto* weather = root.child("weather")) {
    StrictSection s(*weather, "weather");
    auto& w = cfg.benchmark.weather;
    s.get("air_mean", w.air_mean);
    s.get("air_amplitude", w.air_amplitude);
    s.get("air_phase_day", w.air_phase_day);
    s.get("air_noise_sd", w.air_noise_sd);
    s.get("air_noise_rho", w.air_noise_rho);
    s.get("solar_max", w.solar_max);
    s.get("solar_seasonal_amplitude", w.solar_seasonal_amplitude);
    s.get("rain_rate", w.rain_rate);
    s.get("rain_scale", w.rain_scale);
    s.get("cloud_mean", w.cloud_mean);
    s.get("cloud_persistence", w.cloud_persistence);
    s.get("cloud_noise_sd", w.cloud_noise_sd);
    s.get("site_air_offset_range", w.site_air_offset_range);
    s.get("site_solar_scale_range", w.site_solar_scale_range);
    s.get("seed", w.seed);
    std::string start = w.start_date.iso();
    s.get("start_date", start);
    w.start_date = Date::parse(start);
    s.finish();
    w.validate();
  }

  if (const auto* sim = root.child("sim")) {
    StrictSection s(*sim, "sim");
    auto& p = cfg.benchmark.sim;
    s.get("relaxation_rate", p.relaxation_rate);
    s.get("eq_intercept", p.eq_intercept);
    s.get("eq_air_coeff", p.eq_air_coeff);
    s.get("eq_solar_coeff", p.eq_solar_coeff);
    s.get("eq_cloud_coeff", p.eq_cloud_coeff);
    s.get("initial_temp", p.initial_temp);
    s.finish();
    p.validate();
  }

  if (const auto* prompt = root.child("prompt")) {
    StrictSection s(*prompt, "prompt");
    s.get("prefix", cfg.prompt.prefix);
    s.get("suffix", cfg.prompt.suffix);
    s.get("template_version", cfg.prompt.template_version);
    std::string source = "template";
    s.get("source", source);
    if (source == "template") {
      cfg.prompt.source = DescriptionSource::template_engine;
    } else if (source == "remote") {
      cfg.prompt.source = DescriptionSource::remote_llm;
    } else {
      throw std::invalid_argument("prompt.source must be 'template' or 'remote'");
    }
    if (const auto* remote = s.child("remote")) {
      StrictSection r(*remote, "prompt.remote");
      RemoteConfig rc;
      r.get("base_url", rc.base_url);
      r.get("model_id", rc.model_id);
      r.get("timeout_s", rc.timeout_s);
      r.get("max_retries", rc.max_retries);
      r.get("backoff_ms", rc.backoff_ms);
      r.finish();
      cfg.prompt.remote = rc;
    }
    s.get_optional_string("cache", cfg.cache_path);
    s.finish();
    cfg.prompt.validate();
  }

  if (const auto* model = root.child("model")) {
    StrictSection s(*model, "model");
    std::string kind = "transformer";
    s.get("encoder", kind);
    if (kind == "transformer") {
      cfg.model.encoder = ModelConfig::EncoderKind::transformer;
    } else if (kind == "passthrough") {
      cfg.model.encoder = ModelConfig::EncoderKind::passthrough;
    } else {
      throw std::invalid_argument("model.encoder must be 'transformer' or 'passthrough'");
    }
    s.get("embed_dim", cfg.model.embed_dim);
    s.get("layers", cfg.model.layers);
    s.get("heads", cfg.model.heads);
    s.get("ffn_dim", cfg.model.ffn_dim);
    s.get("max_positions", cfg.model.max_positions);
    s.get("lstm_hidden", cfg.model.lstm_hidden);
    s.get("window", cfg.model.window);
    s.finish();
    cfg.model.validate();
  }

  if (const auto* t = root.child("pretrain")) parse_train(*t, "pretrain", cfg.pretrain_cfg);
  cfg.pretrain_cfg.phase = TrainConfig::Phase::pretrain;
  if (const auto* t = root.child("finetune")) parse_train(*t, "finetune", cfg.finetune_cfg);
  cfg.finetune_cfg.phase = TrainConfig::Phase::finetune;
  if (const auto* t = root.child("scratch")) parse_train(*t, "scratch", cfg.scratch_cfg);
  cfg.scratch_cfg.phase = TrainConfig::Phase::finetune;

  if (const auto* exp = root.child("experiment")) {
    StrictSection s(*exp, "experiment");
    auto& e = cfg.experiment;
    s.get("fractions", e.fractions);
    s.get("seeds", e.seeds);
    s.get("m_values", e.m_values);
    s.get("source_sites", e.source_sites);
    s.get("target_site", e.target_site);
    s.get("label_fraction", e.label_fraction);
    s.get("aux_test_observable", e.aux_test_observable);
    s.get("workers", e.workers);
    s.get("out_dir", e.out_dir);
    s.get("save_checkpoints", e.save_checkpoints);
    s.finish();
  }

  root.finish();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument("config file " + path.string() +
                                                    " is not valid JSON");
  return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
  const auto& w = benchmark.weather;
  const auto& p = benchmark.sim;
  nlohmann::json prompt_json = {
      {"prefix", prompt.prefix},
      {"suffix", prompt.suffix},
      {"template_version", prompt.template_version},
      {"source", prompt.source == DescriptionSource::remote_llm ? "remote" : "template"},
      {"cache", cache_path ? nlohmann::json(*cache_path) : nlohmann::json()},
  };
  if (prompt.remote) {
    prompt_json["remote"] = {{"base_url", prompt.remote->base_url},
                             {"model_id", prompt.remote->model_id},
                             {"timeout_s", prompt.remote->timeout_s},
                             {"max_retries", prompt.remote->max_retries},
                             {"backoff_ms", prompt.remote->backoff_ms}};
  }
  return {
      {"data",
       {{"csv", data_csv ? nlohmann::json(*data_csv) : nlohmann::json()},
        {"schema", schema},
        {"neighbors", neighbors_csv ? nlohmann::json(*neighbors_csv) : nlohmann::json()},
        {"train_end", train_end}}},
      {"benchmark",
       {{"sites", benchmark.n_sites},
        {"days", benchmark.days},
        {"obs_bias", benchmark.obs_bias},
        {"obs_noise_sd", benchmark.obs_noise_sd},
        {"obs_seed", benchmark.obs_seed}}},
      {"weather",
       {{"air_mean", w.air_mean},
        {"air_amplitude", w.air_amplitude},
        {"air_phase_day", w.air_phase_day},
        {"air_noise_sd", w.air_noise_sd},
        {"air_noise_rho", w.air_noise_rho},
        {"solar_max", w.solar_max},
        {"solar_seasonal_amplitude", w.solar_seasonal_amplitude},
        {"rain_rate", w.rain_rate},
        {"rain_scale", w.rain_scale},
        {"cloud_mean", w.cloud_mean},
        {"cloud_persistence", w.cloud_persistence},
        {"cloud_noise_sd", w.cloud_noise_sd},
        {"site_air_offset_range", w.site_air_offset_range},
        {"site_solar_scale_range", w.site_solar_scale_range},
        {"seed", w.seed},
        {"start_date", w.start_date.iso()}}},
      {"sim",
       {{"relaxation_rate", p.relaxation_rate},
        {"eq_intercept", p.eq_intercept},
        {"eq_air_coeff", p.eq_air_coeff},
        {"eq_solar_coeff", p.eq_solar_coeff},
        {"eq_cloud_coeff", p.eq_cloud_coeff},
        {"initial_temp", p.initial_temp}}},
      {"prompt", prompt_json},
      {"model",
       {{"encoder",
         model.encoder == ModelConfig::EncoderKind::transformer ? "transformer" : "passthrough"},
        {"embed_dim", model.embed_dim},
        {"layers", model.layers},
        {"heads", model.heads},
        {"ffn_dim", model.ffn_dim},
        {"max_positions", model.max_positions},
        {"lstm_hidden", model.lstm_hidden},
        {"window", model.window}}},
      {"pretrain", train_json(pretrain_cfg)},
      {"finetune", train_json(finetune_cfg)},
      {"scratch", train_json(scratch_cfg)},
      {"experiment",
       {{"fractions", experiment.fractions},
        {"seeds", experiment.seeds},
        {"m_values", experiment.m_values},
        {"source_sites", experiment.source_sites},
        {"target_site", experiment.target_site},
        {"label_fraction", experiment.label_fraction},
        {"aux_test_observable", experiment.aux_test_observable},
        {"workers", experiment.workers},
        {"out_dir", experiment.out_dir},
        {"save_checkpoints", experiment.save_checkpoints}}},
  };
}

Dataset RunConfig::load_data() const {
  if (data_csv) {
    return load_dataset(*data_csv, schema);
  }
  return make_benchmark(benchmark);
}

}  // namespace freeml
