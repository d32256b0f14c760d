#include "trkp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "trkp/error.hpp"
#include "trkp/rng.hpp"

namespace trkp {

using nlohmann::json;

ExperimentConfig tri_source_preset() {
  ExperimentConfig cfg;
  cfg.scenes.image_size = 64;
  cfg.scenes.classes = 3;
  cfg.scenes.sources = {
      {"s1", 0.05, 0.02, 1.0, {}, 48, 16},
      {"s2", -0.35, 0.05, 0.8, {}, 48, 16},
      {"s3", 0.10, 0.25, 1.6, {}, 48, 16},
  };
  cfg.scenes.target.weights = {0.7, 0.2, 0.1};
  cfg.scenes.target.train = 48;
  cfg.scenes.target.eval = 32;
  return cfg;
}

namespace {

void expect_keys(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ParseError("config: unknown key '" + path + it.key() + "'");
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ParseError("config: bad value for '" + path + key + "': " + e.what());
  }
}

void parse_scenes(const json& obj, SceneSetConfig& out, const std::string& path) {
  expect_keys(obj, {"image_size", "classes", "sources", "target"}, path);
  read_field(obj, "image_size", out.image_size, path);
  read_field(obj, "classes", out.classes, path);
  if (obj.contains("sources")) {
    const json& arr = obj.at("sources");
    if (!arr.is_array() || arr.empty())
      throw ParseError("config: '" + path + "sources' must be a non-empty array");
    out.sources.clear();
    int idx = 0;
    for (const json& s : arr) {
      const std::string spath = path + "sources[" + std::to_string(idx++) + "].";
      expect_keys(s, {"domain_id", "intensity_offset", "noise_sigma", "object_scale",
                      "class_prior", "train", "heldout"},
                  spath);
      SourceEntry e;
      e.domain_id = "s" + std::to_string(idx);
      read_field(s, "domain_id", e.domain_id, spath);
      read_field(s, "intensity_offset", e.intensity_offset, spath);
      read_field(s, "noise_sigma", e.noise_sigma, spath);
      read_field(s, "object_scale", e.object_scale, spath);
      read_field(s, "class_prior", e.class_prior, spath);
      read_field(s, "train", e.train, spath);
      read_field(s, "heldout", e.heldout, spath);
      out.sources.push_back(std::move(e));
    }
  }
  if (obj.contains("target")) {
    const json& t = obj.at("target");
    const std::string tpath = path + "target.";
    expect_keys(t, {"weights", "train", "eval"}, tpath);
    read_field(t, "weights", out.target.weights, tpath);
    read_field(t, "train", out.target.train, tpath);
    read_field(t, "eval", out.target.eval, tpath);
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError("config " + origin + ": " + e.what());
  }
  if (!root.is_object()) throw ParseError("config " + origin + ": top level must be an object");

  ExperimentConfig cfg = tri_source_preset();
  expect_keys(root,
              {"seed", "threads", "precision", "out", "scenes", "detector", "amsd", "htrm",
               "distill", "eval", "pipeline"},
              "");
  read_field(root, "seed", cfg.seed, "");
  read_field(root, "threads", cfg.threads, "");
  read_field(root, "precision", cfg.precision, "");
  read_field(root, "out", cfg.out, "");
  if (cfg.precision != "f32" && cfg.precision != "f64")
    throw ParseError("config: 'precision' must be \"f32\" or \"f64\"");

  if (root.contains("scenes")) parse_scenes(root.at("scenes"), cfg.scenes, "scenes.");

  if (root.contains("detector")) {
    const json& d = root.at("detector");
    expect_keys(d, {"depth", "hidden", "c1", "c2"}, "detector.");
    read_field(d, "depth", cfg.detector.depth, "detector.");
    read_field(d, "hidden", cfg.detector.hidden, "detector.");
    read_field(d, "c1", cfg.detector.c1, "detector.");
    read_field(d, "c2", cfg.detector.c2, "detector.");
  }
  if (root.contains("amsd")) {
    const json& a = root.at("amsd");
    expect_keys(a,
                {"lambda", "mu", "learning_rate", "batch_size", "pretrain_epochs",
                 "finetune_epochs", "disentangle_cls", "disentangle_reg", "momentum", "lr_decay",
                 "decay_at"},
                "amsd.");
    read_field(a, "lambda", cfg.amsd.lambda, "amsd.");
    read_field(a, "mu", cfg.amsd.mu, "amsd.");
    read_field(a, "learning_rate", cfg.amsd.learning_rate, "amsd.");
    read_field(a, "batch_size", cfg.amsd.batch_size, "amsd.");
    read_field(a, "pretrain_epochs", cfg.amsd.pretrain_epochs, "amsd.");
    read_field(a, "finetune_epochs", cfg.amsd.finetune_epochs, "amsd.");
    read_field(a, "disentangle_cls", cfg.amsd.disentangle_cls, "amsd.");
    read_field(a, "disentangle_reg", cfg.amsd.disentangle_reg, "amsd.");
    read_field(a, "momentum", cfg.amsd.momentum, "amsd.");
    read_field(a, "lr_decay", cfg.amsd.lr_decay, "amsd.");
    read_field(a, "decay_at", cfg.amsd.decay_at, "amsd.");
  }
  if (root.contains("htrm")) {
    const json& h = root.at("htrm");
    expect_keys(h, {"k_prime", "gamma", "beta", "image_level", "count_unique_queries",
                    "k_prime_sweep"},
                "htrm.");
    read_field(h, "k_prime", cfg.htrm.k_prime, "htrm.");
    read_field(h, "gamma", cfg.htrm.gamma, "htrm.");
    read_field(h, "beta", cfg.htrm.beta, "htrm.");
    read_field(h, "image_level", cfg.htrm.image_level, "htrm.");
    read_field(h, "count_unique_queries", cfg.htrm.count_unique_queries, "htrm.");
    read_field(h, "k_prime_sweep", cfg.htrm.k_prime_sweep, "htrm.");
  }
  if (root.contains("distill")) {
    const json& d = root.at("distill");
    expect_keys(d,
                {"confidence_threshold", "ema", "epochs", "learning_rate", "batch_size",
                 "momentum", "lr_decay", "decay_at", "nms_iou"},
                "distill.");
    read_field(d, "confidence_threshold", cfg.distill.confidence_threshold, "distill.");
    read_field(d, "ema", cfg.distill.ema, "distill.");
    read_field(d, "epochs", cfg.distill.epochs, "distill.");
    read_field(d, "learning_rate", cfg.distill.learning_rate, "distill.");
    read_field(d, "batch_size", cfg.distill.batch_size, "distill.");
    read_field(d, "momentum", cfg.distill.momentum, "distill.");
    read_field(d, "lr_decay", cfg.distill.lr_decay, "distill.");
    read_field(d, "decay_at", cfg.distill.decay_at, "distill.");
    read_field(d, "nms_iou", cfg.distill.nms_iou, "distill.");
  }
  if (root.contains("eval")) {
    const json& e = root.at("eval");
    expect_keys(e, {"score_threshold", "nms_iou", "match_iou"}, "eval.");
    read_field(e, "score_threshold", cfg.eval.score_threshold, "eval.");
    read_field(e, "nms_iou", cfg.eval.nms_iou, "eval.");
    read_field(e, "match_iou", cfg.eval.match_iou, "eval.");
  }
  if (root.contains("pipeline")) {
    const json& p = root.at("pipeline");
    expect_keys(p, {"use_amsd", "use_htrm"}, "pipeline.");
    read_field(p, "use_amsd", cfg.pipeline.use_amsd, "pipeline.");
    read_field(p, "use_htrm", cfg.pipeline.use_htrm, "pipeline.");
  }

  if (cfg.scenes.target.weights.size() != cfg.scenes.sources.size())
    throw ParseError("config: scenes.target.weights must have one entry per source");
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path);
}

std::string dump_config(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["precision"] = cfg.precision;
  j["out"] = cfg.out;
  json sources = json::array();
  for (const SourceEntry& s : cfg.scenes.sources) {
    json e;
    e["domain_id"] = s.domain_id;
    e["intensity_offset"] = s.intensity_offset;
    e["noise_sigma"] = s.noise_sigma;
    e["object_scale"] = s.object_scale;
    std::vector<double> prior = s.class_prior;
    if (prior.empty())
      prior.assign(static_cast<std::size_t>(cfg.scenes.classes),
                   1.0 / cfg.scenes.classes);
    e["class_prior"] = prior;
    e["train"] = s.train;
    e["heldout"] = s.heldout;
    sources.push_back(e);
  }
  j["scenes"] = {{"image_size", cfg.scenes.image_size},
                 {"classes", cfg.scenes.classes},
                 {"sources", sources},
                 {"target",
                  {{"weights", cfg.scenes.target.weights},
                   {"train", cfg.scenes.target.train},
                   {"eval", cfg.scenes.target.eval}}}};
  j["detector"] = {{"depth", cfg.detector.depth},
                   {"hidden", cfg.detector.hidden},
                   {"c1", cfg.detector.c1},
                   {"c2", cfg.detector.c2}};
  j["amsd"] = {{"lambda", cfg.amsd.lambda},
               {"mu", cfg.amsd.mu},
               {"learning_rate", cfg.amsd.learning_rate},
               {"batch_size", cfg.amsd.batch_size},
               {"pretrain_epochs", cfg.amsd.pretrain_epochs},
               {"finetune_epochs", cfg.amsd.finetune_epochs},
               {"disentangle_cls", cfg.amsd.disentangle_cls},
               {"disentangle_reg", cfg.amsd.disentangle_reg},
               {"momentum", cfg.amsd.momentum},
               {"lr_decay", cfg.amsd.lr_decay},
               {"decay_at", cfg.amsd.decay_at}};
  j["htrm"] = {{"k_prime", cfg.htrm.k_prime},
               {"gamma", cfg.htrm.gamma},
               {"beta", cfg.htrm.beta},
               {"image_level", cfg.htrm.image_level},
               {"count_unique_queries", cfg.htrm.count_unique_queries},
               {"k_prime_sweep", cfg.htrm.k_prime_sweep}};
  j["distill"] = {{"confidence_threshold", cfg.distill.confidence_threshold},
                  {"ema", cfg.distill.ema},
                  {"epochs", cfg.distill.epochs},
                  {"learning_rate", cfg.distill.learning_rate},
                  {"batch_size", cfg.distill.batch_size},
                  {"momentum", cfg.distill.momentum},
                  {"lr_decay", cfg.distill.lr_decay},
                  {"decay_at", cfg.distill.decay_at},
                  {"nms_iou", cfg.distill.nms_iou}};
  j["eval"] = {{"score_threshold", cfg.eval.score_threshold},
               {"nms_iou", cfg.eval.nms_iou},
               {"match_iou", cfg.eval.match_iou}};
  j["pipeline"] = {{"use_amsd", cfg.pipeline.use_amsd}, {"use_htrm", cfg.pipeline.use_htrm}};
  return j.dump(2);
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = dump_config(cfg);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

DetectorLayout layout_from(const ExperimentConfig& cfg) {
  DetectorLayout lay;
  lay.image_h = cfg.scenes.image_size;
  lay.image_w = cfg.scenes.image_size;
  lay.classes = cfg.scenes.classes;
  lay.depth = cfg.detector.depth;
  lay.c1 = cfg.detector.c1;
  lay.c2 = cfg.detector.c2;
  lay.hidden = cfg.detector.hidden;
  return lay;
}

std::vector<DomainSpec> source_specs(const ExperimentConfig& cfg) {
  std::vector<DomainSpec> specs;
  for (std::size_t k = 0; k < cfg.scenes.sources.size(); ++k) {
    const SourceEntry& e = cfg.scenes.sources[k];
    DomainSpec s;
    s.domain_id = e.domain_id;
    s.intensity_offset = e.intensity_offset;
    s.noise_sigma = e.noise_sigma;
    s.object_scale = e.object_scale;
    s.class_prior = e.class_prior;
    if (s.class_prior.empty())
      s.class_prior.assign(static_cast<std::size_t>(cfg.scenes.classes),
                           1.0 / cfg.scenes.classes);
    s.seed = splitmix64(cfg.seed) ^ (rng_stream::kDomainBase + k);
    s.image_h = cfg.scenes.image_size;
    s.image_w = cfg.scenes.image_size;
    specs.push_back(std::move(s));
  }
  return specs;
}

MixtureSpec target_spec(const ExperimentConfig& cfg) {
  MixtureSpec mix;
  mix.domain_id = "target";
  mix.components = source_specs(cfg);
  mix.weights = cfg.scenes.target.weights;
  mix.seed = splitmix64(cfg.seed) ^ (rng_stream::kDomainBase + 999);
  return mix;
}

AmsdConfig amsd_config(const ExperimentConfig& cfg, bool pretrain_phase, bool adversarial) {
  AmsdConfig a;
  a.lambda = adversarial ? cfg.amsd.lambda : 0.0;
  a.mu = cfg.amsd.mu;
  a.learning_rate = cfg.amsd.learning_rate;
  a.batch_size = cfg.amsd.batch_size;
  a.epochs = pretrain_phase ? cfg.amsd.pretrain_epochs : cfg.amsd.finetune_epochs;
  a.disentangle_cls = cfg.amsd.disentangle_cls;
  a.disentangle_reg = cfg.amsd.disentangle_reg;
  a.momentum = cfg.amsd.momentum;
  a.lr_decay = cfg.amsd.lr_decay;
  a.decay_at = cfg.amsd.decay_at;
  a.seed = splitmix64(cfg.seed) ^ (pretrain_phase ? 11u : 12u);
  return a;
}

HtrmConfig htrm_config(const ExperimentConfig& cfg) {
  HtrmConfig h;
  h.k_prime = cfg.htrm.k_prime;
  h.gamma = cfg.htrm.gamma;
  h.beta = cfg.htrm.beta;
  h.image_level = cfg.htrm.image_level;
  h.count_unique_queries = cfg.htrm.count_unique_queries;
  return h;
}

DistillConfig distill_config(const ExperimentConfig& cfg) {
  DistillConfig d;
  d.confidence_threshold = cfg.distill.confidence_threshold;
  d.ema = cfg.distill.ema;
  d.epochs = cfg.distill.epochs;
  d.learning_rate = cfg.distill.learning_rate;
  d.batch_size = cfg.distill.batch_size;
  d.momentum = cfg.distill.momentum;
  d.lr_decay = cfg.distill.lr_decay;
  d.decay_at = cfg.distill.decay_at;
  d.nms_iou = cfg.distill.nms_iou;
  d.seed = splitmix64(cfg.seed) ^ 13u;
  return d;
}

EvalSettings eval_settings(const ExperimentConfig& cfg) {
  EvalSettings e;
  e.score_threshold = cfg.eval.score_threshold;
  e.nms_iou = cfg.eval.nms_iou;
  e.match_iou = cfg.eval.match_iou;
  return e;
}

}  // namespace trkp
