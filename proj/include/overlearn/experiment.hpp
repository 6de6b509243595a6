#pragma once

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "overlearn/analysis.hpp"
#include "overlearn/attack.hpp"
#include "overlearn/censor.hpp"
#include "overlearn/common.hpp"
#include "overlearn/dataset.hpp"
#include "overlearn/model.hpp"
#include "overlearn/toml.hpp"

namespace overlearn {

struct CensorRun {
  std::string name;  // condition label in the report, e.g. "ADV", "IT"
  CensorConfig config;
  int epochs = 50;
};

struct ExperimentConfig {
  // data
  ContingencySpec spec;
  std::size_t n = 4000;
  int feature_dim = 32;
  double noise_scale = 0.1;
  double train_frac = 0.8;
  double aux_frac = 0.5;
  bool aux_from_train = true;
  // model
  std::vector<int> hidden{128, 32};
  // training
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 1e-3;
  // censoring conditions, in report order
  std::vector<CensorRun> censors;
  // attacks
  bool run_infer = true;
  bool run_decensor = true;
  int attack_epochs = 50;
  int probe_layer = -1;  // -1 selects the deepest encoder layer
  std::vector<double> repurpose_fractions;
  int repurpose_epochs = 50;
  int repurpose_batch = 32;
  // analysis
  bool run_cka = true;
  // run
  std::vector<std::uint64_t> seeds{1};

  static ExperimentConfig from_toml(const TomlDoc& doc);

  /// Stable textual form; the report's config_digest hashes this, so a
  /// reworded config file with identical settings digests identically.
  std::string canonical_string() const {
    std::ostringstream o;
    o << "task_classes=" << spec.num_task_classes
      << ";attr_classes=" << spec.num_attr_classes << ";joint=";
    for (Eigen::Index i = 0; i < spec.joint.size(); ++i)
      o << format_double(spec.joint(i / spec.joint.cols(), i % spec.joint.cols())) << ",";
    o << ";n=" << n << ";feature_dim=" << feature_dim
      << ";noise=" << format_double(noise_scale)
      << ";train_frac=" << format_double(train_frac)
      << ";aux_frac=" << format_double(aux_frac) << ";aux_from_train=" << aux_from_train
      << ";hidden=";
    for (int w : hidden) o << w << ",";
    o << ";epochs=" << epochs << ";batch=" << batch_size
      << ";lr=" << format_double(learning_rate) << ";censors=";
    for (const auto& c : censors)
      o << c.name << ":" << censor_method_name(c.config.method) << ":"
        << format_double(c.config.gamma) << ":" << format_double(c.config.beta) << ":"
        << format_double(c.config.lambda) << ":" << c.config.target_layer << ":"
        << c.epochs << ",";
    o << ";infer=" << run_infer << ";decensor=" << run_decensor
      << ";attack_epochs=" << attack_epochs << ";probe_layer=" << probe_layer
      << ";fractions=";
    for (double f : repurpose_fractions) o << format_double(f) << ",";
    o << ";repurpose_epochs=" << repurpose_epochs << ";repurpose_batch=" << repurpose_batch
      << ";cka=" << run_cka << ";seeds=";
    for (auto s : seeds) o << s << ",";
    return o.str();
  }

  std::string digest() const { return hex64(fnv1a64(canonical_string())); }
};

inline ExperimentConfig ExperimentConfig::from_toml(const TomlDoc& doc) {
  ExperimentConfig c;
  const int ky = static_cast<int>(doc.integer_or("data", "task_classes", 2));
  const int ks = static_cast<int>(doc.integer_or("data", "attr_classes", 4));
  if (!doc.has("data", "joint") || doc.is_string("data", "joint")) {
    const std::string joint = doc.string_or("data", "joint", "uniform");
    if (joint == "uniform") {
      c.spec = ContingencySpec::uniform(ky, ks);
    } else if (joint == "diagonal") {
      if (ky != ks) throw ParseError("config: diagonal joint needs equal class counts");
      c.spec = ContingencySpec::diagonal(ky);
    } else {
      throw ParseError("config: joint must be \"uniform\", \"diagonal\" or a cell array");
    }
  } else {
    const auto cells = doc.numbers("data", "joint");  // row-major
    if (static_cast<int>(cells.size()) != ky * ks)
      throw ParseError("config: joint must have task_classes*attr_classes cells");
    c.spec.num_task_classes = ky;
    c.spec.num_attr_classes = ks;
    c.spec.joint = Matrix(ky, ks);
    for (int i = 0; i < ky; ++i)
      for (int j = 0; j < ks; ++j)
        c.spec.joint(i, j) = cells[static_cast<std::size_t>(i * ks + j)];
  }
  c.spec.validate();
  c.n = static_cast<std::size_t>(doc.integer_or("data", "n", 4000));
  c.feature_dim = static_cast<int>(doc.integer_or("data", "feature_dim", 32));
  c.noise_scale = doc.number_or("data", "noise_scale", 0.1);
  c.train_frac = doc.number_or("data", "train_frac", 0.8);
  c.aux_frac = doc.number_or("data", "aux_frac", 0.5);
  c.aux_from_train = doc.boolean_or("data", "aux_from_train", true);

  c.hidden.clear();
  for (double w : doc.numbers_or("model", "hidden", {128, 32}))
    c.hidden.push_back(static_cast<int>(w));

  c.epochs = static_cast<int>(doc.integer_or("train", "epochs", 30));
  c.batch_size = static_cast<int>(doc.integer_or("train", "batch_size", 128));
  c.learning_rate = doc.number_or("train", "learning_rate", 1e-3);

  if (doc.has_section("censor.adversarial")) {
    CensorRun r;
    r.name = "ADV";
    r.config.method = CensorMethod::adversarial;
    r.config.gamma = doc.number_or("censor.adversarial", "gamma", 1.0);
    r.config.target_layer =
        static_cast<int>(doc.integer_or("censor.adversarial", "target_layer", -1));
    r.epochs = static_cast<int>(doc.integer_or("censor.adversarial", "epochs", 50));
    c.censors.push_back(r);
  }
  if (doc.has_section("censor.info_theoretic")) {
    CensorRun r;
    r.name = "IT";
    r.config.method = CensorMethod::info_theoretic;
    r.config.beta = doc.number_or("censor.info_theoretic", "beta", 0.01);
    r.config.lambda = doc.number_or("censor.info_theoretic", "lambda", 1e-4);
    r.config.target_layer =
        static_cast<int>(doc.integer_or("censor.info_theoretic", "target_layer", -1));
    r.epochs = static_cast<int>(doc.integer_or("censor.info_theoretic", "epochs", 30));
    c.censors.push_back(r);
  }

  c.run_infer = doc.boolean_or("attacks", "infer", true);
  c.run_decensor = doc.boolean_or("attacks", "decensor", true);
  c.attack_epochs = static_cast<int>(doc.integer_or("attacks", "epochs", 50));
  c.probe_layer = static_cast<int>(doc.integer_or("attacks", "layer", -1));
  c.repurpose_fractions = doc.numbers_or("attacks", "repurpose_fractions", {});
  for (double f : c.repurpose_fractions)
    if (!(f > 0.0 && f <= 1.0))
      throw ParseError("config: repurpose fractions must be in (0, 1]");
  c.repurpose_epochs = static_cast<int>(doc.integer_or("attacks", "repurpose_epochs", 50));
  c.repurpose_batch = static_cast<int>(doc.integer_or("attacks", "repurpose_batch", 32));

  c.run_cka = doc.boolean_or("analysis", "cka", true);

  c.seeds.clear();
  for (double s : doc.numbers_or("run", "seeds", {1}))
    c.seeds.push_back(static_cast<std::uint64_t>(s));
  if (c.seeds.empty()) throw ParseError("config: need at least one seed");
  return c;
}

// --- report ---

struct ConditionReport {
  std::string name;
  double task_acc = std::nan("");
  double attr_acc = std::nan("");
  double rand_task = std::nan("");
  double rand_attr = std::nan("");
};

struct DecensorReport {
  std::string condition;
  double acc = std::nan("");
  double delta = std::nan("");  // acc - direct inference acc on the same reps
};

struct RepurposeReport {
  double fraction = 0.0;
  int layer = 0;
  double repurposed_acc = std::nan("");
  double scratch_acc = std::nan("");
  double delta = std::nan("");
};

struct CkaReport {
  std::string pair;
  CKAMatrix matrix;       // seed-averaged, missing cells NaN
  std::string csv_path;   // filled by write_report
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::string condition;
  double task_acc = std::nan("");
  double attr_acc = std::nan("");
  std::string checkpoint_hash;  // model id of the audited checkpoint
  int layer = 0;
};

struct FailureRecord {
  std::uint64_t seed = 0;
  std::string condition;
  std::string stage;
  std::string error;
};

struct AuditReport {
  std::string config_digest;
  double cramers_v_ys = std::nan("");
  std::vector<ConditionReport> conditions;
  std::vector<DecensorReport> decensor;
  std::vector<RepurposeReport> repurpose;
  std::vector<CkaReport> cka;
  std::vector<std::uint64_t> seeds;
  std::vector<RunRecord> runs;
  std::vector<FailureRecord> failures;
  double wall_clock_s = 0.0;
};

inline double nan_mean(const std::vector<double>& xs) {
  double sum = 0.0;
  std::size_t k = 0;
  for (double x : xs)
    if (!std::isnan(x)) {
      sum += x;
      ++k;
    }
  return k == 0 ? std::nan("") : sum / static_cast<double>(k);
}

namespace detail {

struct SeedOutcome {
  double cramers_v = std::nan("");
  double rand_task = std::nan(""), rand_attr = std::nan("");
  // keyed by condition name, NaN when the stage failed
  std::map<std::string, double> task_acc, attr_acc;
  std::map<std::string, std::string> checkpoint;
  std::map<std::string, double> decensor_acc, decensor_delta;
  std::map<double, std::pair<double, double>> repurpose_acc;  // fraction -> (repurposed, scratch)
  std::map<std::string, CKAMatrix> cka;  // pair name -> heatmap
  std::vector<FailureRecord> failures;
};

}  // namespace detail

/// Full audit for one seed: generate, split, train baseline and censored
/// models, probe every condition with the inference attack, de-censor the
/// censored ones, run re-purposing at each transfer fraction and collect
/// similarity statistics.
inline detail::SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  detail::SeedOutcome out;
  const int probe_layer =
      cfg.probe_layer < 0 ? static_cast<int>(cfg.hidden.size()) : cfg.probe_layer;
  if (probe_layer < 0 || probe_layer > static_cast<int>(cfg.hidden.size()))
    throw ValidationError("probe layer out of range for the configured architecture");

  auto examples = generate_examples(cfg.spec, cfg.n, cfg.feature_dim, cfg.noise_scale,
                                    seed_stream(seed, "data"));
  std::vector<double> split_fracs;
  for (double f : cfg.repurpose_fractions)
    if (f < 1.0) split_fracs.push_back(f);
  SplitOptions opts;
  opts.aux_from_train = cfg.aux_from_train;
  DatasetBundle bundle =
      split(examples, cfg.train_frac, cfg.aux_frac, split_fracs, seed_stream(seed, "split"), opts);
  bundle.meta.num_task_classes = cfg.spec.num_task_classes;
  bundle.meta.num_attr_classes = cfg.spec.num_attr_classes;

  out.cramers_v = cramers_v(task_labels(examples), attr_labels(examples)).cramers_v;
  out.rand_task = majority_baseline(task_labels(bundle.test));
  out.rand_attr = majority_baseline(attr_labels(bundle.test));
  out.task_acc["RAND"] = out.rand_task;
  out.attr_acc["RAND"] = out.rand_attr;
  out.checkpoint["RAND"] = "";

  const std::vector<int> probe_attrs = attr_labels(bundle.test);

  auto attack_condition = [&](const std::string& name, const ModelBundle& model,
                              const std::string& censor_method) {
    out.task_acc[name] = task_accuracy(model, bundle.test);
    out.checkpoint[name] = model_id(model);
    if (!cfg.run_infer) return;
    try {
      const auto oracle = make_oracle(model, probe_layer, censor_method);
      const auto probe = extract_representations(model, probe_layer, bundle.test, censor_method);
      TrainConfig acfg;
      acfg.epochs = cfg.attack_epochs;
      acfg.batch_size = cfg.batch_size;
      acfg.learning_rate = cfg.learning_rate;
      acfg.seed = seed_stream(seed, "attack-" + name);
      const auto res = infer_attribute(bundle.aux, oracle, probe, probe_attrs, acfg);
      out.attr_acc[name] = res.accuracy;

      if (cfg.run_decensor && censor_method != "none") {
        TrainConfig dcfg = acfg;
        dcfg.seed = seed_stream(seed, "decensor-" + name);
        const auto dres = decensor_attack(bundle.aux, oracle, probe, probe_attrs, dcfg,
                                          cfg.hidden);
        out.decensor_acc[name] = dres.accuracy;
        out.decensor_delta[name] = dres.accuracy - res.accuracy;
      }
    } catch (const std::exception& e) {
      out.failures.push_back(FailureRecord{seed, name, "attack", e.what()});
    }
  };

  // BASE: the uncensored task model.
  ModelBundle base_model;
  bool have_base = false;
  try {
    TrainConfig tcfg;
    tcfg.epochs = cfg.epochs;
    tcfg.batch_size = cfg.batch_size;
    tcfg.learning_rate = cfg.learning_rate;
    tcfg.seed = seed_stream(seed, "train-BASE");
    base_model = train_task(build_model(cfg.feature_dim, cfg.hidden, cfg.spec.num_task_classes,
                                        seed_stream(seed, "model-BASE")),
                            bundle, tcfg);
    have_base = true;
    attack_condition("BASE", base_model, "none");
  } catch (const std::exception& e) {
    out.failures.push_back(FailureRecord{seed, "BASE", "train", e.what()});
  }

  // Censored conditions.
  for (const auto& run : cfg.censors) {
    try {
      TrainConfig tcfg;
      tcfg.epochs = run.epochs;
      tcfg.batch_size = cfg.batch_size;
      tcfg.learning_rate = cfg.learning_rate;
      tcfg.seed = seed_stream(seed, "train-" + run.name);
      ModelBundle cond_model;
      if (run.config.method == CensorMethod::adversarial) {
        auto start = build_model(cfg.feature_dim, cfg.hidden, cfg.spec.num_task_classes,
                                 seed_stream(seed, "model-" + run.name));
        cond_model = train_adversarial_censored(bundle, std::move(start), run.config, tcfg).model;
      } else if (run.config.method == CensorMethod::info_theoretic) {
        cond_model = train_it_censored(bundle, cfg.hidden, run.config, tcfg).model.to_model_bundle();
      } else {
        throw ValidationError("censor condition '" + run.name + "' has method none");
      }
      attack_condition(run.name, cond_model, censor_method_name(run.config.method));
      if (cfg.run_cka && have_base) {
        out.cka["BASE_vs_" + run.name] = cka_heatmap(base_model, cond_model, bundle.test);
      }
    } catch (const std::exception& e) {
      out.failures.push_back(FailureRecord{seed, run.name, "censor-train", e.what()});
    }
  }

  // Re-purposing vs scratch at each transfer fraction, deepest layer.
  if (have_base) {
    for (double f : cfg.repurpose_fractions) {
      try {
        const std::vector<LabeledExample>* transfer = nullptr;
        if (f == 1.0) {
          transfer = &bundle.train;
        } else {
          for (const auto& [frac, subset] : bundle.transfer)
            if (frac == f) transfer = &subset;
        }
        if (!transfer || transfer->empty())
          throw ValidationError("no transfer subset for fraction " + format_double(f));
        TrainConfig rcfg;
        rcfg.epochs = cfg.repurpose_epochs;
        rcfg.batch_size = cfg.repurpose_batch;
        rcfg.learning_rate = cfg.learning_rate;
        rcfg.seed = seed_stream(seed, "repurpose-" + format_double(f));
        const auto rep = repurpose(base_model, base_model.num_layers(), *transfer,
                                   bundle.test, rcfg);
        const auto scr = scratch_baseline(*transfer, cfg.hidden, bundle.test, rcfg);
        out.repurpose_acc[f] = {rep.accuracy, scr.accuracy};
      } catch (const std::exception& e) {
        out.failures.push_back(FailureRecord{seed, "BASE", "repurpose", e.what()});
      }
    }
  }
  return out;
}

/// Executes the configured pipeline for every seed and aggregates the
/// per-seed outcomes by arithmetic mean (per-seed values are retained in
/// `runs`). Deterministic given the config.
inline AuditReport run_experiment(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  AuditReport report;
  report.config_digest = cfg.digest();
  report.seeds = cfg.seeds;

  std::vector<detail::SeedOutcome> outcomes;
  for (std::uint64_t seed : cfg.seeds) outcomes.push_back(run_seed(cfg, seed));

  std::vector<std::string> condition_names{"RAND", "BASE"};
  for (const auto& c : cfg.censors) condition_names.push_back(c.name);

  const int probe_layer =
      cfg.probe_layer < 0 ? static_cast<int>(cfg.hidden.size()) : cfg.probe_layer;

  std::vector<double> vs;
  for (const auto& o : outcomes) vs.push_back(o.cramers_v);
  report.cramers_v_ys = nan_mean(vs);

  auto collect = [&](const std::string& name, auto getter) {
    std::vector<double> acc;
    for (const auto& o : outcomes) {
      const auto& m = getter(o);
      const auto it = m.find(name);
      acc.push_back(it == m.end() ? std::nan("") : it->second);
    }
    return nan_mean(acc);
  };

  for (const auto& name : condition_names) {
    ConditionReport c;
    c.name = name;
    c.task_acc = collect(name, [](const detail::SeedOutcome& o) -> const std::map<std::string, double>& { return o.task_acc; });
    c.attr_acc = collect(name, [](const detail::SeedOutcome& o) -> const std::map<std::string, double>& { return o.attr_acc; });
    {
      std::vector<double> rt, ra;
      for (const auto& o : outcomes) {
        rt.push_back(o.rand_task);
        ra.push_back(o.rand_attr);
      }
      c.rand_task = nan_mean(rt);
      c.rand_attr = nan_mean(ra);
    }
    report.conditions.push_back(c);

    for (std::size_t si = 0; si < outcomes.size(); ++si) {
      const auto& o = outcomes[si];
      if (!o.task_acc.count(name)) continue;
      RunRecord r;
      r.seed = cfg.seeds[si];
      r.condition = name;
      r.task_acc = o.task_acc.at(name);
      r.attr_acc = o.attr_acc.count(name) ? o.attr_acc.at(name) : std::nan("");
      r.checkpoint_hash = o.checkpoint.count(name) ? o.checkpoint.at(name) : "";
      r.layer = probe_layer;
      report.runs.push_back(r);
    }
  }

  for (const auto& c : cfg.censors) {
    if (!cfg.run_decensor || !cfg.run_infer) break;
    DecensorReport d;
    d.condition = c.name;
    d.acc = collect(c.name, [](const detail::SeedOutcome& o) -> const std::map<std::string, double>& { return o.decensor_acc; });
    d.delta = collect(c.name, [](const detail::SeedOutcome& o) -> const std::map<std::string, double>& { return o.decensor_delta; });
    report.decensor.push_back(d);
  }

  for (double f : cfg.repurpose_fractions) {
    RepurposeReport r;
    r.fraction = f;
    r.layer = static_cast<int>(cfg.hidden.size());
    std::vector<double> rep, scr;
    for (const auto& o : outcomes) {
      const auto it = o.repurpose_acc.find(f);
      rep.push_back(it == o.repurpose_acc.end() ? std::nan("") : it->second.first);
      scr.push_back(it == o.repurpose_acc.end() ? std::nan("") : it->second.second);
    }
    r.repurposed_acc = nan_mean(rep);
    r.scratch_acc = nan_mean(scr);
    r.delta = r.repurposed_acc - r.scratch_acc;
    report.repurpose.push_back(r);
  }

  if (cfg.run_cka) {
    for (const auto& c : cfg.censors) {
      const std::string pair = "BASE_vs_" + c.name;
      CkaReport ck;
      ck.pair = pair;
      bool any = false;
      Matrix sum, count;
      for (const auto& o : outcomes) {
        const auto it = o.cka.find(pair);
        if (it == o.cka.end()) continue;
        const CKAMatrix& m = it->second;
        if (!any) {
          sum = Matrix::Zero(m.values.rows(), m.values.cols());
          count = Matrix::Zero(m.values.rows(), m.values.cols());
          ck.matrix = m;
          any = true;
        }
        for (Eigen::Index i = 0; i < m.values.rows(); ++i)
          for (Eigen::Index j = 0; j < m.values.cols(); ++j)
            if (!m.missing(i, j)) {
              sum(i, j) += m.values(i, j);
              count(i, j) += 1.0;
            }
      }
      if (any) {
        for (Eigen::Index i = 0; i < sum.rows(); ++i)
          for (Eigen::Index j = 0; j < sum.cols(); ++j)
            ck.matrix.values(i, j) = count(i, j) > 0 ? sum(i, j) / count(i, j) : std::nan("");
        ck.matrix.model_a_id = "mean-over-seeds";
        ck.matrix.model_b_id = "mean-over-seeds";
        report.cka.push_back(std::move(ck));
      }
    }
  }

  for (const auto& o : outcomes)
    for (const auto& f : o.failures) report.failures.push_back(f);

  report.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline Json report_to_json(const AuditReport& r, bool include_wall_clock = true) {
  Json j;
  j["schema_version"] = 1;
  j["config_digest"] = r.config_digest;
  j["cramers_v"] = r.cramers_v_ys;
  j["conditions"] = Json::array();
  for (const auto& c : r.conditions)
    j["conditions"].push_back({{"name", c.name},
                               {"task_acc", c.task_acc},
                               {"attr_acc", c.attr_acc},
                               {"rand_task", c.rand_task},
                               {"rand_attr", c.rand_attr}});
  j["decensor"] = Json::array();
  for (const auto& d : r.decensor)
    j["decensor"].push_back({{"condition", d.condition}, {"acc", d.acc}, {"delta", d.delta}});
  j["repurpose"] = Json::array();
  for (const auto& p : r.repurpose)
    j["repurpose"].push_back({{"fraction", p.fraction},
                              {"layer", p.layer},
                              {"repurposed_acc", p.repurposed_acc},
                              {"scratch_acc", p.scratch_acc},
                              {"delta", p.delta}});
  j["cka"] = Json::array();
  for (const auto& c : r.cka)
    j["cka"].push_back({{"pair", c.pair}, {"csv_path", c.csv_path}});
  j["seeds"] = r.seeds;
  if (include_wall_clock) j["wall_clock_s"] = r.wall_clock_s;
  j["aggregation"] = "arithmetic mean over seeds; per-seed values under 'runs'";
  j["runs"] = Json::array();
  for (const auto& run : r.runs)
    j["runs"].push_back({{"seed", run.seed},
                         {"condition", run.condition},
                         {"task_acc", run.task_acc},
                         {"attr_acc", run.attr_acc},
                         {"checkpoint_hash", run.checkpoint_hash},
                         {"layer", run.layer}});
  j["failures"] = Json::array();
  for (const auto& f : r.failures)
    j["failures"].push_back({{"seed", f.seed},
                             {"condition", f.condition},
                             {"stage", f.stage},
                             {"error", f.error}});
  return j;
}

/// Writes report.json plus one CSV per CKA pair into out_dir; returns the
/// report path.
inline std::string write_report(AuditReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (auto& c : report.cka) {
    std::string name = "cka_" + c.pair + ".csv";
    for (auto& ch : name) ch = ch == ' ' ? '_' : static_cast<char>(std::tolower(ch));
    c.matrix.to_csv((std::filesystem::path(out_dir) / name).string());
    c.csv_path = name;
  }
  const std::string path = (std::filesystem::path(out_dir) / "report.json").string();
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << report_to_json(report).dump(2) << "\n";
  return path;
}

}  // namespace overlearn
