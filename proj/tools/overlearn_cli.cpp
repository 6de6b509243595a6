// Command-line front end: generate data, train and censor models, run the
// inference/de-censoring/re-purposing attacks, compute CKA heatmaps and
// drive full config-based experiments.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "overlearn/overlearn.hpp"

namespace ol = overlearn;

namespace {

ol::ContingencySpec joint_from_flags(int task_classes, int attr_classes,
                                     const std::string& joint,
                                     const std::vector<double>& cells) {
  if (!cells.empty()) {
    if (static_cast<int>(cells.size()) != task_classes * attr_classes)
      throw ol::ValidationError("--joint-cells must have task*attr entries");
    ol::ContingencySpec s;
    s.num_task_classes = task_classes;
    s.num_attr_classes = attr_classes;
    s.joint = ol::Matrix(task_classes, attr_classes);
    for (int i = 0; i < task_classes; ++i)
      for (int j = 0; j < attr_classes; ++j)
        s.joint(i, j) = cells[static_cast<std::size_t>(i * attr_classes + j)];
    s.validate();
    return s;
  }
  if (joint == "diagonal") return ol::ContingencySpec::diagonal(task_classes);
  return ol::ContingencySpec::uniform(task_classes, attr_classes);
}

void add_train_flags(CLI::App* cmd, ol::TrainConfig& cfg, int epochs_default = 30,
                     int batch_default = 128) {
  cfg.epochs = epochs_default;
  cfg.batch_size = batch_default;
  cmd->add_option("--epochs", cfg.epochs, "training epochs");
  cmd->add_option("--batch-size", cfg.batch_size, "mini-batch size");
  cmd->add_option("--lr", cfg.learning_rate, "learning rate");
  cmd->add_option("--seed", cfg.seed, "training seed");
}

std::vector<int> parse_widths(const std::vector<int>& w) {
  return w.empty() ? std::vector<int>{128, 32} : w;
}

void print_report_table(const ol::Json& j) {
  std::printf("cramers_v(y,s) = %s\n", j.at("cramers_v").dump().c_str());
  std::printf("%-6s %10s %10s\n", "cond", "task_acc", "attr_acc");
  for (const auto& c : j.at("conditions"))
    std::printf("%-6s %10s %10s\n", c.at("name").get<std::string>().c_str(),
                c.at("task_acc").dump().c_str(), c.at("attr_acc").dump().c_str());
  for (const auto& d : j.at("decensor"))
    std::printf("decensor %-4s acc=%s delta=%s\n",
                d.at("condition").get<std::string>().c_str(), d.at("acc").dump().c_str(),
                d.at("delta").dump().c_str());
  for (const auto& p : j.at("repurpose"))
    std::printf("repurpose f=%-5s layer=%d repurposed=%s scratch=%s delta=%s\n",
                p.at("fraction").dump().c_str(), p.at("layer").get<int>(),
                p.at("repurposed_acc").dump().c_str(), p.at("scratch_acc").dump().c_str(),
                p.at("delta").dump().c_str());
  if (!j.at("failures").empty())
    std::printf("failures: %s\n", j.at("failures").dump().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"representation overlearning audit toolkit"};
  app.require_subcommand(1);

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "generate a synthetic (x, y, s) CSV");
  int g_task = 2, g_attr = 4, g_fdim = 32;
  std::size_t g_n = 4000;
  double g_noise = 0.5;
  std::uint64_t g_seed = 1;
  std::string g_joint = "uniform", g_out = "data.csv";
  std::vector<double> g_cells;
  gen->add_option("--task-classes", g_task);
  gen->add_option("--attr-classes", g_attr);
  gen->add_option("--n", g_n);
  gen->add_option("--feature-dim", g_fdim);
  gen->add_option("--noise", g_noise);
  gen->add_option("--seed", g_seed);
  gen->add_option("--joint", g_joint, "uniform|diagonal");
  gen->add_option("--joint-cells", g_cells, "explicit row-major joint probabilities");
  gen->add_option("--out", g_out)->required();

  // train
  auto* tr = app.add_subcommand("train", "train a task model on a dataset CSV");
  std::string t_data, t_out = "model.ckpt";
  std::vector<int> t_hidden;
  double t_train_frac = 0.8;
  tr->add_option("--data", t_data)->required();
  tr->add_option("--out", t_out);
  tr->add_option("--hidden", t_hidden, "encoder widths (default 128 32)");
  tr->add_option("--train-frac", t_train_frac);
  ol::TrainConfig t_cfg;
  add_train_flags(tr, t_cfg);

  // censor
  auto* cn = app.add_subcommand("censor", "train a censored model on a dataset CSV");
  std::string c_data, c_out = "censored.ckpt", c_method = "adversarial";
  std::vector<int> c_hidden;
  double c_gamma = 1.0, c_beta = 0.01, c_lambda = 1e-4, c_train_frac = 0.8;
  int c_layer = -1;
  cn->add_option("--data", c_data)->required();
  cn->add_option("--out", c_out);
  cn->add_option("--method", c_method, "adversarial|info_theoretic")->required();
  cn->add_option("--gamma", c_gamma);
  cn->add_option("--beta", c_beta);
  cn->add_option("--lambda", c_lambda);
  cn->add_option("--layer", c_layer, "censored layer (-1 = last)");
  cn->add_option("--hidden", c_hidden);
  cn->add_option("--train-frac", c_train_frac);
  ol::TrainConfig c_cfg;
  add_train_flags(cn, c_cfg, 50);

  // attack
  auto* at = app.add_subcommand("attack", "attribute inference from representations");
  std::string a_reps, a_labels, a_aux_reps, a_aux_labels, a_model, a_data, a_out;
  int a_layer = -1;
  double a_aux_frac = 0.5;
  at->add_option("--reps", a_reps, "probe representation CSV");
  at->add_option("--labels", a_labels, "probe attribute CSV");
  at->add_option("--aux-reps", a_aux_reps, "adversary representation CSV");
  at->add_option("--aux-labels", a_aux_labels, "adversary attribute CSV");
  at->add_option("--model", a_model, "checkpoint (alternative to rep CSVs)");
  at->add_option("--data", a_data, "dataset CSV for checkpoint mode");
  at->add_option("--layer", a_layer);
  at->add_option("--aux-frac", a_aux_frac);
  at->add_option("--out", a_out, "write attack summary JSON");
  ol::TrainConfig a_cfg;
  add_train_flags(at, a_cfg, 50);

  // decensor
  auto* dc = app.add_subcommand("decensor", "de-censoring attack on a censored checkpoint");
  std::string d_model, d_aux, d_probe;
  int d_layer = -1;
  dc->add_option("--model", d_model)->required();
  dc->add_option("--aux-data", d_aux, "aux dataset CSV (x, s)")->required();
  dc->add_option("--probe-data", d_probe, "probe dataset CSV")->required();
  dc->add_option("--layer", d_layer);
  ol::TrainConfig d_cfg;
  add_train_flags(dc, d_cfg, 50);

  // repurpose
  auto* rp = app.add_subcommand("repurpose", "fine-tune a checkpoint to predict s");
  std::string r_model, r_transfer, r_test;
  int r_layer = -1;
  bool r_freeze = false, r_scratch = false;
  rp->add_option("--model", r_model)->required();
  rp->add_option("--transfer", r_transfer, "transfer dataset CSV")->required();
  rp->add_option("--test", r_test, "evaluation dataset CSV")->required();
  rp->add_option("--layer", r_layer, "encoder layers to copy (-1 = all)");
  rp->add_flag("--freeze-encoder", r_freeze);
  rp->add_flag("--with-scratch", r_scratch, "also train the scratch baseline");
  ol::TrainConfig r_cfg;
  add_train_flags(rp, r_cfg, 50, 32);

  // cka
  auto* ck = app.add_subcommand("cka", "layer-pair CKA heatmap between two checkpoints");
  std::string k_a, k_b, k_data, k_out = "cka.csv";
  ck->add_option("--model-a", k_a)->required();
  ck->add_option("--model-b", k_b)->required();
  ck->add_option("--data", k_data)->required();
  ck->add_option("--out", k_out);

  // report
  auto* re = app.add_subcommand("report", "pretty-print a report.json");
  std::string e_in;
  re->add_option("--in", e_in)->required();

  // run
  auto* rn = app.add_subcommand("run", "full audit pipeline from a config file");
  std::string n_config, n_out = "out";
  rn->add_option("--config", n_config)->required();
  rn->add_option("--out", n_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // prints usage; exit 0 for --help, nonzero otherwise
  }

  try {
    if (*gen) {
      const auto spec = joint_from_flags(g_task, g_attr, g_joint, g_cells);
      const auto examples = ol::generate_examples(spec, g_n, g_fdim, g_noise, g_seed);
      ol::save_tabular(g_out, examples);
      const auto v = ol::cramers_v(ol::task_labels(examples), ol::attr_labels(examples));
      std::printf("wrote %zu examples to %s (cramers_v=%.4f)\n", examples.size(),
                  g_out.c_str(), v.cramers_v);
    } else if (*tr) {
      auto bundle = ol::load_tabular(t_data);
      bundle = ol::split(bundle.train, t_train_frac, 0.5, {}, ol::seed_stream(t_cfg.seed, "split"));
      auto model = ol::train_task(
          ol::build_model(bundle.meta.feature_dim, parse_widths(t_hidden),
                          bundle.meta.num_task_classes, ol::seed_stream(t_cfg.seed, "model")),
          bundle, t_cfg);
      ol::save_model(t_out, model);
      std::printf("task accuracy: train=%.4f test=%.4f -> %s\n",
                  ol::task_accuracy(model, bundle.train),
                  ol::task_accuracy(model, bundle.test), t_out.c_str());
    } else if (*cn) {
      auto bundle = ol::load_tabular(c_data);
      bundle = ol::split(bundle.train, c_train_frac, 0.5, {}, ol::seed_stream(c_cfg.seed, "split"));
      ol::CensorConfig ccfg;
      ccfg.target_layer = c_layer;
      ccfg.gamma = c_gamma;
      ccfg.beta = c_beta;
      ccfg.lambda = c_lambda;
      const auto widths = parse_widths(c_hidden);
      if (c_method == "adversarial") {
        ccfg.method = ol::CensorMethod::adversarial;
        auto res = ol::train_adversarial_censored(
            bundle,
            ol::build_model(bundle.meta.feature_dim, widths, bundle.meta.num_task_classes,
                            ol::seed_stream(c_cfg.seed, "model")),
            ccfg, c_cfg);
        ol::save_model(c_out, res.model,
                       ol::Json{{"kind", "censored_model"},
                                {"censor", ol::censor_config_to_json(ccfg)}});
        std::printf("adversarially censored model: test task=%.4f -> %s\n",
                    ol::task_accuracy(res.model, bundle.test), c_out.c_str());
      } else if (c_method == "info_theoretic") {
        ccfg.method = ol::CensorMethod::info_theoretic;
        auto res = ol::train_it_censored(bundle, widths, ccfg, c_cfg);
        ol::save_it_censored(c_out, res.model, ccfg);
        std::printf("it-censored model: test task=%.4f converged=%d -> %s\n",
                    ol::task_accuracy(res.model.to_model_bundle(), bundle.test),
                    res.task_improved_over_majority ? 1 : 0, c_out.c_str());
      } else {
        throw ol::ValidationError("unknown censor method '" + c_method + "'");
      }
    } else if (*at) {
      double acc = 0.0, baseline = 0.0;
      if (!a_model.empty()) {
        if (a_data.empty())
          throw ol::ValidationError("attack: --data is required with --model");
        auto bundle = ol::load_tabular(a_data);
        bundle = ol::split(bundle.train, 0.8, a_aux_frac, {},
                           ol::seed_stream(a_cfg.seed, "split"));
        const auto model = ol::load_model(a_model);
        const int layer = a_layer < 0 ? model.num_layers() : a_layer;
        const auto oracle = ol::make_oracle(model, layer);
        const auto probe = ol::extract_representations(model, layer, bundle.test);
        const auto res = ol::infer_attribute(bundle.aux, oracle, probe,
                                             ol::attr_labels(bundle.test), a_cfg);
        acc = res.accuracy;
        baseline = ol::majority_baseline(ol::attr_labels(bundle.test));
      } else {
        if (a_reps.empty() || a_labels.empty() || a_aux_reps.empty() || a_aux_labels.empty())
          throw ol::ValidationError(
              "attack: need --reps/--labels/--aux-reps/--aux-labels or --model/--data");
        const ol::Matrix probe = ol::read_matrix_csv(a_reps);
        const auto probe_s = ol::read_labels_csv(a_labels);
        const ol::Matrix aux = ol::read_matrix_csv(a_aux_reps);
        const auto aux_s = ol::read_labels_csv(a_aux_labels);
        if (aux.cols() != probe.cols())
          throw ol::ValidationError("attack: representation dims differ");
        const int classes = ol::max_label(aux_s, probe_s) + 1;
        auto net = ol::train_xy(ol::build_model(static_cast<int>(aux.cols()), {256, 128},
                                                classes, ol::seed_stream(a_cfg.seed, "attack")),
                                aux, aux_s, a_cfg);
        acc = ol::accuracy_of(ol::predict(net, probe), probe_s);
        baseline = ol::majority_baseline(probe_s);
      }
      std::printf("attack accuracy: %.4f (majority baseline %.4f)\n", acc, baseline);
      if (!a_out.empty()) {
        std::ofstream out(a_out);
        out << ol::Json{{"accuracy", acc}, {"majority_baseline", baseline}}.dump(2) << "\n";
      }
    } else if (*dc) {
      const auto model = ol::load_model(d_model);
      const int layer = d_layer < 0 ? model.num_layers() : d_layer;
      const auto j = ol::load_checkpoint_json(d_model);
      const std::string method =
          j.contains("censor") ? j.at("censor").at("method").get<std::string>() : "none";
      const auto aux = ol::load_tabular(d_aux).train;
      const auto probe = ol::load_tabular(d_probe).train;
      const auto oracle = ol::make_oracle(model, layer, method);
      const auto probe_reps = ol::extract_representations(model, layer, probe, method);
      const auto res = ol::decensor_attack(aux, oracle, probe_reps, ol::attr_labels(probe),
                                           d_cfg);
      std::printf("de-censored attack accuracy: %.4f (transform loss %.4g -> %.4g)\n",
                  res.accuracy, res.initial_transform_loss, res.final_transform_loss);
    } else if (*rp) {
      const auto model = ol::load_model(r_model);
      const auto transfer = ol::load_tabular(r_transfer).train;
      const auto test = ol::load_tabular(r_test).train;
      const int layer = r_layer < 0 ? model.num_layers() : r_layer;
      const auto res = ol::repurpose(model, layer, transfer, test, r_cfg, r_freeze);
      std::printf("repurposed (layer %d) attribute accuracy: %.4f\n", layer, res.accuracy);
      if (r_scratch) {
        const auto scr = ol::scratch_baseline(transfer, ol::encoder_widths(model), test, r_cfg);
        std::printf("scratch attribute accuracy: %.4f (delta %+.4f)\n", scr.accuracy,
                    res.accuracy - scr.accuracy);
      }
    } else if (*ck) {
      const auto ma = ol::load_model(k_a);
      const auto mb = ol::load_model(k_b);
      const auto examples = ol::load_tabular(k_data).train;
      auto heat = ol::cka_heatmap(ma, mb, examples);
      heat.to_csv(k_out);
      std::printf("wrote %ldx%ld CKA heatmap to %s\n", static_cast<long>(heat.values.rows()),
                  static_cast<long>(heat.values.cols()), k_out.c_str());
    } else if (*re) {
      std::ifstream in(e_in);
      if (!in) throw ol::ParseError("cannot open '" + e_in + "'");
      print_report_table(ol::Json::parse(in));
    } else if (*rn) {
      const auto cfg = ol::ExperimentConfig::from_toml(ol::TomlDoc::parse_file(n_config));
      auto report = ol::run_experiment(cfg);
      const std::string path = ol::write_report(report, n_out);
      std::printf("wrote %s\n", path.c_str());
      print_report_table(ol::report_to_json(report));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
