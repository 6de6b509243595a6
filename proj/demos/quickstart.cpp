// Minimal walkthrough: generate a synthetic bundle with statistically
// independent (y, s), train a task model on y only, then show that the
// last-layer representation still reveals s to an attack model.

#include <cstdio>

#include "overlearn/overlearn.hpp"

using namespace overlearn;

int main() {
  const auto spec = ContingencySpec::uniform(2, 4);
  const DatasetBundle bundle = generate_synthetic(spec, 2000, 32, 0.5, 42);

  const auto v = cramers_v(task_labels(bundle.train), attr_labels(bundle.train));
  std::printf("association of (y, s) in train: V = %.3f\n", v.cramers_v);

  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 7;
  const ModelBundle model =
      train_task(build_model(32, {128, 32}, 2, 1), bundle, cfg);
  std::printf("task accuracy on test: %.3f\n", task_accuracy(model, bundle.test));

  const int last = model.num_layers();
  const auto oracle = make_oracle(model, last);
  const auto probe = extract_representations(model, last, bundle.test);

  TrainConfig attack_cfg;
  attack_cfg.epochs = 30;
  attack_cfg.seed = 11;
  const auto result =
      infer_attribute(bundle.aux, oracle, probe, attr_labels(bundle.test), attack_cfg);
  std::printf("attribute inference from layer-%d reps: %.3f (majority %.3f)\n", last,
              result.accuracy, majority_baseline(attr_labels(bundle.test)));
  return 0;
}
