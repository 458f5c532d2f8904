// saligraph command-line front end.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "saligraph/dataset.hpp"
#include "saligraph/error.hpp"
#include "saligraph/experiment.hpp"
#include "saligraph/image_io.hpp"
#include "saligraph/model.hpp"
#include "saligraph/render.hpp"
#include "saligraph/saliency.hpp"

namespace fs = std::filesystem;
using namespace saligraph;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;

int cmd_run(const fs::path& config_path) {
  const ExperimentConfig config = load_config(config_path);
  const ExperimentResult result = run_experiment(config);
  std::size_t failures = 0;
  for (const ReportRow& row : result.rows) {
    const EvalRecord& r = row.record;
    if (row.error) {
      ++failures;
      std::cerr << "FAILED " << r.protocol << " / " << r.method << ": " << *row.error << "\n";
      continue;
    }
    const std::string stage = row.stage ? "stage " + std::to_string(*row.stage) : "";
    std::printf("%-20s %-24s %-10s %.4f  (%zu trials)\n", r.protocol.c_str(), r.method.c_str(),
                stage.c_str(), r.value, r.trials);
  }
  std::printf("wrote %s/report.csv (%zu rows, %zu failed)\n", result.output_dir.string().c_str(),
              result.rows.size(), failures);
  return failures ? kFailure : kOk;
}

int cmd_map(const fs::path& model_dir, const fs::path& image_path, const std::string& method_name,
            const std::string& layer, std::optional<std::size_t> cls, const fs::path& out) {
  const Model model = load_model(model_dir);
  MethodSpec spec;
  try {
    spec = parse_method(layer.empty() ? method_name : method_name + " " + layer);
    spec = resolve_method(spec, model);
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  const Tensor image = to_tensor(read_pgm(image_path));
  const ForwardTrace trace = forward(model, image);
  const std::size_t class_index = cls.value_or(argmax_class(trace.logits()));
  if (class_index >= model.class_count) {
    throw ConfigError("class " + std::to_string(class_index) + " out of range for a " +
                      std::to_string(model.class_count) + "-class model");
  }
  const SaliencyMap map = compute_saliency(model, trace, class_index, spec);
  render_map(map, out);
  std::printf("%s class %zu (logit %.4f) -> %s\n", map.method.c_str(), class_index,
              trace.logits()[class_index], out.string().c_str());
  return kOk;
}

int cmd_gen_data(const fs::path& out, const ShapesConfig& config) {
  const GeneratedPaths paths = generate_shapes_dataset(out, config);
  std::printf("wrote %s and %s\n", paths.train_manifest.string().c_str(),
              paths.eval_manifest.string().c_str());
  return kOk;
}

int cmd_randomize(const fs::path& model_dir, std::size_t stages, std::uint64_t seed,
                  const fs::path& out) {
  const Model model = load_model(model_dir);
  const std::size_t available = model.parametric_layers().size();
  if (stages > available) {
    throw ConfigError("--stages " + std::to_string(stages) + " exceeds the model's " +
                      std::to_string(available) + " parametric layers");
  }
  save_model(randomize_cascading(model, stages, seed), out);
  std::printf("randomized last %zu of %zu parametric layers -> %s\n", stages, available,
              out.string().c_str());
  return kOk;
}

int cmd_train(const fs::path& manifest, const fs::path& out, const MiniVggConfig& arch,
              bool gap_head, const TrainConfig& train) {
  const Dataset data = load_manifest(manifest);
  const auto examples = training_examples(data.samples);
  const Model init = gap_head ? build_gap_convnet(arch) : build_minivgg(arch);
  const TrainResult result = train_toy(init, examples, train);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    std::printf("epoch %3zu  loss %.5f\n", e + 1, result.epoch_loss[e]);
  }
  std::printf("train accuracy %.4f on %zu images\n", result.train_accuracy, examples.size());
  save_model(result.model, out);
  std::printf("saved %s\n", out.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saliency methods and sanity checks on a small convnet"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run an experiment described by a JSON config");
  fs::path config_path;
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();

  auto* map = app.add_subcommand("map", "Render one saliency map");
  fs::path model_dir, image_path, out_path;
  std::string method_name, layer;
  std::optional<std::size_t> cls;
  map->add_option("--model", model_dir, "Weights directory")->required();
  map->add_option("--image", image_path, "Input image (PGM)")->required();
  map->add_option("--method", method_name, "Method name, e.g. GradCAM_Pos or RectGrad(q=98)")
      ->required();
  map->add_option("--layer", layer, "Block label B1..Bn for aggregation methods");
  map->add_option("--class", cls, "Explained class (default: top logit)");
  map->add_option("--out", out_path, "Output image (.pgm or .png)")->required();

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic shapes dataset");
  fs::path data_out;
  ShapesConfig shapes;
  gen->add_option("--out", data_out, "Output directory")->required();
  gen->add_option("--count", shapes.count, "Evaluation images")->check(CLI::PositiveNumber);
  gen->add_option("--train-count", shapes.train_count, "Training images (default: --count)");
  gen->add_option("--extent", shapes.image_extent, "Image side length in pixels");
  gen->add_option("--seed", shapes.seed, "Random seed");

  auto* rnd = app.add_subcommand("randomize", "Cascading randomization of a saved model");
  fs::path rnd_model, rnd_out;
  std::size_t stages = 0;
  std::uint64_t rnd_seed = 0;
  rnd->add_option("--model", rnd_model, "Weights directory")->required();
  rnd->add_option("--stages", stages, "Parametric layers to redraw, from the output side")
      ->required();
  rnd->add_option("--seed", rnd_seed, "Random seed");
  rnd->add_option("--out", rnd_out, "Output weights directory")->required();

  auto* train = app.add_subcommand("train", "Train a MiniVGG on a training manifest");
  fs::path train_manifest, train_out;
  MiniVggConfig arch;
  TrainConfig tc;
  bool gap_head = false;
  train->add_option("--data", train_manifest, "Training manifest (train.json)")->required();
  train->add_option("--out", train_out, "Output weights directory")->required();
  train->add_option("--epochs", tc.epochs, "Epochs");
  train->add_option("--lr", tc.learning_rate, "Learning rate");
  train->add_option("--batch", tc.batch_size, "Batch size");
  train->add_option("--seed", tc.seed, "Seed for init and shuffling");
  train->add_option("--channels", arch.channels, "Channels per block");
  train->add_option("--extent", arch.input_extent, "Input side length");
  train->add_flag("--gap", gap_head, "Global-average-pool head");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(config_path);
    if (*map) return cmd_map(model_dir, image_path, method_name, layer, cls, out_path);
    if (*gen) return cmd_gen_data(data_out, shapes);
    if (*rnd) return cmd_randomize(rnd_model, stages, rnd_seed, rnd_out);
    if (*train) {
      arch.seed = tc.seed;
      return cmd_train(train_manifest, train_out, arch, gap_head, tc);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
