// Regenerates tests/data/reference_model and reference_logits.json.
// Usage: make_reference_fixture <tests/data>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "saligraph/model.hpp"
#include "support.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <data-dir>\n", argv[0]);
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  saligraph::MiniVggConfig cfg;
  cfg.seed = 20240611;
  const saligraph::Model m = saligraph::build_minivgg(cfg);
  saligraph::save_model(m, dir / "reference_model");
  // Reload so the logits come from the float32 file exactly as a consumer sees it.
  const saligraph::Model loaded = saligraph::load_model(dir / "reference_model");
  const saligraph::Tensor image = testing::random_tensor(loaded.input_shape, 7, 0, 1);
  const saligraph::Tensor logits = saligraph::forward(loaded, image).logits();
  nlohmann::json j;
  j["image"] = image.raw();
  j["logits"] = logits.raw();
  std::ofstream(dir / "reference_logits.json") << j.dump(1) << "\n";
  return 0;
}
