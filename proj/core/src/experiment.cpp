#include "saligraph/experiment.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "saligraph/dataset.hpp"
#include "saligraph/error.hpp"
#include "saligraph/render.hpp"

namespace saligraph {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double parse_number(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v)) {
    throw ValueError("bad " + what + " '" + text + "'");
  }
  return v;
}

// "Name(x)" or "Name(key=x)" -> x, or nullopt for a bare "Name".
std::optional<std::string> paren_arg(const std::string& text, const std::string& name,
                                     const std::string& key) {
  if (text == name) return std::nullopt;
  if (text.rfind(name + "(", 0) != 0 || text.back() != ')') {
    throw ValueError("cannot parse method '" + text + "'");
  }
  std::string inner = text.substr(name.size() + 1, text.size() - name.size() - 2);
  if (!key.empty() && inner.rfind(key + "=", 0) == 0) inner = inner.substr(key.size() + 1);
  return inner;
}

const char* const kMethodNames =
    "GradCAM, GradCAM_Pos, GradCAM_PosGrad, GradCAM++, GradMid, GradMidReLU (each optionally "
    "followed by a block such as B2), FullGrad, CumulativeGradCAM, CumulativeGradMid, Gradients, "
    "GuidedBP, RectGrad(q=..), RectGrad_Mod(q=..), LRP-0, LRP-gamma(..), LRP-zplus";

std::string format_value(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Strict object access: every key must be known.
void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      std::string list;
      for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
      throw ConfigError("unknown key '" + key + "' in " + where + " (expected one of: " + list +
                        ")");
    }
  }
}

template <class T>
T get_as(const json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::size_t get_count(const json& obj, const char* key, const std::string& where,
                      std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(where + "." + key + " must be a nonnegative integer");
  }
  return v.get<std::size_t>();
}

fs::path resolve_path(const fs::path& p, const fs::path& base) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

HogParams parse_hog(const json& obj, const std::string& where) {
  check_keys(obj, {"cell", "bins", "block"}, where);
  HogParams h;
  h.cell = get_count(obj, "cell", where, h.cell);
  h.bins = get_count(obj, "bins", where, h.bins);
  h.block = get_count(obj, "block", where, h.block);
  if (h.cell == 0 || h.bins == 0 || h.block == 0) throw ConfigError(where + " values must be positive");
  return h;
}

ProtocolSpec parse_protocol_entry(const json& entry, std::size_t i) {
  const std::string where = "protocols[" + std::to_string(i) + "]";
  ProtocolSpec p;
  try {
    if (entry.is_string()) {
      p.kind = parse_protocol(entry.get<std::string>());
      return p;
    }
    check_keys(entry, {"name", "tolerance", "hog", "seed", "stages", "std"}, where);
    if (!entry.contains("name")) throw ConfigError(where + " needs a 'name'");
    p.kind = parse_protocol(get_as<std::string>(entry, "name", where, ""));
  } catch (const ValueError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  auto only_for = [&](const char* key, std::initializer_list<Protocol> kinds) {
    if (entry.contains(key) && std::find(kinds.begin(), kinds.end(), p.kind) == kinds.end()) {
      throw ConfigError(where + ": '" + key + "' does not apply to " + protocol_name(p.kind));
    }
  };
  only_for("tolerance", {Protocol::kPointing, Protocol::kRestrictedPointing});
  only_for("hog", {Protocol::kClassSensitivity, Protocol::kRandomization});
  only_for("seed", {Protocol::kRandomization});
  only_for("stages", {Protocol::kRandomization});
  only_for("std", {Protocol::kRandomization});
  p.tolerance = get_as<double>(entry, "tolerance", where, 0.0);
  if (p.tolerance < 0.0) throw ConfigError(where + ".tolerance must be nonnegative");
  if (entry.contains("hog")) p.hog = parse_hog(entry["hog"], where + ".hog");
  if (entry.contains("seed")) p.seed = get_as<std::uint64_t>(entry, "seed", where, 0);
  if (entry.contains("stages") && entry["stages"] != "all") p.stages = get_count(entry, "stages", where, 0);
  p.std = get_as<double>(entry, "std", where, 0.01);
  if (!(p.std > 0.0)) throw ConfigError(where + ".std must be positive");
  return p;
}

ModelSource parse_model(const json& node, const fs::path& base) {
  ModelSource src;
  if (node.is_string()) {
    src.path = resolve_path(node.get<std::string>(), base);
    return src;
  }
  check_keys(node, {"path", "build", "train"}, "model");
  if (node.contains("path")) {
    if (node.contains("build") || node.contains("train")) {
      throw ConfigError("model: 'path' excludes 'build' and 'train'");
    }
    src.path = resolve_path(get_as<std::string>(node, "path", "model", ""), base);
    return src;
  }
  if (node.contains("build")) {
    const json& b = node["build"];
    check_keys(b, {"channels", "input_channels", "input_extent", "class_count", "seed", "init_std",
                   "head"},
               "model.build");
    MiniVggConfig& c = src.build;
    c.channels = get_as<std::vector<std::size_t>>(b, "channels", "model.build", c.channels);
    c.input_channels = get_count(b, "input_channels", "model.build", c.input_channels);
    c.input_extent = get_count(b, "input_extent", "model.build", c.input_extent);
    c.class_count = get_count(b, "class_count", "model.build", c.class_count);
    c.seed = get_as<std::uint64_t>(b, "seed", "model.build", c.seed);
    if (b.contains("init_std") && !b["init_std"].is_null() && b["init_std"] != "fan_in") {
      c.init_std = get_as<double>(b, "init_std", "model.build", 0.0);
    }
    const auto head = get_as<std::string>(b, "head", "model.build", "flatten");
    if (head != "flatten" && head != "gap") {
      throw ConfigError("model.build.head must be 'flatten' or 'gap', got '" + head + "'");
    }
    src.gap_head = head == "gap";
  }
  if (node.contains("train")) {
    const json& t = node["train"];
    check_keys(t, {"manifest", "epochs", "learning_rate", "batch_size", "seed"}, "model.train");
    if (!t.contains("manifest")) throw ConfigError("model.train needs a 'manifest'");
    src.train_manifest = resolve_path(get_as<std::string>(t, "manifest", "model.train", ""), base);
    TrainConfig& tc = src.train;
    tc.epochs = get_count(t, "epochs", "model.train", tc.epochs);
    tc.learning_rate = get_as<double>(t, "learning_rate", "model.train", tc.learning_rate);
    tc.batch_size = get_count(t, "batch_size", "model.train", tc.batch_size);
    tc.seed = get_as<std::uint64_t>(t, "seed", "model.train", tc.seed);
    if (!(tc.learning_rate > 0.0) || tc.batch_size == 0) {
      throw ConfigError("model.train: learning_rate and batch_size must be positive");
    }
  }
  return src;
}

json hog_json(const HogParams& h) {
  return {{"cell", h.cell}, {"bins", h.bins}, {"block", h.block}};
}

json protocol_json(const ProtocolSpec& p, std::uint64_t default_seed) {
  json j;
  j["name"] = protocol_name(p.kind);
  switch (p.kind) {
    case Protocol::kPointing:
    case Protocol::kRestrictedPointing:
      j["tolerance"] = p.tolerance;
      break;
    case Protocol::kClassSensitivity:
      j["hog"] = hog_json(p.hog);
      break;
    case Protocol::kRandomization:
      j["hog"] = hog_json(p.hog);
      j["seed"] = p.seed.value_or(default_seed);
      j["stages"] = p.stages ? json(*p.stages) : json("all");
      j["std"] = p.std;
      break;
  }
  return j;
}

json row_json(const ReportRow& row) {
  const EvalRecord& r = row.record;
  json j;
  j["protocol"] = r.protocol;
  j["method"] = r.method;
  j["layer"] = r.layer;
  j["params"] = r.params;
  j["value"] = row.error ? json(nullptr) : json(r.value);
  j["trials"] = r.trials;
  j["seed"] = r.seed;
  if (row.stage) j["stage"] = *row.stage;
  if (row.error) j["error"] = *row.error;
  j["detail"] = r.detail;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string() + ": " + std::strerror(errno));
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Model obtain_model(const ModelSource& src) {
  if (src.path) return load_model(*src.path);
  Model model = src.gap_head ? build_gap_convnet(src.build) : build_minivgg(src.build);
  if (src.train_manifest) {
    const Dataset train = load_manifest(*src.train_manifest);
    const auto examples = training_examples(train.samples);
    model = train_toy(model, examples, src.train).model;
  }
  return model;
}

void render_samples(const ExperimentConfig& config, const Model& model,
                    std::span<const Sample> samples, std::span<const Method> methods) {
  const std::size_t n = std::min(config.render.samples, samples.size());
  if (n == 0) return;
  const fs::path dir = config.output_dir / "renders";
  fs::create_directories(dir);
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = samples[i];
    const ForwardTrace trace = forward(model, s.image);
    const Shape extent{s.image.dim(1), s.image.dim(2)};
    Tensor gray(extent);
    for (std::size_t c = 0; c < s.image.dim(0); ++c) {
      for (std::size_t k = 0; k < gray.size(); ++k) gray[k] += s.image[c * gray.size() + k];
    }
    std::vector<std::vector<Tensor>> grid;
    for (const Method& m : methods) {
      std::vector<Tensor> row{gray};
      try {
        for (std::size_t cls = 0; cls < model.class_count; ++cls) row.push_back(m.fn(model, trace, cls));
      } catch (const std::exception&) {
        continue;  // the report already carries this method's failure
      }
      grid.push_back(std::move(row));
    }
    if (grid.empty()) continue;
    const std::string stem = s.id.empty() ? "sample_" + std::to_string(i) : s.id;
    render_grid(grid, dir / (stem + "." + config.render.format));
  }
}

}  // namespace

MethodSpec parse_method(const std::string& raw) {
  std::string text = raw;
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.erase(0, 1);
  std::string name = text;
  std::string layer;
  if (const auto sp = text.find(' '); sp != std::string::npos) {
    name = text.substr(0, sp);
    layer = text.substr(text.find_first_not_of(' ', sp));
  }
  const LayerRef ref = layer.empty() ? LayerRef{std::string()} : parse_layer_ref(layer);
  if (name == "GradCAM") return method::GradCam{ref};
  if (name == "GradCAM_Pos") return method::GradCamPos{ref, PosPlacement::kChannelWeights};
  if (name == "GradCAM_PosGrad") return method::GradCamPos{ref, PosPlacement::kGradients};
  if (name == "GradCAM++") return method::GradCamPP{ref};
  if (name == "GradMid") return method::GradMid{ref, PositiveFilter::kAbs};
  if (name == "GradMidReLU") return method::GradMid{ref, PositiveFilter::kRelu};
  if (!layer.empty()) {
    throw ValueError("method '" + name + "' does not take a layer (got '" + layer + "')");
  }
  if (name == "FullGrad") return method::FullGrad{};
  if (name == "CumulativeGradCAM") return method::CumulativeGradCam{};
  if (name == "CumulativeGradMid") return method::CumulativeGradMid{};
  if (name == "Gradients") return method::Gradients{};
  if (name == "GuidedBP") return method::GuidedBP{};
  if (name == "LRP-0") return method::Lrp{rule::LrpGamma{0.0}};
  if (name == "LRP-zplus" || name == "LRP-z+") return method::Lrp{rule::LrpZPlus{}};
  if (name.rfind("RectGrad_Mod", 0) == 0) {
    const auto q = paren_arg(name, "RectGrad_Mod", "q");
    return method::RectGradMod{q ? parse_number(*q, "percentile") : 98.0};
  }
  if (name.rfind("RectGrad", 0) == 0) {
    const auto q = paren_arg(name, "RectGrad", "q");
    return method::RectGrad{q ? parse_number(*q, "percentile") : 98.0};
  }
  if (name.rfind("LRP-gamma", 0) == 0) {
    const auto g = paren_arg(name, "LRP-gamma", "gamma");
    if (!g) throw ValueError("LRP-gamma needs a value, e.g. LRP-gamma(0.25)");
    return method::Lrp{rule::LrpGamma{parse_number(*g, "gamma")}};
  }
  throw ValueError("unknown method '" + raw + "'; known methods: " + kMethodNames);
}

MethodSpec resolve_method(const MethodSpec& spec, const Model& model) {
  MethodSpec out = spec;
  std::visit(
      [&](auto& m) {
        if constexpr (requires { m.layer; }) {
          if (const auto* s = std::get_if<std::string>(&m.layer); s && s->empty()) {
            if (model.blocks.empty()) throw ValueError("model has no blocks to default to");
            m.layer = model.blocks.back().first;
          }
        }
      },
      out);
  validate_method(model, out);
  return out;
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::kPointing:
      return "pointing";
    case Protocol::kRestrictedPointing:
      return "restricted_pointing";
    case Protocol::kClassSensitivity:
      return "class_sensitivity";
    case Protocol::kRandomization:
      return "randomization";
  }
  return "?";
}

Protocol parse_protocol(const std::string& text) {
  for (Protocol p : {Protocol::kPointing, Protocol::kRestrictedPointing,
                     Protocol::kClassSensitivity, Protocol::kRandomization}) {
    if (protocol_name(p) == text) return p;
  }
  throw ValueError("unknown protocol '" + text +
                   "' (expected pointing, restricted_pointing, class_sensitivity or "
                   "randomization)");
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(doc, {"model", "dataset", "methods", "protocols", "output_dir", "seed", "max_samples",
                   "threads", "render"},
             "config");
  for (const char* key : {"model", "dataset", "methods", "protocols", "output_dir"}) {
    if (!doc.contains(key)) throw ConfigError(std::string("config is missing '") + key + "'");
  }
  ExperimentConfig cfg;
  cfg.model = parse_model(doc["model"], base_dir);
  cfg.dataset = resolve_path(get_as<std::string>(doc, "dataset", "config", ""), base_dir);
  cfg.output_dir = resolve_path(get_as<std::string>(doc, "output_dir", "config", ""), base_dir);
  cfg.seed = get_as<std::uint64_t>(doc, "seed", "config", 0);
  if (doc.contains("max_samples") && !doc["max_samples"].is_null()) cfg.max_samples = get_count(doc, "max_samples", "config", 0);
  cfg.threads = get_count(doc, "threads", "config", 0);

  if (!doc["methods"].is_array() || doc["methods"].empty()) {
    throw ConfigError("'methods' must be a nonempty array of method names");
  }
  for (std::size_t i = 0; i < doc["methods"].size(); ++i) {
    const json& m = doc["methods"][i];
    if (!m.is_string()) throw ConfigError("methods[" + std::to_string(i) + "] must be a string");
    try {
      cfg.methods.push_back(parse_method(m.get<std::string>()));
    } catch (const ValueError& e) {
      throw ConfigError("methods[" + std::to_string(i) + "]: " + e.what());
    }
  }
  if (!doc["protocols"].is_array() || doc["protocols"].empty()) {
    throw ConfigError("'protocols' must be a nonempty array");
  }
  for (std::size_t i = 0; i < doc["protocols"].size(); ++i) {
    cfg.protocols.push_back(parse_protocol_entry(doc["protocols"][i], i));
  }
  if (doc.contains("render")) {
    const json& r = doc["render"];
    check_keys(r, {"samples", "format"}, "render");
    cfg.render.samples = get_count(r, "samples", "render", 0);
    cfg.render.format = get_as<std::string>(r, "format", "render", "pgm");
    if (cfg.render.format != "pgm" && cfg.render.format != "png") {
      throw ConfigError("render.format must be 'pgm' or 'png'");
    }
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string config_json(const ExperimentConfig& cfg) {
  json j;
  const ModelSource& src = cfg.model;
  if (src.path) {
    j["model"] = {{"path", src.path->string()}};
  } else {
    const MiniVggConfig& b = src.build;
    j["model"]["build"] = {{"channels", b.channels},
                           {"input_channels", b.input_channels},
                           {"input_extent", b.input_extent},
                           {"class_count", b.class_count},
                           {"seed", b.seed},
                           {"init_std", b.init_std ? json(*b.init_std) : json("fan_in")},
                           {"head", src.gap_head ? "gap" : "flatten"}};
    if (src.train_manifest) {
      j["model"]["train"] = {{"manifest", src.train_manifest->string()},
                             {"epochs", src.train.epochs},
                             {"learning_rate", src.train.learning_rate},
                             {"batch_size", src.train.batch_size},
                             {"seed", src.train.seed}};
    }
  }
  j["dataset"] = cfg.dataset.string();
  j["methods"] = json::array();
  for (const auto& m : cfg.methods) j["methods"].push_back(method_id(m));
  j["protocols"] = json::array();
  for (const auto& p : cfg.protocols) j["protocols"].push_back(protocol_json(p, cfg.seed));
  j["output_dir"] = cfg.output_dir.string();
  j["seed"] = cfg.seed;
  j["max_samples"] = cfg.max_samples ? json(*cfg.max_samples) : json(nullptr);
  j["render"] = {{"samples", cfg.render.samples}, {"format", cfg.render.format}};
  return j.dump(2);
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::vector<ReportRow> evaluate(const Model& model, std::span<const Sample> samples,
                                std::span<const Method> methods,
                                std::span<const ProtocolSpec> protocols, std::uint64_t seed,
                                std::size_t threads) {
  std::vector<ReportRow> rows;
  for (const Method& method : methods) {
    for (const ProtocolSpec& p : protocols) {
      try {
        switch (p.kind) {
          case Protocol::kPointing:
          case Protocol::kRestrictedPointing: {
            const PointingOptions opt{p.tolerance, threads};
            EvalRecord rec = p.kind == Protocol::kPointing
                                 ? pointing_game(samples, method, model, opt)
                                 : restricted_pointing(samples, method, model, opt);
            rec.seed = seed;
            rows.push_back({std::move(rec), std::nullopt, std::nullopt});
            break;
          }
          case Protocol::kClassSensitivity: {
            EvalRecord rec = class_sensitivity(samples, method, model, {p.hog, threads});
            rec.seed = seed;
            rows.push_back({std::move(rec), std::nullopt, std::nullopt});
            break;
          }
          case Protocol::kRandomization: {
            RandomizationOptions opt;
            opt.seed = p.seed.value_or(seed);
            opt.stages = p.stages;
            opt.std = p.std;
            opt.hog = p.hog;
            opt.threads = threads;
            const auto curve = randomization_curve(samples, method, model, opt);
            const std::size_t last = curve.empty() ? 0 : curve.back().stage;
            for (const CurvePoint& pt : curve) {
              EvalRecord rec;
              rec.protocol = "randomization";
              rec.method = method.id;
              rec.layer = method.layer;
              rec.params = "stage=" + std::to_string(pt.stage) + ";stages=" +
                           std::to_string(last) + ";std=" + format_value(p.std) + ";" +
                           describe(p.hog);
              rec.value = pt.similarity;
              rec.trials = samples.size();
              rec.seed = opt.seed;
              rows.push_back({std::move(rec), pt.stage, std::nullopt});
            }
            break;
          }
        }
      } catch (const std::exception& e) {
        EvalRecord rec;
        rec.protocol = protocol_name(p.kind);
        rec.method = method.id;
        rec.layer = method.layer;
        rec.seed = p.kind == Protocol::kRandomization ? p.seed.value_or(seed) : seed;
        rows.push_back({std::move(rec), std::nullopt, std::string(e.what())});
      }
    }
  }
  return rows;
}

std::string report_csv(std::span<const ReportRow> rows) {
  std::string out = "protocol,method,layer,params,value,trials,seed\n";
  for (const ReportRow& row : rows) {
    const EvalRecord& r = row.record;
    const std::string value = row.error ? "error: " + *row.error : format_value(r.value);
    out += csv_field(r.protocol) + "," + csv_field(r.method) + "," + csv_field(r.layer) + "," +
           csv_field(r.params) + "," + csv_field(value) + "," + std::to_string(r.trials) + "," +
           std::to_string(r.seed) + "\n";
  }
  return out;
}

std::string report_json(std::span<const ReportRow> rows) {
  json j;
  j["records"] = json::array();
  for (const ReportRow& row : rows) j["records"].push_back(row_json(row));
  return j.dump(2) + "\n";
}

bool ExperimentResult::has_failures() const {
  return std::any_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.error.has_value(); });
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  if (config.model.path && !fs::exists(*config.model.path)) {
    throw ConfigError("model directory " + config.model.path->string() + " does not exist");
  }
  if (config.model.train_manifest && !fs::exists(*config.model.train_manifest)) {
    throw ConfigError("training manifest " + config.model.train_manifest->string() +
                      " does not exist");
  }
  if (!fs::exists(config.dataset)) {
    throw ConfigError("dataset manifest " + config.dataset.string() + " does not exist");
  }
  const Model model = obtain_model(config.model);

  ExperimentConfig resolved_config = config;
  resolved_config.methods.clear();
  std::vector<Method> methods;
  for (const MethodSpec& spec : config.methods) {
    try {
      resolved_config.methods.push_back(resolve_method(spec, model));
      methods.push_back(make_method(resolved_config.methods.back()));
    } catch (const ValueError& e) {
      throw ConfigError("method '" + method_id(spec) + "': " + e.what());
    }
  }
  for (const ProtocolSpec& p : config.protocols) {
    if (p.kind == Protocol::kRandomization && p.stages &&
        *p.stages > model.parametric_layers().size()) {
      throw ConfigError("randomization stages " + std::to_string(*p.stages) + " exceed the model's " +
                        std::to_string(model.parametric_layers().size()) + " parametric layers");
    }
  }

  Dataset data = load_manifest(config.dataset);
  if (config.max_samples && data.samples.size() > *config.max_samples) {
    data.samples.resize(*config.max_samples);
  }

  ExperimentResult result;
  result.output_dir = config.output_dir;
  result.rows = evaluate(model, data.samples, methods, config.protocols, config.seed, config.threads);

  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (!fs::is_directory(config.output_dir)) {
    throw IoError("cannot create output directory " + config.output_dir.string());
  }
  write_text(config.output_dir / "report.csv", report_csv(result.rows));
  write_text(config.output_dir / "report.json", report_json(result.rows));

  const std::string resolved = config_json(resolved_config);
  json meta;
  meta["toolkit"] = "saligraph";
  meta["version"] = SALIGRAPH_VERSION;
  meta["config_hash"] = fnv1a_hex(resolved);
  meta["config"] = json::parse(resolved);
  meta["model"] = {{"layers", model.layers.size()},
                   {"parametric_layers", model.parametric_layers().size()},
                   {"parameters", model.parameter_count()},
                   {"class_count", model.class_count}};
  meta["samples"] = data.samples.size();
  meta["rows"] = result.rows.size();
  meta["failures"] = std::count_if(result.rows.begin(), result.rows.end(),
                                   [](const ReportRow& r) { return r.error.has_value(); });
  meta["timestamp"] = utc_timestamp();
  write_text(config.output_dir / "runmeta.json", meta.dump(2) + "\n");

  render_samples(config, model, data.samples, methods);
  return result;
}

}  // namespace saligraph
