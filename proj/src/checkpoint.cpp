#include <fstream>

#include "tsgnn/error.hpp"
#include "tsgnn/json_io.hpp"
#include "tsgnn/models.hpp"

namespace tsgnn {

using nlohmann::json;

void to_json(json& j, const ModelConfig& c) {
  j = json{{"architecture", to_string(c.architecture)},
           {"num_layers", c.num_layers},
           {"input_dim", c.input_dim},
           {"hidden_dim", c.hidden_dim},
           {"output_dim", c.output_dim},
           {"global_pool", to_string(c.global_pool)},
           {"gat_heads", c.gat_heads},
           {"diffpool_clusters", c.diffpool_clusters},
           {"sagpool_ratio", c.sagpool_ratio}};
}

void from_json(const json& j, ModelConfig& c) {
  c.architecture = parse_architecture(j.at("architecture").get<std::string>());
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.output_dim = j.at("output_dim").get<std::size_t>();
  c.global_pool = parse_pool_mode(j.at("global_pool").get<std::string>());
  c.gat_heads = j.value("gat_heads", std::size_t{4});
  c.diffpool_clusters = j.value("diffpool_clusters", std::size_t{0});
  c.sagpool_ratio = j.value("sagpool_ratio", 0.5);
}

void to_json(json& j, const ClassifierConfig& c) {
  j = json{{"num_layers", c.num_layers}, {"hidden_dim", c.hidden_dim}, {"num_classes", c.num_classes}};
}

void from_json(const json& j, ClassifierConfig& c) {
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
}

namespace {

constexpr const char* kFormat = "tsgnn-checkpoint";

json params_to_json(const std::vector<NamedTensor>& params) {
  json out = json::array();
  for (const auto& p : params) {
    out.push_back({{"name", p.name},
                   {"shape", p.tensor.shape()},
                   {"values", std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())}});
  }
  return out;
}

ParameterSnapshot params_from_json(const json& arr, const std::vector<NamedTensor>& expected) {
  if (arr.size() != expected.size()) {
    throw FormatError("checkpoint: " + std::to_string(arr.size()) + " parameters, model expects " +
                      std::to_string(expected.size()));
  }
  ParameterSnapshot snap;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& entry = arr[i];
    if (entry.at("name").get<std::string>() != expected[i].name ||
        entry.at("shape").get<Shape>() != expected[i].tensor.shape()) {
      throw FormatError("checkpoint: parameter " + std::to_string(i) + " does not match " + expected[i].name +
                        shape_string(expected[i].tensor.shape()));
    }
    snap.push_back(entry.at("values").get<std::vector<double>>());
  }
  return snap;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const GnnModel& model, const ClassifierHead* head) {
  json doc;
  doc["format"] = kFormat;
  doc["version"] = kCheckpointVersion;
  doc["model_config"] = model.config();
  doc["num_feature_categories"] = model.num_feature_categories();
  doc["parameters"] = params_to_json(model.named_parameters());
  if (head) {
    doc["classifier_config"] = head->config();
    doc["classifier_input_dim"] = head->input_dim();
    doc["classifier_parameters"] = params_to_json(head->named_parameters());
  } else {
    doc["classifier_config"] = nullptr;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const json doc = json::parse(in);
    if (doc.at("format") != kFormat) throw FormatError(path.string() + ": not a checkpoint");
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw FormatError(path.string() + ": unsupported checkpoint version");
    }
    Checkpoint ck{GnnModel(doc.at("model_config").get<ModelConfig>(), doc.at("num_feature_categories").get<std::size_t>(), 0),
                  std::nullopt};
    ck.model.restore(params_from_json(doc.at("parameters"), ck.model.named_parameters()));
    if (!doc.at("classifier_config").is_null()) {
      ClassifierHead head(doc.at("classifier_config").get<ClassifierConfig>(),
                          doc.at("classifier_input_dim").get<std::size_t>(), 0, HeadInit::zeros);
      head.restore(params_from_json(doc.at("classifier_parameters"), head.named_parameters()));
      ck.head = std::move(head);
    }
    return ck;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace tsgnn
