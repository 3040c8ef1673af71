#include "fundus/config.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "fundus/error.hpp"

namespace fundus {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw Error(ErrorCode::Config, key + ": cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw Error(ErrorCode::Config, key + ": expected a boolean, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;

void add_train_keys(std::map<std::string, Setter>& s, const std::string& prefix,
                    TrainConfig PipelineConfig::*member) {
  s[prefix + ".loss"] = [member](auto& c, auto&, auto& v) { (c.*member).loss = v; };
  s[prefix + ".optimizer"] = [member](auto& c, auto&, auto& v) { (c.*member).optimizer = v; };
  s[prefix + ".learning_rate"] = [member](auto& c, auto& k, auto& v) {
    (c.*member).learning_rate = parse_number<double>(k, v);
  };
  s[prefix + ".batch_size"] = [member](auto& c, auto& k, auto& v) {
    (c.*member).batch_size = parse_number<int>(k, v);
  };
  s[prefix + ".l2_on_dense"] = [member](auto& c, auto& k, auto& v) {
    (c.*member).l2_on_dense = parse_number<double>(k, v);
  };
  s[prefix + ".dropout"] = [member](auto& c, auto& k, auto& v) {
    (c.*member).dropout = parse_number<double>(k, v);
  };
  s[prefix + ".epochs"] = [member](auto& c, auto& k, auto& v) {
    (c.*member).epochs = parse_number<int>(k, v);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> s;
    s["seed"] = [](auto& c, auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); };
    s["output_dir"] = [](auto& c, auto&, auto& v) { c.output_dir = v; };
    s["split_fraction"] = [](auto& c, auto& k, auto& v) { c.split_fraction = parse_number<double>(k, v); };
    s["resample_target"] = [](auto& c, auto& k, auto& v) {
      c.resample_target = parse_number<std::size_t>(k, v);
    };

    s["data.source"] = [](auto& c, auto& k, auto& v) {
      if (v == "synthetic") c.source = DataSource::Synthetic;
      else if (v == "aptos") c.source = DataSource::Aptos;
      else throw Error(ErrorCode::Config, k + ": expected synthetic or aptos");
    };
    s["data.csv"] = [](auto& c, auto&, auto& v) { c.data_csv = v; };
    s["data.image_dir"] = [](auto& c, auto&, auto& v) { c.image_dir = v; };
    s["data.synthetic_n_per_class"] = [](auto& c, auto& k, auto& v) {
      c.synthetic_n_per_class = parse_number<std::size_t>(k, v);
    };
    s["data.synthetic_size"] = [](auto& c, auto& k, auto& v) { c.synthetic_size = parse_number<int>(k, v); };

    s["preprocess.dark_threshold"] = [](auto& c, auto& k, auto& v) {
      c.preprocess.dark_threshold = parse_number<float>(k, v);
    };
    s["preprocess.target_size"] = [](auto& c, auto& k, auto& v) {
      c.preprocess.target_size = parse_number<int>(k, v);
    };
    s["preprocess.circle_margin"] = [](auto& c, auto& k, auto& v) {
      c.preprocess.circle_margin = parse_number<double>(k, v);
    };
    s["preprocess.sigma_x"] = [](auto& c, auto& k, auto& v) {
      c.preprocess.kernel.sigma_x = parse_number<double>(k, v);
    };
    s["preprocess.sigma_y"] = [](auto& c, auto& k, auto& v) {
      c.preprocess.kernel.sigma_y = parse_number<double>(k, v);
    };
    s["preprocess.half_size"] = [](auto& c, auto& k, auto& v) {
      c.preprocess.kernel.half_size = parse_number<int>(k, v);
    };
    s["preprocess.cache"] = [](auto& c, auto& k, auto& v) { c.cache_preprocessed = parse_bool(k, v); };

    s["augment.enabled"] = [](auto& c, auto& k, auto& v) { c.augment_enabled = parse_bool(k, v); };
    s["augment.zoom_range"] = [](auto& c, auto& k, auto& v) { c.augment.zoom_range = parse_number<double>(k, v); };
    s["augment.horizontal_flip"] = [](auto& c, auto& k, auto& v) { c.augment.horizontal_flip = parse_bool(k, v); };
    s["augment.vertical_flip"] = [](auto& c, auto& k, auto& v) { c.augment.vertical_flip = parse_bool(k, v); };
    s["augment.fill_value"] = [](auto& c, auto& k, auto& v) { c.augment.fill_value = parse_number<float>(k, v); };

    add_train_keys(s, "train_base", &PipelineConfig::train_base);
    add_train_keys(s, "train_meta", &PipelineConfig::train_meta);

    s["backbones"] = [](auto& c, auto& k, auto& v) {
      const auto names = split_list(v);
      if (names.size() != 2) throw Error(ErrorCode::Config, k + ": exactly two backbones required");
      for (std::size_t i = 0; i < 2; ++i) {
        const double frozen = c.backbones[i].frozen_fraction;
        c.backbones[i] = make_backbone_spec(names[i], frozen);
      }
    };
    s["backbone.frozen_fraction"] = [](auto& c, auto& k, auto& v) {
      const double f = parse_number<double>(k, v);
      for (auto& b : c.backbones) b.frozen_fraction = f;
    };
    for (int i = 1; i <= 2; ++i) {
      s["backbone" + std::to_string(i) + ".weights"] = [i](auto& c, auto&, auto& v) {
        c.backbones[i - 1].weights_path = v;
      };
    }
    s["head.dense_width"] = [](auto& c, auto& k, auto& v) { c.head.dense_width = parse_number<int>(k, v); };
    s["meta.widths"] = [](auto& c, auto& k, auto& v) {
      c.meta.widths.clear();
      for (const auto& w : split_list(v)) c.meta.widths.push_back(parse_number<int>(k, w));
    };
    s["stacking.folds"] = [](auto& c, auto& k, auto& v) { c.stacking_folds = parse_number<int>(k, v); };
    return s;
  }();
  return table;
}

}  // namespace

void PipelineConfig::validate() const {
  preprocess.validate();
  augment.validate();
  train_base.validate();
  train_meta.validate();
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw Error(ErrorCode::Config, "split_fraction must lie in (0,1)");
  }
  if (resample_target < 1) throw Error(ErrorCode::Config, "resample_target must be >= 1");
  if (stacking_folds == 1 || stacking_folds < 0) throw Error(ErrorCode::Config, "stacking.folds must be 0 or >= 2");
  if (source == DataSource::Aptos && (data_csv.empty() || image_dir.empty())) {
    throw Error(ErrorCode::Config, "aptos source needs data.csv and data.image_dir");
  }
  for (const auto& b : backbones) lookup_backbone(b.name);
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::Config, "line " + std::to_string(lineno) + ": expected key = value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

void apply_overrides(PipelineConfig& cfg, const std::map<std::string, std::string>& values) {
  const auto& table = setters();
  for (const auto& [key, value] : values) {
    const auto it = table.find(key);
    if (it == table.end()) throw Error(ErrorCode::Config, "unknown key '" + key + "'");
    it->second(cfg, key, value);
  }
  const bool kernel_touched = values.contains("preprocess.sigma_x") || values.contains("preprocess.sigma_y") ||
                              values.contains("preprocess.target_size");
  if (kernel_touched && !values.contains("preprocess.half_size")) {
    const double sigma = std::max(cfg.preprocess.kernel.sigma_x, cfg.preprocess.kernel.sigma_y);
    cfg.preprocess.kernel.half_size = default_kernel(sigma, cfg.preprocess.target_size).half_size;
  }
  cfg.head.dropout_rate = cfg.train_base.dropout;
  cfg.meta.dropout_rate = cfg.train_meta.dropout;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  PipelineConfig cfg;
  apply_overrides(cfg, parse_key_values(buf.str()));
  return cfg;
}

std::string to_text(const PipelineConfig& c) {
  std::ostringstream o;
  o << std::setprecision(17);
  auto train = [&o](const char* p, const TrainConfig& t) {
    o << p << ".loss = " << t.loss << '\n'
      << p << ".optimizer = " << t.optimizer << '\n'
      << p << ".learning_rate = " << t.learning_rate << '\n'
      << p << ".batch_size = " << t.batch_size << '\n'
      << p << ".l2_on_dense = " << t.l2_on_dense << '\n'
      << p << ".dropout = " << t.dropout << '\n'
      << p << ".epochs = " << t.epochs << '\n';
  };
  o << "seed = " << c.seed << '\n'
    << "output_dir = " << c.output_dir.string() << '\n'
    << "split_fraction = " << c.split_fraction << '\n'
    << "resample_target = " << c.resample_target << '\n'
    << "data.source = " << (c.source == DataSource::Aptos ? "aptos" : "synthetic") << '\n';
  if (!c.data_csv.empty()) o << "data.csv = " << c.data_csv.string() << '\n';
  if (!c.image_dir.empty()) o << "data.image_dir = " << c.image_dir.string() << '\n';
  o << "data.synthetic_n_per_class = " << c.synthetic_n_per_class << '\n'
    << "data.synthetic_size = " << c.synthetic_size << '\n'
    << "preprocess.dark_threshold = " << c.preprocess.dark_threshold << '\n'
    << "preprocess.target_size = " << c.preprocess.target_size << '\n'
    << "preprocess.circle_margin = " << c.preprocess.circle_margin << '\n'
    << "preprocess.sigma_x = " << c.preprocess.kernel.sigma_x << '\n'
    << "preprocess.sigma_y = " << c.preprocess.kernel.sigma_y << '\n'
    << "preprocess.half_size = " << c.preprocess.kernel.half_size << '\n'
    << "preprocess.cache = " << (c.cache_preprocessed ? "true" : "false") << '\n'
    << "augment.enabled = " << (c.augment_enabled ? "true" : "false") << '\n'
    << "augment.zoom_range = " << c.augment.zoom_range << '\n'
    << "augment.horizontal_flip = " << (c.augment.horizontal_flip ? "true" : "false") << '\n'
    << "augment.vertical_flip = " << (c.augment.vertical_flip ? "true" : "false") << '\n'
    << "augment.fill_value = " << c.augment.fill_value << '\n';
  train("train_base", c.train_base);
  train("train_meta", c.train_meta);
  o << "backbones = " << c.backbones[0].name << ',' << c.backbones[1].name << '\n'
    << "backbone.frozen_fraction = " << c.backbones[0].frozen_fraction << '\n';
  for (int i = 0; i < 2; ++i) {
    if (!c.backbones[i].weights_path.empty()) {
      o << "backbone" << i + 1 << ".weights = " << c.backbones[i].weights_path.string() << '\n';
    }
  }
  o << "head.dense_width = " << c.head.dense_width << '\n' << "meta.widths = ";
  for (std::size_t i = 0; i < c.meta.widths.size(); ++i) o << (i ? "," : "") << c.meta.widths[i];
  o << '\n' << "stacking.folds = " << c.stacking_folds << '\n';
  return o.str();
}

}  // namespace fundus
