#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "rhythm/model.hpp"

namespace rhythm {

namespace {

namespace pt = boost::property_tree;

std::vector<std::size_t> parse_stages(const std::string& text) {
  std::vector<std::size_t> stages;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    std::size_t used = 0;
    const unsigned long v = std::stoul(item.substr(first), &used);
    if (item.find_first_not_of(" \t", first + used) != std::string::npos) {
      throw std::invalid_argument("bad stage value '" + item + "'");
    }
    stages.push_back(v);
  }
  return stages;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ModelConfig parse_model_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }

  static const std::set<std::string> kModelKeys{"stages",    "channels",  "heads",         "head_dim",
                                                "topk",      "partition", "tdc_theta",     "ffn_ratio",
                                                "head_hidden", "alpha",   "beta",          "bn_epsilon",
                                                "stem_channels", "norm_placement", "block_residual"};
  static const std::set<std::string> kInitKeys{"seed"};
  for (const auto& [section, body] : tree) {
    const std::set<std::string>* keys = section == "model" ? &kModelKeys : section == "init" ? &kInitKeys : nullptr;
    if (keys == nullptr) throw std::invalid_argument("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      if (!keys->contains(key)) throw std::invalid_argument("config: unknown key '" + key + "' in [" + section + "]");
    }
  }

  ModelConfig cfg;
  try {
    if (auto s = tree.get_optional<std::string>("model.stages")) cfg.stages = parse_stages(*s);
    cfg.attention.channels = tree.get("model.channels", cfg.attention.channels);
    cfg.attention.heads = tree.get("model.heads", cfg.attention.heads);
    cfg.attention.head_dim = tree.get("model.head_dim", cfg.attention.head_dim);
    cfg.attention.topk = tree.get("model.topk", cfg.attention.topk);
    cfg.attention.partition = tree.get("model.partition", cfg.attention.partition);
    cfg.attention.tdc_theta = tree.get("model.tdc_theta", cfg.attention.tdc_theta);
    cfg.ffn_ratio = tree.get("model.ffn_ratio", cfg.ffn_ratio);
    cfg.head_hidden = tree.get("model.head_hidden", cfg.head_hidden);
    cfg.stem_channels = tree.get("model.stem_channels", cfg.stem_channels);
    cfg.alpha = tree.get("model.alpha", cfg.alpha);
    cfg.beta = tree.get("model.beta", cfg.beta);
    cfg.bn_epsilon = tree.get("model.bn_epsilon", cfg.bn_epsilon);
    const std::string placement = tree.get("model.norm_placement", std::string(cfg.layout.pre_norm ? "pre" : "post"));
    if (placement != "pre" && placement != "post") {
      throw std::invalid_argument("config: norm_placement must be 'pre' or 'post'");
    }
    cfg.layout.pre_norm = placement == "pre";
    cfg.layout.block_residual = tree.get("model.block_residual", cfg.layout.block_residual);
    cfg.seed = tree.get("init.seed", cfg.seed);
  } catch (const pt::ptree_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ModelConfig read_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_model_config(text.str());
}

std::string format_model_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "[model]\nstages = ";
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) os << (i ? "," : "") << cfg.stages[i];
  os << "\nchannels = " << cfg.attention.channels << "\nheads = " << cfg.attention.heads
     << "\nhead_dim = " << cfg.attention.head_dim << "\ntopk = " << cfg.attention.topk
     << "\npartition = " << cfg.attention.partition << "\ntdc_theta = " << format_double(cfg.attention.tdc_theta)
     << "\nffn_ratio = " << cfg.ffn_ratio << "\nhead_hidden = " << cfg.head_hidden
     << "\nstem_channels = " << cfg.stem_channels << "\nalpha = " << format_double(cfg.alpha)
     << "\nbeta = " << format_double(cfg.beta) << "\nbn_epsilon = " << format_double(cfg.bn_epsilon)
     << "\nnorm_placement = " << (cfg.layout.pre_norm ? "pre" : "post")
     << "\nblock_residual = " << (cfg.layout.block_residual ? "true" : "false") << "\n\n[init]\nseed = " << cfg.seed
     << "\n";
  return os.str();
}

std::string config_hash(const ModelConfig& cfg) { return text_hash(format_model_config(cfg)); }

std::string text_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace rhythm
