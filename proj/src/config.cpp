// SPDX-License-Identifier: Apache-2.0

#include "depthvar/config.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fmt/format.h>
#include <sstream>

namespace depthvar {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    s = s.substr(1, s.size() - 2);
  }
  return s;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  std::string v = value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& s : split(text, ',')) seeds.push_back(parse_number<std::uint64_t>("seeds", s));
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

std::vector<std::pair<int, int>> parse_scale_list(const std::string& text) {
  std::vector<std::pair<int, int>> sizes;
  for (const std::string& item : split(text, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) {
      const int s = parse_number<int>("model.scales", item);
      sizes.emplace_back(s, s);
    } else {
      sizes.emplace_back(parse_number<int>("model.scales", trim(item.substr(0, x))),
                         parse_number<int>("model.scales", trim(item.substr(x + 1))));
    }
  }
  return sizes;
}

ConfigEntries read_config_entries(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file not found: " + path.string());
  }
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }
  ConfigEntries entries;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError("config " + path.string() + ": key '" + section +
                        "' must live inside a [section]");
    }
    for (const auto& [key, value] : body) {
      entries[section + "." + key] = trim(value.get_value<std::string>());
    }
  }
  return entries;
}

void apply_override(ConfigEntries& entries, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string key = trim(assignment.substr(0, eq));
  if (key.find('.') == std::string::npos) {
    throw ConfigError("override key '" + key + "' must be qualified as section.key");
  }
  entries[key] = trim(assignment.substr(eq + 1));
}

ExperimentConfig config_from_entries(const ConfigEntries& entries) {
  ExperimentConfig cfg;
  ModelSpec& m = cfg.model;
  PipelineConfig& p = cfg.pipeline;
  SchedulerConfig& s = p.scheduler;

  for (const auto& [key, value] : entries) {
    try {
      if (key == "model.seed") m.seed = parse_number<std::uint64_t>(key, value);
      else if (key == "model.layers") m.layers = parse_number<int>(key, value);
      else if (key == "model.channels") m.channels = parse_number<int>(key, value);
      else if (key == "model.codebook_size") m.codebook_size = parse_number<int>(key, value);
      else if (key == "model.scales") m.schedule = ScaleSchedule(parse_scale_list(value));
      else if (key == "scheduler.metric") s.metric = parse_reference_metric(value);
      else if (key == "scheduler.layer_begin") s.layer_begin = parse_number<int>(key, value);
      else if (key == "scheduler.layer_end") s.layer_end = parse_number<int>(key, value);
      else if (key == "scheduler.family") s.family.kind = parse_schedule_kind(value);
      else if (key == "scheduler.k") s.family.sharpness = parse_number<double>(key, value);
      else if (key == "scheduler.eta") s.eta = parse_number<double>(key, value);
      else if (key == "scheduler.reference_scale") s.reference_scale = parse_number<int>(key, value);
      else if (key == "scheduler.rotation") s.rotation_enabled = parse_bool(key, value);
      else if (key == "scheduler.budget_mode") s.budget_mode = parse_budget_mode(value);
      else if (key == "scheduler.fixed_param") {
        if (value.empty() || value == "none") s.fixed_param.reset();
        else s.fixed_param = parse_number<double>(key, value);
      }
      else if (key == "pipeline.dynamic_start") p.dynamic_start = parse_number<int>(key, value);
      else if (key == "pipeline.mask_strategy") p.mask_strategy = parse_mask_strategy(value);
      else if (key == "pipeline.blending") p.blending_enabled = parse_bool(key, value);
      else if (key == "pipeline.restore_threshold") p.restore_threshold = parse_number<double>(key, value);
      else if (key == "pipeline.restore_window") p.restore_window = parse_number<int>(key, value);
      else if (key == "pipeline.baseline") p.baseline = parse_baseline(value);
      else if (key == "run.seeds") cfg.seeds = parse_seed_list(value);
      else if (key == "run.out") cfg.out_dir = value;
      else if (key == "ablate.axis") cfg.ablate_axis = value;
      else if (key == "ablate.values") cfg.ablate_values = split(value, ',');
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }

  if (m.layers < 1 || m.channels < 1 || m.codebook_size < 1) {
    throw ConfigError("model layers, channels and codebook_size must be positive");
  }
  try {
    p.validate(m.layers, m.schedule.count());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.seeds.empty()) throw ConfigError("seed list is empty");
  return cfg;
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::string>& overrides) {
  ConfigEntries entries;
  if (path) entries = read_config_entries(*path);
  for (const std::string& o : overrides) apply_override(entries, o);
  return config_from_entries(entries);
}

ConfigEntries config_entries(const ExperimentConfig& cfg) {
  const ModelSpec& m = cfg.model;
  const PipelineConfig& p = cfg.pipeline;
  const SchedulerConfig& s = p.scheduler;
  ConfigEntries e;
  e["model.seed"] = std::to_string(m.seed);
  e["model.layers"] = std::to_string(m.layers);
  e["model.channels"] = std::to_string(m.channels);
  e["model.codebook_size"] = std::to_string(m.codebook_size);
  std::string scales;
  for (const auto& [h, w] : m.schedule.sizes()) {
    if (!scales.empty()) scales += ",";
    scales += h == w ? std::to_string(h) : std::to_string(h) + "x" + std::to_string(w);
  }
  e["model.scales"] = scales;
  e["scheduler.metric"] = std::string(to_string(s.metric));
  e["scheduler.layer_begin"] = std::to_string(s.layer_begin);
  e["scheduler.layer_end"] = std::to_string(s.layer_end);
  e["scheduler.family"] = std::string(to_string(s.family.kind));
  e["scheduler.k"] = fmt_double(s.family.sharpness);
  e["scheduler.eta"] = fmt_double(s.eta);
  e["scheduler.reference_scale"] = std::to_string(s.reference_scale);
  e["scheduler.rotation"] = s.rotation_enabled ? "true" : "false";
  e["scheduler.budget_mode"] = std::string(to_string(s.budget_mode));
  e["scheduler.fixed_param"] = s.fixed_param ? fmt_double(*s.fixed_param) : "none";
  e["pipeline.dynamic_start"] = std::to_string(p.dynamic_start);
  e["pipeline.mask_strategy"] = std::string(to_string(p.mask_strategy));
  e["pipeline.blending"] = p.blending_enabled ? "true" : "false";
  e["pipeline.restore_threshold"] = fmt_double(p.restore_threshold);
  e["pipeline.restore_window"] = std::to_string(p.restore_window);
  e["pipeline.baseline"] = std::string(to_string(p.baseline));
  std::string seeds;
  for (std::uint64_t seed : cfg.seeds) {
    if (!seeds.empty()) seeds += ",";
    seeds += std::to_string(seed);
  }
  e["run.seeds"] = seeds;
  e["run.out"] = cfg.out_dir.string();
  e["ablate.axis"] = cfg.ablate_axis;
  std::string values;
  for (const std::string& v : cfg.ablate_values) {
    if (!values.empty()) values += ",";
    values += v;
  }
  e["ablate.values"] = values;
  return e;
}

std::string render_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string current;
  for (const auto& [key, value] : config_entries(cfg)) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out += "\n";
      out += "[" + section + "]\n";
      current = section;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

}  // namespace depthvar
