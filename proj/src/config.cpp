#include "uncseg/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace uncseg {

void ExperimentConfig::validate() const {
  geometry.validate();
  network.validate();
  schedule.validate();
  if (num_cases < 1 || folds < 1 || num_cases % folds != 0) {
    throw std::invalid_argument("config: folds must divide num_cases");
  }
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be positive");
  if (patch_size < 1) throw std::invalid_argument("config: patch_size must be positive");
  if (samples_per_model < 1) {
    throw std::invalid_argument("config: samples_per_model must be positive");
  }
  if (losses.empty()) throw std::invalid_argument("config: at least one loss required");
  if (referral_quantiles.empty()) {
    throw std::invalid_argument("config: referral_quantiles must not be empty");
  }
  for (std::size_t i = 0; i < referral_quantiles.size(); ++i) {
    if (referral_quantiles[i] < 0 || referral_quantiles[i] > 100) {
      throw std::invalid_argument("config: referral quantiles must be in [0,100]");
    }
    if (i > 0 && referral_quantiles[i] > referral_quantiles[i - 1]) {
      throw std::invalid_argument("config: referral quantiles must be descending");
    }
  }
  if (curve_samples < 2) throw std::invalid_argument("config: curve_samples must be >= 2");
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string fmt_list(const std::vector<T>& v,
                     const std::function<std::string(const T&)>& fmt) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += fmt(v[i]);
  }
  return s;
}

struct Parser {
  ExperimentConfig cfg;
  std::string file;
  std::string section;
  int line_no = 0;

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(file, line_no, msg); }

  int to_int(const std::string& v) const {
    try {
      std::size_t used = 0;
      int x = std::stoi(v, &used);
      if (used != v.size()) fail("expected an integer, got '" + v + "'");
      return x;
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      fail("expected an integer, got '" + v + "'");
    }
  }

  std::uint64_t to_u64(const std::string& v) const {
    try {
      std::size_t used = 0;
      std::uint64_t x = std::stoull(v, &used);
      if (used != v.size()) fail("expected an unsigned integer, got '" + v + "'");
      return x;
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      fail("expected an unsigned integer, got '" + v + "'");
    }
  }

  double to_double(const std::string& v) const {
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (used != v.size()) fail("expected a number, got '" + v + "'");
      return x;
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      fail("expected a number, got '" + v + "'");
    }
  }

  bool to_bool(const std::string& v) const {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail("expected true or false, got '" + v + "'");
  }

  std::vector<int> to_int_list(const std::string& v) const {
    std::vector<int> out;
    for (const std::string& t : split_list(v)) out.push_back(to_int(t));
    return out;
  }

  std::vector<double> to_double_list(const std::string& v) const {
    std::vector<double> out;
    for (const std::string& t : split_list(v)) out.push_back(to_double(t));
    return out;
  }

  void assign(const std::string& key, const std::string& val) {
    GeometryConfig& g = cfg.geometry;
    NetworkConfig& n = cfg.network;
    ScheduleConfig& s = cfg.schedule;
    if (section == "experiment") {
      if (key == "seed") cfg.seed = to_u64(val);
      else if (key == "out_dir") cfg.out_dir = val;
      else fail("unknown key '" + key + "' in [experiment]");
    } else if (section == "phantom") {
      if (key == "num_cases") cfg.num_cases = to_int(val);
      else if (key == "folds") cfg.folds = to_int(val);
      else if (key == "grid") g.grid = to_int(val);
      else if (key == "spacing_mm") g.spacing_mm = to_double(val);
      else if (key == "slices_min") g.slices_min = to_int(val);
      else if (key == "slices_max") g.slices_max = to_int(val);
      else if (key == "lv_radius_min") g.lv_radius_min = to_double(val);
      else if (key == "lv_radius_max") g.lv_radius_max = to_double(val);
      else if (key == "myo_thickness_min") g.myo_thickness_min = to_double(val);
      else if (key == "myo_thickness_max") g.myo_thickness_max = to_double(val);
      else if (key == "rv_angle_min_deg") g.rv_angle_min_deg = to_double(val);
      else if (key == "rv_angle_max_deg") g.rv_angle_max_deg = to_double(val);
      else if (key == "rv_thickness_min") g.rv_thickness_min = to_double(val);
      else if (key == "rv_thickness_max") g.rv_thickness_max = to_double(val);
      else if (key == "contraction_min") g.contraction_min = to_double(val);
      else if (key == "contraction_max") g.contraction_max = to_double(val);
      else if (key == "center_jitter") g.center_jitter = to_double(val);
      else if (key == "noise_sigma") g.noise_sigma = to_double(val);
      else if (key == "bias_amplitude") g.bias_amplitude = to_double(val);
      else fail("unknown key '" + key + "' in [phantom]");
    } else if (section == "network") {
      if (key == "kernels") n.layer_kernels = to_int_list(val);
      else if (key == "dilations") n.layer_dilations = to_int_list(val);
      else if (key == "channels") n.channels = to_int(val);
      else if (key == "dropout_rate") n.dropout_rate = to_double(val);
      else if (key == "expected_receptive_field") n.expected_receptive_field = to_int(val);
      else fail("unknown key '" + key + "' in [network]");
    } else if (section == "train") {
      if (key == "losses") {
        cfg.losses.clear();
        for (const std::string& t : split_list(val)) {
          try {
            cfg.losses.push_back(loss_from_code(t));
          } catch (const std::invalid_argument& e) {
            fail(e.what());
          }
        }
      } else if (key == "base_lr") s.base_lr = to_double(val);
      else if (key == "iterations") s.total_iterations = to_int(val);
      else if (key == "cycle_length") s.cycle_length = to_int(val);
      else if (key == "snapshots_keep") s.snapshots_to_keep = to_int(val);
      else if (key == "batch_size") cfg.batch_size = to_int(val);
      else if (key == "patch_size") cfg.patch_size = to_int(val);
      else if (key == "weight_decay") cfg.weight_decay = to_double(val);
      else if (key == "adam_beta1") cfg.adam_beta1 = to_double(val);
      else if (key == "adam_beta2") cfg.adam_beta2 = to_double(val);
      else if (key == "adam_eps") cfg.adam_eps = to_double(val);
      else fail("unknown key '" + key + "' in [train]");
    } else if (section == "predict") {
      if (key == "samples_per_model") cfg.samples_per_model = to_int(val);
      else fail("unknown key '" + key + "' in [predict]");
    } else if (section == "analyze") {
      if (key == "referral_quantiles") cfg.referral_quantiles = to_double_list(val);
      else if (key == "include_background") cfg.include_background = to_bool(val);
      else if (key == "curve_samples") cfg.curve_samples = to_int(val);
      else fail("unknown key '" + key + "' in [analyze]");
    } else if (section.empty()) {
      fail("key outside of any [section]");
    } else {
      fail("unknown section [" + section + "]");
    }
  }
};

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& file_name) {
  Parser p;
  p.file = file_name;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    p.line_no += 1;
    std::string line = raw;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') p.fail("unterminated section header");
      p.section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) p.fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) p.fail("empty key");
    p.assign(key, val);
  }
  try {
    p.cfg.validate();
  } catch (const std::exception& e) {
    throw ConfigError(file_name, p.line_no, std::string("invalid configuration: ") + e.what());
  }
  return p.cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream o;
  const std::function<std::string(const int&)> fi = [](const int& v) {
    return std::to_string(v);
  };
  const std::function<std::string(const double&)> fd = [](const double& v) {
    return fmt_double(v);
  };
  const std::function<std::string(const LossKind&)> fl = [](const LossKind& v) {
    return std::string(loss_code(v));
  };
  o << "[experiment]\n";
  o << "seed = " << c.seed << "\n";
  o << "out_dir = " << c.out_dir << "\n";
  o << "\n[phantom]\n";
  o << "num_cases = " << c.num_cases << "\n";
  o << "folds = " << c.folds << "\n";
  o << "grid = " << c.geometry.grid << "\n";
  o << "spacing_mm = " << fmt_double(c.geometry.spacing_mm) << "\n";
  o << "slices_min = " << c.geometry.slices_min << "\n";
  o << "slices_max = " << c.geometry.slices_max << "\n";
  o << "lv_radius_min = " << fmt_double(c.geometry.lv_radius_min) << "\n";
  o << "lv_radius_max = " << fmt_double(c.geometry.lv_radius_max) << "\n";
  o << "myo_thickness_min = " << fmt_double(c.geometry.myo_thickness_min) << "\n";
  o << "myo_thickness_max = " << fmt_double(c.geometry.myo_thickness_max) << "\n";
  o << "rv_angle_min_deg = " << fmt_double(c.geometry.rv_angle_min_deg) << "\n";
  o << "rv_angle_max_deg = " << fmt_double(c.geometry.rv_angle_max_deg) << "\n";
  o << "rv_thickness_min = " << fmt_double(c.geometry.rv_thickness_min) << "\n";
  o << "rv_thickness_max = " << fmt_double(c.geometry.rv_thickness_max) << "\n";
  o << "contraction_min = " << fmt_double(c.geometry.contraction_min) << "\n";
  o << "contraction_max = " << fmt_double(c.geometry.contraction_max) << "\n";
  o << "center_jitter = " << fmt_double(c.geometry.center_jitter) << "\n";
  o << "noise_sigma = " << fmt_double(c.geometry.noise_sigma) << "\n";
  o << "bias_amplitude = " << fmt_double(c.geometry.bias_amplitude) << "\n";
  o << "\n[network]\n";
  o << "kernels = " << fmt_list(c.network.layer_kernels, fi) << "\n";
  o << "dilations = " << fmt_list(c.network.layer_dilations, fi) << "\n";
  o << "channels = " << c.network.channels << "\n";
  o << "dropout_rate = " << fmt_double(c.network.dropout_rate) << "\n";
  o << "expected_receptive_field = " << c.network.expected_receptive_field << "\n";
  o << "\n[train]\n";
  o << "losses = " << fmt_list(c.losses, fl) << "\n";
  o << "base_lr = " << fmt_double(c.schedule.base_lr) << "\n";
  o << "iterations = " << c.schedule.total_iterations << "\n";
  o << "cycle_length = " << c.schedule.cycle_length << "\n";
  o << "snapshots_keep = " << c.schedule.snapshots_to_keep << "\n";
  o << "batch_size = " << c.batch_size << "\n";
  o << "patch_size = " << c.patch_size << "\n";
  o << "weight_decay = " << fmt_double(c.weight_decay) << "\n";
  o << "adam_beta1 = " << fmt_double(c.adam_beta1) << "\n";
  o << "adam_beta2 = " << fmt_double(c.adam_beta2) << "\n";
  o << "adam_eps = " << fmt_double(c.adam_eps) << "\n";
  o << "\n[predict]\n";
  o << "samples_per_model = " << c.samples_per_model << "\n";
  o << "\n[analyze]\n";
  o << "referral_quantiles = " << fmt_list(c.referral_quantiles, fd) << "\n";
  o << "include_background = " << (c.include_background ? "true" : "false") << "\n";
  o << "curve_samples = " << c.curve_samples << "\n";
  return o.str();
}

void write_config_file(const std::string& path, const ExperimentConfig& config) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << config_to_text(config);
}

}  // namespace uncseg
