#include "graftnet/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "graftnet/error.hpp"

namespace graftnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config key '" + key + "': expected " + want + ", got '" + value + "'");
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a number");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "true or false");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string graft_pair_name(std::size_t stage) { return "R5-S" + std::to_string(stage); }

std::size_t parse_graft_pair(const std::string& s) {
  std::string digits = s;
  if (digits.rfind("R5-", 0) == 0) digits = digits.substr(3);
  if (!digits.empty() && (digits[0] == 'S' || digits[0] == 's')) digits = digits.substr(1);
  if (digits.size() == 1 && digits[0] >= '1' && digits[0] <= '4') return std::size_t(digits[0] - '0');
  throw ConfigError("graft pair '" + s + "' must be one of R5-S1, R5-S2, R5-S3, R5-S4");
}

void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  auto& m = c.model;
  if (key == "variant") m.variant = parse_variant(value);
  else if (key == "input_hw") m.input_hw = to_uint(key, value);
  else if (key == "attn_input_hw") m.attn_input_hw = to_uint(key, value);
  else if (key == "patch_size") m.patch_size = to_uint(key, value);
  else if (key == "channel_factor") m.channel_factor = to_double(key, value);
  else if (key == "attn_heads") m.attn_heads = to_uint(key, value);
  else if (key == "attn_depth") m.attn_depth = to_uint(key, value);
  else if (key == "graft_heads") m.graft_heads = to_uint(key, value);
  else if (key == "graft_pair") m.graft_stage = parse_graft_pair(value);
  else if (key == "attention_cap") m.attention_cap = to_uint(key, value);
  else if (key == "lr_backbone_attn") c.lr_backbone_attn = to_double(key, value);
  else if (key == "lr_other") c.lr_other = to_double(key, value);
  else if (key == "unlink_lr") c.unlink_lr = to_bool(key, value);
  else if (key == "momentum") c.momentum = to_double(key, value);
  else if (key == "weight_decay") c.weight_decay = to_double(key, value);
  else if (key == "batch_size") c.batch_size = to_uint(key, value);
  else if (key == "epochs") c.epochs = to_uint(key, value);
  else if (key == "warmup_fraction") c.warmup_fraction = to_double(key, value);
  else if (key == "beta") c.beta = to_double(key, value);
  else if (key == "seed") c.seed = to_uint(key, value);
  else if (key == "val_fraction") c.val_fraction = to_double(key, value);
  else if (key == "augment") c.augment = to_bool(key, value);
  else if (key == "jitter_quantum") c.jitter_quantum = to_uint(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

void validate_config(TrainConfig& c) {
  if (!(c.lr_backbone_attn > 0)) throw ConfigError("lr_backbone_attn must be positive");
  if (!c.unlink_lr) c.lr_other = 10.0 * c.lr_backbone_attn;
  if (!(c.lr_other > 0)) throw ConfigError("lr_other must be positive");
  if (c.momentum < 0 || c.momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  if (c.weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (c.batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch norm)");
  if (c.epochs == 0) throw ConfigError("epochs must be positive");
  if (c.warmup_fraction < 0 || c.warmup_fraction > 1) throw ConfigError("warmup_fraction must lie in [0, 1]");
  if (c.beta < 0) throw ConfigError("beta must be non-negative");
  if (c.val_fraction < 0 || c.val_fraction >= 1) throw ConfigError("val_fraction must lie in [0, 1)");
  if (c.model.graft_stage < 1 || c.model.graft_stage > 4) throw ConfigError("graft_pair out of range");
  if (!(c.model.channel_factor > 0)) throw ConfigError("channel_factor must be positive");
  c.model.seed = c.seed;
}

TrainConfig parse_config(const std::string& text, const std::string& origin) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key " + key);
    try {
      set_config_value(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (seen.count("lr_other") && !c.unlink_lr &&
      std::abs(c.lr_other - 10.0 * c.lr_backbone_attn) > 1e-12 * std::abs(c.lr_other)) {
    throw ConfigError(origin + ": lr_other must be 10x lr_backbone_attn unless unlink_lr is set");
  }
  validate_config(c);
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string format_config(const TrainConfig& c) {
  const auto& m = c.model;
  std::ostringstream out;
  out << "variant = " << to_string(m.variant) << '\n'
      << "input_hw = " << m.input_hw << '\n'
      << "attn_input_hw = " << m.attn_input_hw << '\n'
      << "patch_size = " << m.patch_size << '\n'
      << "channel_factor = " << fmt(m.channel_factor) << '\n'
      << "attn_heads = " << m.attn_heads << '\n'
      << "attn_depth = " << m.attn_depth << '\n'
      << "graft_heads = " << m.graft_heads << '\n'
      << "graft_pair = " << graft_pair_name(m.graft_stage) << '\n'
      << "attention_cap = " << m.attention_cap << '\n'
      << "lr_backbone_attn = " << fmt(c.lr_backbone_attn) << '\n'
      << "unlink_lr = " << (c.unlink_lr ? "true" : "false") << '\n'
      << "lr_other = " << fmt(c.lr_other) << '\n'
      << "momentum = " << fmt(c.momentum) << '\n'
      << "weight_decay = " << fmt(c.weight_decay) << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "epochs = " << c.epochs << '\n'
      << "warmup_fraction = " << fmt(c.warmup_fraction) << '\n'
      << "beta = " << fmt(c.beta) << '\n'
      << "seed = " << c.seed << '\n'
      << "val_fraction = " << fmt(c.val_fraction) << '\n'
      << "augment = " << (c.augment ? "true" : "false") << '\n'
      << "jitter_quantum = " << c.jitter_quantum << '\n';
  return out.str();
}

}  // namespace graftnet
