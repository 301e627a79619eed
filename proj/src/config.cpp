// SPDX-License-Identifier: Apache-2.0

#include "ctad/config.hpp"

#include <charconv>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ctad {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  const char* first = v.data();
  const char* last = v.data() + v.size();
  if constexpr (std::is_floating_point_v<T>) {
    char* end = nullptr;
    out = std::strtod(first, &end);
    if (v.empty() || end != last) throw std::invalid_argument("not a number: '" + v + "'");
  } else {
    const auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) throw std::invalid_argument("not an integer: '" + v + "'");
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(trim(item)));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

using Setter = std::function<void(TrainConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"lr", [](TrainConfig& c, const std::string& v) { c.lr = parse_number<double>(v); }},
      {"beta1", [](TrainConfig& c, const std::string& v) { c.beta1 = parse_number<double>(v); }},
      {"beta2", [](TrainConfig& c, const std::string& v) { c.beta2 = parse_number<double>(v); }},
      {"eps", [](TrainConfig& c, const std::string& v) { c.eps = parse_number<double>(v); }},
      {"lr_gamma", [](TrainConfig& c, const std::string& v) { c.lr_gamma = parse_number<double>(v); }},
      {"lr_step_size", [](TrainConfig& c, const std::string& v) { c.lr_step_size = parse_number<int>(v); }},
      {"lr_step_unit",
       [](TrainConfig& c, const std::string& v) {
         if (v == "steps") {
           c.lr_step_unit = DecayUnit::kSteps;
         } else if (v == "epochs") {
           c.lr_step_unit = DecayUnit::kEpochs;
         } else {
           throw std::invalid_argument("expected 'steps' or 'epochs', got '" + v + "'");
         }
       }},
      {"batch", [](TrainConfig& c, const std::string& v) { c.batch = parse_number<int>(v); }},
      {"steps", [](TrainConfig& c, const std::string& v) { c.steps = parse_number<int>(v); }},
      {"m", [](TrainConfig& c, const std::string& v) { c.m = parse_number<int>(v); }},
      {"n", [](TrainConfig& c, const std::string& v) { c.n = parse_number<int>(v); }},
      {"gamma", [](TrainConfig& c, const std::string& v) { c.gamma = parse_number<double>(v); }},
      {"seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); }},
      {"split_seed", [](TrainConfig& c, const std::string& v) { c.split_seed = parse_number<std::uint64_t>(v); }},
      {"height", [](TrainConfig& c, const std::string& v) { c.height = parse_number<int>(v); }},
      {"width", [](TrainConfig& c, const std::string& v) { c.width = parse_number<int>(v); }},
      {"d_min", [](TrainConfig& c, const std::string& v) { c.d_min = parse_number<double>(v); }},
      {"d_max", [](TrainConfig& c, const std::string& v) { c.d_max = parse_number<double>(v); }},
      {"cap", [](TrainConfig& c, const std::string& v) { c.cap = parse_number<double>(v); }},
      {"clip_norm", [](TrainConfig& c, const std::string& v) { c.clip_norm = parse_number<double>(v); }},
      {"train_frac", [](TrainConfig& c, const std::string& v) { c.train_frac = parse_number<double>(v); }},
      {"neighbor_offsets", [](TrainConfig& c, const std::string& v) { c.neighbor_offsets = parse_int_list(v); }},
      {"pairs", [](TrainConfig& c, const std::string& v) { c.pairs = parse_number<int>(v); }},
      {"depth_delta_scale",
       [](TrainConfig& c, const std::string& v) { c.depth_delta_scale = parse_number<double>(v); }},
      {"pose_delta_scale", [](TrainConfig& c, const std::string& v) { c.pose_delta_scale = parse_number<double>(v); }},
  };
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  require(lr > 0, "lr must be positive");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must be in [0, 1)");
  require(eps > 0, "eps must be positive");
  require(lr_gamma > 0 && lr_gamma <= 1, "lr_gamma must be in (0, 1]");
  require(lr_step_size >= 1, "lr_step_size must be >= 1");
  require(batch >= 1, "batch must be >= 1");
  require(steps >= 0, "steps must be >= 0");
  require(m >= 1 && n >= 1, "m and n must be >= 1");
  require(gamma > 0 && gamma <= 1, "gamma must be in (0, 1]");
  require(height > 0 && width > 0 && height % 16 == 0 && width % 16 == 0, "height and width must be multiples of 16");
  require(d_min > 0 && d_max > d_min, "need 0 < d_min < d_max");
  require(cap > 0, "cap must be positive");
  require(clip_norm > 0, "clip_norm must be positive");
  require(train_frac > 0 && train_frac < 1, "train_frac must be in (0, 1)");
  require(!neighbor_offsets.empty(), "neighbor_offsets must not be empty");
  std::set<int> seen;
  for (int o : neighbor_offsets) require(o != 0 && seen.insert(o).second, "neighbor offsets must be distinct and nonzero");
  require(pairs >= 1 && pairs <= neighbors(), "pairs must be in [1, number of neighbours]");
  require(depth_delta_scale > 0 && pose_delta_scale > 0, "delta scales must be positive");
}

ModelConfig TrainConfig::model() const {
  ModelConfig mc;
  mc.height = height;
  mc.width = width;
  mc.d_min = d_min;
  mc.d_max = d_max;
  mc.depth_delta_scale = depth_delta_scale;
  mc.pose_delta_scale = pose_delta_scale;
  return mc;
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> assigned;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw std::invalid_argument(where + "unknown key '" + key + "'");
    if (!assigned.insert(key).second) throw std::invalid_argument(where + "duplicate key '" + key + "'");
    try {
      it->second(c, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream out;
  auto num = [&](const char* key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << key << " = " << buf << '\n';
  };
  num("lr", c.lr);
  num("beta1", c.beta1);
  num("beta2", c.beta2);
  num("eps", c.eps);
  num("lr_gamma", c.lr_gamma);
  out << "lr_step_size = " << c.lr_step_size << '\n';
  out << "lr_step_unit = " << (c.lr_step_unit == DecayUnit::kSteps ? "steps" : "epochs") << '\n';
  out << "batch = " << c.batch << '\n';
  out << "steps = " << c.steps << '\n';
  out << "m = " << c.m << '\n';
  out << "n = " << c.n << '\n';
  num("gamma", c.gamma);
  out << "seed = " << c.seed << '\n';
  out << "split_seed = " << c.split_seed << '\n';
  out << "height = " << c.height << '\n';
  out << "width = " << c.width << '\n';
  num("d_min", c.d_min);
  num("d_max", c.d_max);
  num("cap", c.cap);
  num("clip_norm", c.clip_norm);
  num("train_frac", c.train_frac);
  out << "neighbor_offsets = ";
  for (std::size_t i = 0; i < c.neighbor_offsets.size(); ++i) out << (i ? "," : "") << c.neighbor_offsets[i];
  out << '\n';
  out << "pairs = " << c.pairs << '\n';
  num("depth_delta_scale", c.depth_delta_scale);
  num("pose_delta_scale", c.pose_delta_scale);
  return out.str();
}

}  // namespace ctad
