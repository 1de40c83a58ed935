#include "brve/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace brve {

std::string serialize_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "levels=" << cfg.levels << "\n"
     << "base_channels=" << cfg.base_channels << "\n"
     << "blocks_per_level=" << cfg.blocks_per_level << "\n"
     << "daca_k=" << cfg.daca_k << "\n"
     << "daca_enabled=" << (cfg.daca_enabled ? 1 : 0) << "\n"
     << "window=" << cfg.window << "\n"
     << "stride=" << cfg.stride << "\n"
     << "in_channels=" << cfg.in_channels << "\n"
     << "out_channels=" << cfg.out_channels << "\n";
  return os.str();
}

ModelConfig parse_config(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    int v = 0;
    try {
      std::size_t used = 0;
      v = std::stoi(val, &used);
      if (used != val.size()) throw std::invalid_argument(val);
    } catch (const std::exception&) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": value '" + val +
                                  "' for key '" + key + "' is not an integer");
    }
    if (key == "levels")
      cfg.levels = v;
    else if (key == "base_channels")
      cfg.base_channels = v;
    else if (key == "blocks_per_level")
      cfg.blocks_per_level = v;
    else if (key == "daca_k")
      cfg.daca_k = v;
    else if (key == "daca_enabled")
      cfg.daca_enabled = v != 0;
    else if (key == "window")
      cfg.window = v;
    else if (key == "stride")
      cfg.stride = v;
    else if (key == "in_channels")
      cfg.in_channels = v;
    else if (key == "out_channels")
      cfg.out_channels = v;
    else
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" +
                                  key + "'");
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config(buf.str());
}

std::string architecture_string(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "arch1;levels=" << cfg.levels << ";base_channels=" << cfg.base_channels
     << ";blocks_per_level=" << cfg.blocks_per_level << ";daca_k=" << cfg.daca_k
     << ";daca_enabled=" << (cfg.daca_enabled ? 1 : 0) << ";window=" << cfg.window
     << ";in_channels=" << cfg.in_channels << ";out_channels=" << cfg.out_channels;
  return os.str();
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace brve
