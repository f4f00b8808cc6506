// SPDX-License-Identifier: Apache-2.0

#include "moelab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "moelab/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace moelab {

namespace {

template <class T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ConfigError(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ModelConfig& cfg, ModelParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("checkpoint: cannot open '" + path + "' for writing");

  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put(os, kCheckpointVersion);
  put(os, static_cast<uint64_t>(config_json.size()));
  os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));

  uint64_t n_params = 0;
  visit_params(cfg, params, [&n_params](const std::string&, Tensor&) { ++n_params; });
  put(os, n_params);

  visit_params(cfg, params, [&os](const std::string& name, Tensor& t) {
    put(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(os, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) put(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  });
  if (!os) throw ConfigError("checkpoint: write to '" + path + "' failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::function<ModelConfig(const std::string&)>& rebuild) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint: cannot open '" + path + "'");

  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ConfigError("checkpoint: '" + path + "' has no checkpoint header");
  }
  const auto version = get<uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto cfg_len = get<uint64_t>(is, "config length");
  std::string config_json(cfg_len, '\0');
  is.read(config_json.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw ConfigError("checkpoint: truncated config block");

  LoadedCheckpoint out;
  out.config_json = config_json;
  out.config = rebuild(config_json);
  out.params = make_params(out.config);

  const auto n_params = get<uint64_t>(is, "parameter count");
  std::unordered_map<std::string, Tensor*> by_name;
  std::vector<std::string> order;
  visit_params(out.config, out.params, [&](const std::string& name, Tensor& t) {
    by_name[name] = &t;
    order.push_back(name);
  });
  if (n_params != order.size()) {
    throw ConfigError("checkpoint: holds " + std::to_string(n_params) + " arrays, config expects " +
                      std::to_string(order.size()));
  }

  for (uint64_t i = 0; i < n_params; ++i) {
    const auto name_len = get<uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw ConfigError("checkpoint: truncated parameter name");
    const auto rank = get<uint32_t>(is, "rank");
    Shape shape(rank);
    int64_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      shape[r] = static_cast<int64_t>(get<uint64_t>(is, "extent"));
      numel *= shape[r];
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint: unexpected array '" + name + "'");
    Tensor& t = *it->second;
    if (t.shape() != shape) {
      throw ConfigError("checkpoint: '" + name + "' has shape " + shape_str(shape) +
                        ", config expects " + shape_str(t.shape()));
    }
    is.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!is) throw ConfigError("checkpoint: truncated data for '" + name + "'");
  }
  return out;
}

}  // namespace moelab
