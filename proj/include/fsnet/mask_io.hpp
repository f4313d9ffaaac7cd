#pragma once

// Channel masks as JSON:
//   {"channels": C, "keep_count": K, "kept": [i, ...],
//    "provenance": ["kept" | "zero_map" | "high_redundancy", ...],
//    "representative": [max MI per channel, ...]}

#include <fstream>
#include <string>

#include <json.hpp>

#include "fsnet/error.hpp"
#include "fsnet/feature_select.hpp"

namespace fsnet {

inline nlohmann::json mask_to_json(const ChannelMask& m) {
  nlohmann::json j;
  j["channels"] = m.keep.size();
  j["keep_count"] = m.kept_count;
  j["kept"] = m.kept_indices();
  auto& prov = j["provenance"] = nlohmann::json::array();
  for (auto f : m.provenance) prov.push_back(to_string(f));
  j["representative"] = m.representative;
  return j;
}

inline ChannelFate parse_channel_fate(const std::string& s) {
  if (s == "kept") return ChannelFate::kept;
  if (s == "zero_map") return ChannelFate::zero_map;
  if (s == "high_redundancy") return ChannelFate::high_redundancy;
  throw FormatError("mask: unknown channel provenance '" + s + "'");
}

/// Only "channels" and "kept" are required; provenance defaults to kept/high_redundancy.
inline ChannelMask mask_from_json(const nlohmann::json& j) {
  try {
    const std::size_t C = j.at("channels").get<std::size_t>();
    ChannelMask m{std::vector<bool>(C, false), 0,
                  std::vector<ChannelFate>(C, ChannelFate::high_redundancy),
                  std::vector<double>(C, 0.0)};
    for (const auto& v : j.at("kept")) {
      const auto i = v.get<std::size_t>();
      if (i >= C) throw FormatError("mask: kept index " + std::to_string(i) + " >= channels " +
                                    std::to_string(C));
      if (m.keep[i]) throw FormatError("mask: channel " + std::to_string(i) + " listed twice");
      m.keep[i] = true;
      m.provenance[i] = ChannelFate::kept;
      ++m.kept_count;
    }
    if (j.contains("keep_count") && j["keep_count"].get<std::size_t>() != m.kept_count) {
      throw FormatError("mask: keep_count " + j["keep_count"].dump() + " but " +
                        std::to_string(m.kept_count) + " indices listed");
    }
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      if (p.size() != C) throw FormatError("mask: provenance needs one entry per channel");
      for (std::size_t i = 0; i < C; ++i) {
        m.provenance[i] = parse_channel_fate(p[i].get<std::string>());
        if ((m.provenance[i] == ChannelFate::kept) != m.keep[i]) {
          throw FormatError("mask: provenance of channel " + std::to_string(i) +
                            " disagrees with the kept list");
        }
      }
    }
    if (j.contains("representative")) {
      const auto r = j["representative"].get<std::vector<double>>();
      if (r.size() != C) throw FormatError("mask: representative needs one entry per channel");
      m.representative = r;
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("mask: ") + e.what());
  }
}

inline void save_mask(const std::string& path, const ChannelMask& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << mask_to_json(m).dump(2) << '\n';
}

inline ChannelMask load_mask(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mask " + path);
  try {
    return mask_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace fsnet
