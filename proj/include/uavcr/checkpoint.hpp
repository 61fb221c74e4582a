#pragma once

// Checkpoint layout (all integers little-endian):
//
//   bytes 0..7    magic "UAVCRDGN"
//   bytes 8..15   uint64 length L of the JSON header
//   next L bytes  UTF-8 JSON header:
//                   {"format_version": 1,
//                    "config": {...DgnConfig...},
//                    "tensors": [{"name": "...", "rows": r, "cols": c}, ...]}
//   remainder     IEEE-754 binary64 values, little-endian, tensor by tensor in
//                 header order, each tensor row-major.
//
// Tensor order is DgnParams::for_each order: encoder.w1, encoder.b1,
// encoder.w2, encoder.b2, then per conv layer l the heads
// conv<l>.head<m>.{wq,wk,wv} followed by conv<l>.{w_out,b_out}, and finally
// q_head.{w,b}.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uavcr/dgn.hpp"
#include "uavcr/errors.hpp"

namespace uavcr {

inline constexpr std::array<char, 8> kCheckpointMagic{'U', 'A', 'V', 'C', 'R', 'D', 'G', 'N'};
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return v;
}

}  // namespace detail

inline std::string serialize_params(const DgnConfig& cfg, const DgnParams& params) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = cfg;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  params.for_each([&](const std::string& name, const Matrix& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  const std::string text = header.dump();

  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u64(out, text.size());
  out += text;
  params.for_each([&](const std::string&, const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put_u64(out, std::bit_cast<std::uint64_t>(m(r, c)));
  });
  return out;
}

struct Checkpoint {
  DgnConfig config;
  DgnParams params;
};

inline Checkpoint deserialize_params(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 8) != 0) {
    throw LoadError("checkpoint: bad magic");
  }
  const std::uint64_t len = detail::get_u64(bytes.data() + 8);
  if (len > bytes.size() - 16) throw LoadError("checkpoint: truncated header");
  nlohmann::json header;
  Checkpoint ck;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
    if (header.at("format_version").get<int>() != kCheckpointVersion) throw LoadError("checkpoint: unsupported version");
    ck.config = header.at("config").get<DgnConfig>();
    ck.params = make_params(ck.config);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const DomainError& e) {
    throw LoadError(std::string("checkpoint: invalid config: ") + e.what());
  }

  std::vector<std::pair<std::string, std::pair<long, long>>> expected;
  ck.params.for_each([&](const std::string& name, const Matrix& m) {
    expected.push_back({name, {static_cast<long>(m.rows()), static_cast<long>(m.cols())}});
  });
  const auto& tensors = header.at("tensors");
  if (tensors.size() != expected.size()) throw LoadError("checkpoint: tensor count does not match config");
  for (std::size_t k = 0; k < expected.size(); ++k) {
    const auto& t = tensors[k];
    if (t.at("name").get<std::string>() != expected[k].first ||
        t.at("rows").get<long>() != expected[k].second.first || t.at("cols").get<long>() != expected[k].second.second) {
      throw LoadError("checkpoint: tensor " + expected[k].first + " has unexpected name or shape");
    }
  }

  std::size_t pos = 16 + len;
  const std::size_t payload = ck.params.count() * 8;
  if (bytes.size() - pos != payload) throw LoadError("checkpoint: payload size does not match header");
  ck.params.for_each([&](const std::string&, Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = std::bit_cast<double>(detail::get_u64(bytes.data() + pos));
        pos += 8;
      }
  });
  return ck;
}

inline void save_params(const std::string& path, const DgnConfig& cfg, const DgnParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  const std::string bytes = serialize_params(cfg, params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

// Loads weights for a network described by `expected`. Only the shape-defining
// fields must agree; training hyperparameters may differ.
inline DgnParams load_params(const std::string& path, const DgnConfig& expected) {
  Checkpoint ck = read_checkpoint(path);
  const DgnParams want = make_params(expected);
  if (!want.same_shape(ck.params)) {
    throw LoadError("checkpoint shapes do not match the configured network (hidden_dim=" +
                    std::to_string(ck.config.hidden_dim) + " in file, " + std::to_string(expected.hidden_dim) +
                    " configured)");
  }
  return std::move(ck.params);
}

}  // namespace uavcr
