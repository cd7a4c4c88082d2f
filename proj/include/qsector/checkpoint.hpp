#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsector/tape.hpp"

namespace qsector::ad {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary layout, all integers and floats little-endian:
//   "QSCK" | u32 version | u32 n_meta | n_meta x (str key, str value)
//   | u32 n_groups | per group: str group, u32 n_tensors,
//     per tensor: str name, u32 rank, rank x u64 dim, numel x f64
//   | u64 FNV-1a checksum of every preceding byte
// where str is u32 length followed by UTF-8 bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  // Ordered groups, e.g. "actor" and "critic".
  std::vector<std::pair<std::string, std::vector<NamedTensor>>> groups;

  const std::vector<NamedTensor>& group(const std::string& name) const;
};

std::vector<NamedTensor> snapshot(const ParameterSet& params);
// Copies values into params by name; every parameter must be present with
// an identical shape.
void restore(ParameterSet& params, const std::vector<NamedTensor>& tensors);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

}  // namespace qsector::ad
