#pragma once

#include <map>
#include <string>
#include <vector>

#include "cdm/optim.hpp"
#include "cdm/tensor.hpp"

namespace cdm {

// On-disk tensor container shared by every pipeline artifact that holds model
// or statistics state. Text header, then one raw little-endian float64 block:
//
//   cdm.checkpoint.v1
//   module <name>
//   meta <key> <value>            (zero or more; value is a single token)
//   tensor <name> <offset> <rank> <d0> ... <dk>
//   payload f64le <count>
//   end
//   <count * 8 bytes>
//
// Offsets are element offsets into the payload; tensors are stored in
// declaration order and must tile the payload exactly.
struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    std::string module;
    std::map<std::string, std::string> meta;
    std::vector<CheckpointTensor> tensors;

    bool has_tensor(const std::string& name) const;
    const CheckpointTensor& tensor(const std::string& name) const;
    const std::string& meta_value(const std::string& key) const;
    std::size_t meta_size(const std::string& key) const;
    std::uint64_t meta_u64(const std::string& key) const;
    double meta_double(const std::string& key) const;
    std::vector<std::size_t> meta_id_list(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Snapshots live parameters into a checkpoint / restores them in place.
// Loading checks that every parameter is present with a matching shape.
Checkpoint checkpoint_from_params(const std::string& module,
                                  const std::vector<NamedTensor>& params);
void load_into_params(const Checkpoint& ckpt, const std::vector<NamedTensor>& params);

// Joins ids as "3,7,11" for checkpoint meta round-trips.
std::string join_ids(const std::vector<std::size_t>& ids);

}  // namespace cdm
