#pragma once

#include <string>
#include <vector>

#include "oats/common.hpp"

namespace oats::checkpoint {

// Binary checkpoint format shared by the forecaster and the generator:
// magic "OATS1", then per tensor: name length (u32 LE), UTF-8 name,
// rank (u32 LE), each dim (u32 LE), payload (f32 LE, row-major).
constexpr char kMagic[5] = {'O', 'A', 'T', 'S', '1'};

struct NamedTensor {
    std::string name;
    std::vector<int> dims;
    Vec data;
};

void save_checkpoint(const std::string& path, const std::vector<ConstTensorRef>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

// Copies loaded tensors into the destination refs, matching by name and shape.
void apply_checkpoint(const std::vector<TensorRef>& dst, const std::vector<NamedTensor>& src);

}  // namespace oats::checkpoint
