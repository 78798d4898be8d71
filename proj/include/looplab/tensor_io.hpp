// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "looplab/tensor.hpp"

namespace looplab::io {

// Container layout: 8-byte magic, u64 little-endian JSON header length, JSON
// header {"version", "tensors":[{"name","shape","dtype"}], "config"}, then the
// tensors' f64 little-endian payloads concatenated in header order.
inline constexpr char kMagic[8] = {'L', 'O', 'O', 'P', 'T', 'N', 'S', 'R'};
inline constexpr int kFormatVersion = 1;

struct NamedTensor {
    std::string name;
    ad::Tensor tensor;
};

struct TensorFile {
    std::vector<NamedTensor> tensors;
    nlohmann::json config;

    const ad::Tensor &get(const std::string &name) const;
};

void save_tensors(const std::string &path, const std::vector<NamedTensor> &tensors,
                  const nlohmann::json &config = nlohmann::json::object());
TensorFile load_tensors(const std::string &path);

void save_tensor(const std::string &path, const ad::Tensor &tensor);
ad::Tensor load_tensor(const std::string &path);

}  // namespace looplab::io
