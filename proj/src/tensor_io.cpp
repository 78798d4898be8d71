// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "tensor files are little-endian");

namespace looplab::io {

const ad::Tensor &TensorFile::get(const std::string &name) const {
    for (const NamedTensor &t : tensors) {
        if (t.name == name) return t.tensor;
    }
    throw Error("tensor file: missing tensor '" + name + "'");
}

void save_tensors(const std::string &path, const std::vector<NamedTensor> &tensors, const nlohmann::json &config) {
    nlohmann::json header;
    header["version"] = kFormatVersion;
    header["config"] = config;
    header["tensors"] = nlohmann::json::array();
    for (const NamedTensor &t : tensors) {
        header["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"dtype", "f64"}});
    }
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    check(out.good(), "tensor file: cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char *>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const NamedTensor &t : tensors) {
        out.write(reinterpret_cast<const char *>(t.tensor.data()),
                  static_cast<std::streamsize>(t.tensor.size() * sizeof(double)));
    }
    check(out.good(), "tensor file: write failed for '" + path + "'");
}

TensorFile load_tensors(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "tensor file: cannot open '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    check(in.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0, "tensor file: bad magic in '" + path + "'");
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char *>(&hlen), sizeof(hlen));
    check(in.good() && hlen > 0 && hlen < (1u << 26), "tensor file: bad header length in '" + path + "'");
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    check(in.good(), "tensor file: truncated header in '" + path + "'");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const std::exception &e) {
        throw Error("tensor file: invalid header JSON in '" + path + "': " + e.what());
    }
    check(header.value("version", -1) == kFormatVersion,
          "tensor file: version mismatch in '" + path + "' (want " + std::to_string(kFormatVersion) + ")");

    TensorFile file;
    file.config = header.value("config", nlohmann::json::object());
    for (const auto &entry : header.at("tensors")) {
        check(entry.value("dtype", "") == "f64", "tensor file: unsupported dtype in '" + path + "'");
        std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
        ad::Tensor t(shape);
        in.read(reinterpret_cast<char *>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        check(in.good(), "tensor file: truncated payload in '" + path + "'");
        file.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
    }
    return file;
}

void save_tensor(const std::string &path, const ad::Tensor &tensor) { save_tensors(path, {{"tensor", tensor}}); }

ad::Tensor load_tensor(const std::string &path) { return load_tensors(path).get("tensor"); }

}  // namespace looplab::io
