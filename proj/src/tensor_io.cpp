/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "uniformer/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace uniformer {

namespace {

constexpr std::array<char, 4> kTensorMagic{'U', 'F', 'T', '1'};
constexpr std::array<char, 4> kNamedMagic{'U', 'F', 'P', '1'};

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw Error("truncated tensor stream");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void expect_magic(std::istream& in, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  in.read(got.data(), got.size());
  if (!in || got != magic) {
    throw Error(std::string("bad magic: expected '") + std::string(magic.data(), 4) + "'");
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic.data(), kTensorMagic.size());
  out.put(static_cast<char>(t.dtype()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  for (double v : t.values()) {
    if (t.dtype() == DType::f32) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!out) throw Error("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  expect_magic(in, kTensorMagic);
  const int tag = in.get();
  if (tag != 0 && tag != 1) throw Error("unknown dtype tag " + std::to_string(tag));
  const auto dtype = static_cast<DType>(tag);
  const auto rank = get_le<std::uint32_t>(in);
  Shape shape(rank);
  for (auto& e : shape) e = get_le<std::uint32_t>(in);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) {
    if (dtype == DType::f32) {
      v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in)));
    } else {
      v = std::bit_cast<double>(get_le<std::uint64_t>(in));
    }
  }
  return Tensor(std::move(shape), std::move(values), dtype);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  auto out = open_out(path);
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_tensor(in);
}

void write_named_tensors(std::ostream& out, NamedTensors tensors) {
  std::sort(tensors.begin(), tensors.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  out.write(kNamedMagic.data(), kNamedMagic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t);
  }
}

NamedTensors read_named_tensors(std::istream& in) {
  expect_magic(in, kNamedMagic);
  const auto count = get_le<std::uint32_t>(in);
  NamedTensors result;
  result.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw Error("truncated record name");
    result.emplace_back(std::move(name), read_tensor(in));
  }
  return result;
}

void save_named_tensors(const std::filesystem::path& path, NamedTensors tensors) {
  auto out = open_out(path);
  write_named_tensors(out, std::move(tensors));
}

NamedTensors load_named_tensors(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_named_tensors(in);
}

}  // namespace uniformer
