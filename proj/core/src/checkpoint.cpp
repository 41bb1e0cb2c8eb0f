#include "atn/checkpoint.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "atn/binary_io.hpp"

namespace atn {
namespace {

constexpr std::string_view kMagic = "ATNCKPT1";
constexpr int kVersion = 1;

std::uint64_t parse_u64(std::string_view text, std::string_view what) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw FormatError(fmt::format("checkpoint: bad {} '{}'", what, text));
  return v;
}

std::string moment_name(const std::string& name, int which) { return fmt::format("{}#m{}", name, which); }

void copy_into(const Tensor& src, Tensor& dst, const std::string& name) {
  if (src.shape() != dst.shape()) {
    throw FormatError(fmt::format("checkpoint tensor '{}' has shape {} but the model expects {}", name,
                                  shape_string(src.shape()), shape_string(dst.shape())));
  }
  std::copy(src.values().begin(), src.values().end(), dst.values().begin());
}

}  // namespace

std::uint64_t config_hash(const KeyValues& config) {
  std::vector<std::string> lines;
  lines.reserve(config.size());
  for (const auto& [k, v] : config) lines.push_back(k + "=" + v + "\n");
  std::sort(lines.begin(), lines.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& line : lines) {
    for (unsigned char c : line) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

const std::string* find_value(const KeyValues& kv, std::string_view key) {
  for (const auto& [k, v] : kv) {
    if (k == key) return &v;
  }
  return nullptr;
}

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& Checkpoint::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) throw FormatError(fmt::format("checkpoint has no tensor '{}'", name));
  return *t;
}

std::string Checkpoint::state_value(std::string_view key) const {
  const std::string* v = find_value(state, key);
  if (!v) throw FormatError(fmt::format("checkpoint has no state entry '{}'", key));
  return *v;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ostringstream manifest;
  manifest << "version " << kVersion << "\n";
  manifest << "kind " << ckpt.kind << "\n";
  manifest << "dtype f32\n";
  manifest << "seed " << ckpt.seed << "\n";
  manifest << fmt::format("config_hash {:016x}\n", config_hash(ckpt.config));
  for (const auto& [k, v] : ckpt.config) manifest << "config." << k << " " << v << "\n";
  for (const auto& [k, v] : ckpt.state) manifest << "state." << k << " " << v << "\n";
  for (const auto& [name, t] : ckpt.tensors) {
    manifest << "tensor " << name << " " << t.rank();
    for (auto d : t.shape()) manifest << " " << d;
    manifest << "\n";
  }
  const std::string text = manifest.str();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
    io::write_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      for (float v : t.values()) io::write_le(out, v);
    }
    if (!out) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path.string());
  std::string magic(kMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kMagic) throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  const auto len = io::read_le<std::uint64_t>(in);
  if (len > (1ULL << 30)) throw FormatError(path.string() + ": implausible manifest length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(path.string() + ": truncated manifest");

  Checkpoint ckpt;
  std::string stored_hash;
  std::vector<std::pair<std::string, Shape>> shapes;
  std::istringstream lines(text);
  std::string line;
  bool have_version = false;
  while (std::getline(lines, line)) {
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string value = sp == std::string::npos ? std::string() : line.substr(sp + 1);
    if (key == "version") {
      if (parse_u64(value, "version") != kVersion) throw FormatError("unsupported checkpoint version " + value);
      have_version = true;
    } else if (key == "kind") {
      ckpt.kind = value;
    } else if (key == "dtype") {
      if (value != "f32") throw FormatError("unsupported checkpoint dtype " + value);
    } else if (key == "seed") {
      ckpt.seed = parse_u64(value, "seed");
    } else if (key == "config_hash") {
      stored_hash = value;
    } else if (key.starts_with("config.")) {
      ckpt.config.emplace_back(key.substr(7), value);
    } else if (key.starts_with("state.")) {
      ckpt.state.emplace_back(key.substr(6), value);
    } else if (key == "tensor") {
      std::istringstream fields(value);
      std::string name;
      std::size_t rank = 0;
      fields >> name >> rank;
      Shape shape(rank);
      for (auto& d : shape) fields >> d;
      if (!fields) throw FormatError("malformed tensor line: " + line);
      shapes.emplace_back(name, shape);
    } else if (!line.empty()) {
      throw FormatError("unknown checkpoint manifest key '" + key + "'");
    }
  }
  if (!have_version) throw FormatError(path.string() + ": manifest lacks a version");
  if (stored_hash != fmt::format("{:016x}", config_hash(ckpt.config))) {
    throw FormatError(path.string() + ": config hash does not match the embedded config");
  }
  for (auto& [name, shape] : shapes) {
    Tensor t(shape);
    for (auto& v : t.values()) v = io::read_le<float>(in);
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes after tensors");
  return ckpt;
}

void verify_config(const Checkpoint& ckpt, const KeyValues& config) {
  if (config_hash(ckpt.config) != config_hash(config)) {
    throw FormatError(fmt::format("checkpoint config hash {:016x} does not match the requested config {:016x}",
                                  config_hash(ckpt.config), config_hash(config)));
  }
}

void store_parameters(Checkpoint& ckpt, const ParamRefs<float>& params, const BufferRefs<float>& buffers,
                      bool optimizer_state) {
  for (const auto* p : params) {
    ckpt.tensors.emplace_back(p->name, p->value.cast<float>());
    if (optimizer_state) {
      ckpt.tensors.emplace_back(moment_name(p->name, 1), p->first_moment);
      ckpt.tensors.emplace_back(moment_name(p->name, 2), p->second_moment);
      ckpt.state.emplace_back("steps." + p->name, std::to_string(p->step_count));
    }
  }
  for (const auto& b : buffers) ckpt.tensors.emplace_back(b.name, *b.tensor);
}

void load_parameters(const Checkpoint& ckpt, const ParamRefs<float>& params, const BufferRefs<float>& buffers,
                     bool optimizer_state) {
  for (auto* p : params) {
    copy_into(ckpt.at(p->name), p->value, p->name);
    if (optimizer_state) {
      copy_into(ckpt.at(moment_name(p->name, 1)), p->first_moment, p->name);
      copy_into(ckpt.at(moment_name(p->name, 2)), p->second_moment, p->name);
      p->step_count = parse_u64(ckpt.state_value("steps." + p->name), "step count");
    }
  }
  for (const auto& b : buffers) copy_into(ckpt.at(b.name), *b.tensor, b.name);
}

}  // namespace atn
