#include "atn/dataset.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "atn/binary_io.hpp"

namespace atn {

std::vector<std::size_t> Dataset::episode_offsets() const {
  std::vector<std::size_t> offsets{0};
  for (const auto& e : episodes) offsets.push_back(offsets.back() + e.length);
  return offsets;
}

std::vector<std::size_t> Dataset::episode_index() const {
  std::vector<std::size_t> index;
  index.reserve(records.size());
  for (std::size_t e = 0; e < episodes.size(); ++e) index.insert(index.end(), episodes[e].length, e);
  return index;
}

void Dataset::validate() const {
  std::size_t total = 0;
  for (const auto& e : episodes) total += e.length;
  if (total != records.size()) {
    throw FormatError(fmt::format("dataset episodes cover {} records but {} are present", total, records.size()));
  }
  for (const auto& r : records) {
    if (r.image.size() != height * width * 3 || r.seg.size() != height * width) {
      throw FormatError("dataset record has wrong image or segmentation size");
    }
  }
}

KinematicsVector round_to_float(const KinematicsVector& k) {
  auto a = k.as_array();
  for (auto& v : a) v = static_cast<double>(static_cast<float>(v));
  return KinematicsVector::from_array(a);
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir / "manifest.txt", std::ios::binary);
    if (!m) throw FormatError("cannot write " + (dir / "manifest.txt").string());
    m << "version 1\n";
    m << "resolution " << dataset.height << " " << dataset.width << "\n";
    m << fmt::format("hz {}\n", dataset.hz);
    m << "seeds";
    for (auto s : dataset.seeds) m << " " << s;
    m << "\n";
    m << "record_count " << dataset.records.size() << "\n";
    for (const auto& e : dataset.episodes) m << "episode " << e.length << " " << e.theme << " " << e.track_seed << "\n";
  }
  std::ofstream out(dir / "records.bin", std::ios::binary);
  if (!out) throw FormatError("cannot write " + (dir / "records.bin").string());
  for (const auto& r : dataset.records) {
    io::write_le(out, r.timestamp);
    io::write_le(out, r.steering_deg);
    for (double v : r.kinematics.as_array()) io::write_le(out, static_cast<float>(v));
    out.write(reinterpret_cast<const char*>(r.image.data()), static_cast<std::streamsize>(r.image.size()));
    out.write(reinterpret_cast<const char*>(r.seg.data()), static_cast<std::streamsize>(r.seg.size()));
  }
  if (!out) throw FormatError("failed writing " + (dir / "records.bin").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw FormatError("dataset manifest not found: " + (dir / "manifest.txt").string());
  Dataset ds;
  std::size_t count = 0;
  bool have_version = false;
  std::string line;
  while (std::getline(m, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "version") {
      int v = 0;
      ls >> v;
      if (v != 1) throw FormatError("unsupported dataset version " + std::to_string(v));
      have_version = true;
    } else if (key == "resolution") {
      ls >> ds.height >> ds.width;
    } else if (key == "hz") {
      ls >> ds.hz;
    } else if (key == "seeds") {
      std::uint64_t s;
      while (ls >> s) ds.seeds.push_back(s);
      if (!ls.eof()) throw FormatError("malformed manifest line: " + line);
      continue;
    } else if (key == "record_count") {
      ls >> count;
    } else if (key == "episode") {
      EpisodeInfo e;
      ls >> e.length >> e.theme >> e.track_seed;
      ds.episodes.push_back(e);
    } else {
      throw FormatError("unknown manifest key '" + key + "'");
    }
    if (ls.fail()) throw FormatError("malformed manifest line: " + line);
  }
  if (!have_version || ds.height == 0 || ds.width == 0) throw FormatError("incomplete dataset manifest");

  std::ifstream in(dir / "records.bin", std::ios::binary);
  if (!in) throw FormatError("dataset records not found: " + (dir / "records.bin").string());
  ds.records.resize(count);
  for (auto& r : ds.records) {
    r.timestamp = io::read_le<double>(in);
    r.steering_deg = io::read_le<float>(in);
    std::array<double, KinematicsVector::kSize> k{};
    for (auto& v : k) v = io::read_le<float>(in);
    r.kinematics = KinematicsVector::from_array(k);
    r.image.resize(ds.height * ds.width * 3);
    r.seg.resize(ds.height * ds.width);
    in.read(reinterpret_cast<char*>(r.image.data()), static_cast<std::streamsize>(r.image.size()));
    in.read(reinterpret_cast<char*>(r.seg.data()), static_cast<std::streamsize>(r.seg.size()));
    if (!in) throw FormatError("records.bin is truncated");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("records.bin has trailing bytes");
  ds.validate();
  return ds;
}

}  // namespace atn
