#include "aqa/sequence.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "aqa/error.hpp"

namespace aqa {

namespace fs = std::filesystem;

std::vector<PixelBox> Sequence::boxes() const {
  std::vector<PixelBox> out;
  out.reserve(static_cast<std::size_t>(length()));
  for (int i = 0; i < length(); ++i) out.push_back(box(i));
  return out;
}

DiskSequence::DiskSequence(const fs::path& dir) : name_(dir.filename().string()) {
  if (!fs::is_directory(dir)) throw IoError("sequence directory not found: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") frames_.push_back(entry.path());
  }
  std::sort(frames_.begin(), frames_.end());
  if (frames_.empty()) throw IoError(dir.string() + ": no .ppm frames");
  const fs::path gt = dir / "groundtruth.txt";
  if (fs::exists(gt)) boxes_ = read_boxes(gt);
  if (boxes_.empty()) throw IoError(dir.string() + ": missing or empty groundtruth.txt");
}

Image DiskSequence::frame(int index) const {
  if (index < 0 || index >= length()) throw ContractError("frame index out of range: " + std::to_string(index));
  return read_ppm(frames_[static_cast<std::size_t>(index)]);
}

PixelBox DiskSequence::box(int index) const {
  if (index < 0 || index >= static_cast<int>(boxes_.size())) {
    throw IoError(name_ + ": no ground truth for frame " + std::to_string(index + 1));
  }
  return boxes_[static_cast<std::size_t>(index)];
}

std::vector<PixelBox> read_boxes(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<PixelBox> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::replace_if(line.begin(), line.end(), [](char c) { return c == ',' || c == '\t'; }, ' ');
    if (line.find_first_not_of(" \r") == std::string::npos) continue;
    std::istringstream fields(line);
    PixelBox b;
    if (!(fields >> b.x >> b.y >> b.w >> b.h)) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected x,y,w,h");
    }
    out.push_back(b);
  }
  return out;
}

void write_boxes(const std::vector<PixelBox>& boxes, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  char buf[128];
  for (const PixelBox& b : boxes) {
    std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f,%.4f\n", b.x, b.y, b.w, b.h);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_sequence(const Sequence& seq, const fs::path& dir) {
  fs::create_directories(dir);
  char name[32];
  for (int i = 0; i < seq.length(); ++i) {
    std::snprintf(name, sizeof name, "%08d.ppm", i + 1);
    write_ppm(seq.frame(i), dir / name);
  }
  write_boxes(seq.boxes(), dir / "groundtruth.txt");
}

}  // namespace aqa
