#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aqa/box.hpp"
#include "aqa/image.hpp"

namespace aqa {

// A video with one annotated target. Frames are 0-based.
class Sequence {
 public:
  virtual ~Sequence() = default;
  virtual std::string name() const = 0;
  virtual int length() const = 0;
  virtual Image frame(int index) const = 0;
  virtual PixelBox box(int index) const = 0;
  std::vector<PixelBox> boxes() const;
};

// Directory of numbered .ppm frames (lexicographic order) plus
// groundtruth.txt with one "x,y,w,h" line per frame.
class DiskSequence : public Sequence {
 public:
  explicit DiskSequence(const std::filesystem::path& dir);

  std::string name() const override { return name_; }
  int length() const override { return static_cast<int>(frames_.size()); }
  Image frame(int index) const override;
  PixelBox box(int index) const override;

 private:
  std::string name_;
  std::vector<std::filesystem::path> frames_;
  std::vector<PixelBox> boxes_;
};

// Lines of "x,y,w,h"; commas, tabs or spaces separate fields.
std::vector<PixelBox> read_boxes(const std::filesystem::path& path);
void write_boxes(const std::vector<PixelBox>& boxes, const std::filesystem::path& path);

// Writes frames as 00000001.ppm, 00000002.ppm, … and groundtruth.txt.
void write_sequence(const Sequence& seq, const std::filesystem::path& dir);

}  // namespace aqa
