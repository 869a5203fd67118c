#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "latro/common.hpp"

namespace latro {

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

// Named-segment layout over a flat array. Segments must tile [0, total)
// exactly once, in order, with no gaps or overlaps.
class Layout {
 public:
  Layout() = default;
  explicit Layout(std::vector<Segment> segments) : segments_(std::move(segments)) {
    std::size_t cursor = 0;
    for (const Segment& s : segments_) {
      require(s.offset == cursor, "layout gap/overlap at segment '" + s.name + "'");
      require(s.length > 0, "empty segment '" + s.name + "'");
      cursor += s.length;
    }
    total_ = cursor;
  }

  std::size_t total() const { return total_; }
  const std::vector<Segment>& segments() const { return segments_; }

  const Segment& segment(const std::string& name) const {
    for (const Segment& s : segments_) {
      if (s.name == name) return s;
    }
    throw Error("no segment named '" + name + "'");
  }

  bool operator==(const Layout& other) const { return segments_ == other.segments_; }

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(Layout layout)
      : layout_(std::move(layout)), values_(layout_.total(), 0.0) {}

  const Layout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double* segment_data(const std::string& name) {
    return values_.data() + layout_.segment(name).offset;
  }
  const double* segment_data(const std::string& name) const {
    return values_.data() + layout_.segment(name).offset;
  }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool is_finite() const { return all_finite(values_.data(), values_.size()); }

 private:
  Layout layout_;
  std::vector<double> values_;
};

// Flat gradient buffer with the same layout as its target ParameterVector.
// Accumulation is plain addition; reductions over accumulators must happen in
// a fixed index order so floating-point association is pinned.
class GradientAccumulator {
 public:
  GradientAccumulator() = default;
  explicit GradientAccumulator(const Layout& layout)
      : layout_(layout), values_(layout.total(), 0.0) {}

  const Layout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }
  long contribution_count() const { return contribution_count_; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }

  void reset() {
    std::fill(values_.begin(), values_.end(), 0.0);
    contribution_count_ = 0;
  }

  void note_contribution() { ++contribution_count_; }

  // In-place sum with another accumulator of identical layout.
  void add(const GradientAccumulator& other) {
    require(layout_ == other.layout_, "gradient accumulator layout mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    contribution_count_ += other.contribution_count_;
  }

  void scale(double s) {
    for (double& v : values_) v *= s;
  }

  bool is_finite() const { return all_finite(values_.data(), values_.size()); }

 private:
  Layout layout_;
  std::vector<double> values_;
  long contribution_count_ = 0;
};

}  // namespace latro
