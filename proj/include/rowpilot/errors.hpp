#pragma once

#include <stdexcept>
#include <string>

namespace rowpilot {

// Expected, recoverable perception failures. Callers choose a fallback
// (IMU heading hold, keep the previous colour range, ...).
class DetectionError : public std::runtime_error {
 public:
  enum class Kind { NoSecondCropline, NoVanishingPoint, DegenerateHistogram };

  DetectionError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace rowpilot
