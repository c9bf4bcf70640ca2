#pragma once

#include <stdexcept>
#include <string>

namespace mocap {

/// Broad failure classes. The CLI maps each to an exit code.
enum class ErrorKind
{
  Config,
  Data,
  Numerical,
};

class Error : public std::runtime_error
{
public:
  Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(what), mKind(kind)
  {
  }

  ErrorKind kind() const { return mKind; }

private:
  ErrorKind mKind;
};

#define MOCAP_DEFINE_ERROR(Name, Kind)                                         \
  class Name : public Error                                                    \
  {                                                                            \
  public:                                                                      \
    explicit Name(const std::string& what)                                     \
      : Error(ErrorKind::Kind, std::string(#Name ": ") + what)                 \
    {                                                                          \
    }                                                                          \
  };

MOCAP_DEFINE_ERROR(ConfigError, Config)

MOCAP_DEFINE_ERROR(ParseError, Data)
MOCAP_DEFINE_ERROR(ValidationError, Data)
MOCAP_DEFINE_ERROR(SchemaVersionError, Data)
MOCAP_DEFINE_ERROR(CameraMismatch, Data)
MOCAP_DEFINE_ERROR(ShapeMismatch, Data)
MOCAP_DEFINE_ERROR(TopologyError, Data)
MOCAP_DEFINE_ERROR(InsufficientViews, Data)
MOCAP_DEFINE_ERROR(InsufficientMarkers, Data)
MOCAP_DEFINE_ERROR(EmptyCalibrationList, Data)
MOCAP_DEFINE_ERROR(TooFewEvents, Data)
MOCAP_DEFINE_ERROR(UnknownPreset, Config)

MOCAP_DEFINE_ERROR(NonPositiveDepth, Numerical)
MOCAP_DEFINE_ERROR(NoConvergence, Numerical)
MOCAP_DEFINE_ERROR(DegenerateGeometry, Numerical)
MOCAP_DEFINE_ERROR(NonFiniteParameters, Numerical)
MOCAP_DEFINE_ERROR(DivergenceDetected, Numerical)

#undef MOCAP_DEFINE_ERROR

} // namespace mocap
