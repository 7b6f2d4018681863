#ifndef CHAOSLAB_ERRORS_HPP
#define CHAOSLAB_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace chaoslab {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define CHAOSLAB_DEFINE_ERROR(Name)                          \
  struct Name : Error {                                      \
    explicit Name(const std::string& msg) : Error(msg) {}    \
  }

CHAOSLAB_DEFINE_ERROR(JumpAtMinusOne);
CHAOSLAB_DEFINE_ERROR(EqualExponents);
CHAOSLAB_DEFINE_ERROR(UnknownTheorem);
CHAOSLAB_DEFINE_ERROR(NonZeroMean);
CHAOSLAB_DEFINE_ERROR(DegenerateStep);
CHAOSLAB_DEFINE_ERROR(NonPSD);
CHAOSLAB_DEFINE_ERROR(ThetaBoundViolated);
CHAOSLAB_DEFINE_ERROR(BudgetExceeded);
CHAOSLAB_DEFINE_ERROR(NotConverged);
CHAOSLAB_DEFINE_ERROR(DivergenceDetected);
CHAOSLAB_DEFINE_ERROR(DimensionMismatch);
CHAOSLAB_DEFINE_ERROR(SizeMismatch);
CHAOSLAB_DEFINE_ERROR(SpaceMismatch);
CHAOSLAB_DEFINE_ERROR(QTooSmall);
CHAOSLAB_DEFINE_ERROR(ConfigError);

#undef CHAOSLAB_DEFINE_ERROR

}  // namespace chaoslab

#endif
