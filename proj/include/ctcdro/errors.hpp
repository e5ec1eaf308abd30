#pragma once

#include <stdexcept>
#include <string>

namespace ctcdro {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CTCDRO_DEFINE_ERROR(Name)      \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

// ctc
CTCDRO_DEFINE_ERROR(NoValidAlignment);
CTCDRO_DEFINE_ERROR(OracleTooLarge);
CTCDRO_DEFINE_ERROR(InvalidLogProbs);
CTCDRO_DEFINE_ERROR(InvalidLabels);
// dro
CTCDRO_DEFINE_ERROR(DivisionByZero);
CTCDRO_DEFINE_ERROR(InvalidWeights);
// sampler
CTCDRO_DEFINE_ERROR(NotReady);
// data
CTCDRO_DEFINE_ERROR(InvalidSpec);
CTCDRO_DEFINE_ERROR(InvalidFractions);
CTCDRO_DEFINE_ERROR(DataError);
// model
CTCDRO_DEFINE_ERROR(InvalidDims);
CTCDRO_DEFINE_ERROR(DimMismatch);
CTCDRO_DEFINE_ERROR(ShapeMismatch);
// metrics
CTCDRO_DEFINE_ERROR(EmptyReference);
// trainer
CTCDRO_DEFINE_ERROR(ConfigInvalid);
CTCDRO_DEFINE_ERROR(NoEvals);

#undef CTCDRO_DEFINE_ERROR

}  // namespace ctcdro
