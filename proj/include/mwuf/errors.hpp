#pragma once

#include <stdexcept>
#include <string>

namespace mwuf {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MWUF_ERROR_TYPE(NAME)        \
  class NAME : public Error {        \
   public:                           \
    using Error::Error;              \
  };

MWUF_ERROR_TYPE(DimensionError)   // tensor shape mismatch
MWUF_ERROR_TYPE(LookupError)      // embedding index out of range
MWUF_ERROR_TYPE(LabelError)       // label outside {0,1}
MWUF_ERROR_TYPE(UsageError)       // API misuse (empty dataset, non-scalar loss, ...)
MWUF_ERROR_TYPE(StateError)       // optimizer state does not match its parameter
MWUF_ERROR_TYPE(NumericError)     // NaN/Inf produced in forward or backward
MWUF_ERROR_TYPE(SchemaError)      // bad feature schema or missing column
MWUF_ERROR_TYPE(ParseError)       // malformed input file
MWUF_ERROR_TYPE(ProtocolError)    // dataset split yields no usable items
MWUF_ERROR_TYPE(MetricError)      // metric undefined (single-class AUC, base AUC 0.5)
MWUF_ERROR_TYPE(ConfigError)      // unknown or invalid config key
MWUF_ERROR_TYPE(CorruptionError)  // checkpoint fails checksum or truncated
MWUF_ERROR_TYPE(ContractError)    // frozen-model contract violated
MWUF_ERROR_TYPE(StageError)       // pipeline stages run out of order

#undef MWUF_ERROR_TYPE

}  // namespace mwuf
