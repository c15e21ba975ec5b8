#pragma once

#include <stdexcept>
#include <string>

namespace fedsplit {

// Root of every error raised by the library. The CLI maps ConfigError to exit
// code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid parameters, cut indices, or experiment combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor shape mismatches.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-order or malformed protocol interactions (stale caches, mixed
// payload kinds, empty data units, missing messages).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf escaped a numeric operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// AUROC requested on single-class truths.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Labels were about to leave a client that is supposed to keep them.
class PrivacyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Runs `body`, re-raising library errors with `context` prefixed to the
// message and the error type preserved.
template <typename Body>
decltype(auto) with_context(const std::string& context, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(context + ": " + e.what());
  } catch (const ProtocolError& e) {
    throw ProtocolError(context + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(context + ": " + e.what());
  } catch (const PrivacyError& e) {
    throw PrivacyError(context + ": " + e.what());
  }
}

}  // namespace fedsplit
