#pragma once

#include <stdexcept>
#include <string>

namespace padlock {

// Base class for all padlock failures. The runtime is fail-closed: a caller
// that cannot obtain valid padding parameters must refuse to enter the
// protected body rather than run it unprotected.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Parameter store problems (missing file, parse error, invariant violation).
class ParamsError : public Error {
public:
    using Error::Error;
};

// Lookup of a function id that has no record in the store.
class UnknownFunctionError : public ParamsError {
public:
    using ParamsError::ParamsError;
};

// Another writer holds the params advisory lock; the operation can be retried.
class LockBusyError : public ParamsError {
public:
    using ParamsError::ParamsError;
};

// The stream cipher exhausted its 2^32 block counter under one (key, nonce).
class ReseedRequiredError : public Error {
public:
    using Error::Error;
};

// The wait loop has no stable period on this machine; padding must stay off.
class CalibrationError : public Error {
public:
    using Error::Error;
};

// Scheduler / allocator rule violations inside the OS model.
class SimError : public Error {
public:
    using Error::Error;
};

}  // namespace padlock
