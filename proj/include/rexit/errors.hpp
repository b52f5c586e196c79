#pragma once

#include <stdexcept>
#include <string>

namespace rexit {

// Every failure the library raises derives from this, so the CLI can map
// categories to exit codes with one catch block per category.
class error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Bad user input: unparsable config, unknown names, violated invariants of a
// model, domain or parameter set.
class config_error : public error {
  public:
    using error::error;
};

class model_error : public config_error {
  public:
    using config_error::config_error;
};

class param_error : public config_error {
  public:
    using config_error::config_error;
};

// Non-finite state, quadrature that misses its tolerance, etc.
class numerical_error : public error {
  public:
    using error::error;
};

// A checked property (lemma margin, theorem hypothesis, self-check) failed.
class assertion_failure : public error {
  public:
    using error::error;
};

class hypothesis_violation : public assertion_failure {
  public:
    using assertion_failure::assertion_failure;
};

class lemma_violation : public assertion_failure {
  public:
    using assertion_failure::assertion_failure;
};

} // namespace rexit
