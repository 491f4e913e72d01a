#pragma once

#include <stdexcept>
#include <string>

namespace symoden {

/// Violated precondition: wrong shapes, illegal variant/task pairing, bad ranges.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite value or ill-conditioned linear algebra. `where` is a node id,
/// RK4 stage index or rollout step, depending on who raised it.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(const std::string& what, long where = -1)
      : std::runtime_error(what), where_(where) {}
  long where() const noexcept { return where_; }

 private:
  long where_;
};

/// g g^T is not invertible at the query point.
class SingularActuation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Asking a model for something its variant does not define (energy of a baseline).
class UnsupportedQuery : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace symoden
