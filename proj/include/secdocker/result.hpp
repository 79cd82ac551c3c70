// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#ifndef SECDOCKER_RESULT_HPP_
#define SECDOCKER_RESULT_HPP_

#include <cassert>
#include <utility>
#include <variant>

namespace secdocker {

// Minimal ok-or-error carrier used across module boundaries. T and E must be
// distinct types.
template <typename T, typename E>
class Result {
 public:
  Result(T value) : state_(std::in_place_index<0>, std::move(value)) {}
  Result(E error) : state_(std::in_place_index<1>, std::move(error)) {}

  bool ok() const { return state_.index() == 0; }
  explicit operator bool() const { return ok(); }

  T& value() {
    assert(ok());
    return std::get<0>(state_);
  }
  const T& value() const {
    assert(ok());
    return std::get<0>(state_);
  }
  T take() {
    assert(ok());
    return std::move(std::get<0>(state_));
  }

  E& error() {
    assert(!ok());
    return std::get<1>(state_);
  }
  const E& error() const {
    assert(!ok());
    return std::get<1>(state_);
  }

 private:
  std::variant<T, E> state_;
};

}  // namespace secdocker

#endif  // SECDOCKER_RESULT_HPP_
