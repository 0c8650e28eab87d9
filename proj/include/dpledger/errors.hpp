// Copyright 2026 The dpledger Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace dpledger {

// Bad numeric input to one of the privacy formulas or a malformed request.
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller invoked a reuse routine for a case it does not apply to.
class PreconditionViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// The ledger does not describe a history the reuse rules could have produced.
class CorruptHistory : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientBudget : public std::runtime_error {
 public:
  InsufficientBudget(double eps_squared_remaining, double eps_squared_cost)
      : std::runtime_error("insufficient privacy budget: cost " +
                           std::to_string(eps_squared_cost) +
                           " exceeds remaining " +
                           std::to_string(eps_squared_remaining)),
        eps_squared_remaining_(eps_squared_remaining),
        eps_squared_cost_(eps_squared_cost) {}

  double eps_squared_remaining() const { return eps_squared_remaining_; }
  double eps_squared_cost() const { return eps_squared_cost_; }

 private:
  double eps_squared_remaining_;
  double eps_squared_cost_;
};

}  // namespace dpledger
