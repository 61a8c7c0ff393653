#pragma once

#include <stdexcept>
#include <string>

namespace asfp {

// Base class for everything this library throws on purpose.
class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Tensor shape / geometry mismatches (wrong channel counts, kernel larger
// than the padded input, empty batches, ...).
class shape_error : public error {
public:
  using error::error;
};

// Bad indices: out-of-range labels, malformed prune index sets, unknown
// layer ids, epoch outside a schedule's domain.
class index_error : public error {
public:
  using error::error;
};

// Semantically invalid configuration (rates outside [0,1), inconsistent
// schedule anchors, pruning a non-prunable layer, ...).
class config_error : public error {
public:
  using error::error;
};

// Unparseable or corrupt external data: JSON documents, dataset files,
// checkpoint blobs.
class format_error : public error {
public:
  using error::error;
};

// Numerical failures: diverged training, solver bracket failures.
class numeric_error : public error {
public:
  using error::error;
};

// Inconsistent runtime state: stale backward caches, masks that do not
// match the model they are applied to, failed masked/compact equivalence.
class state_error : public error {
public:
  using error::error;
};

}  // namespace asfp
