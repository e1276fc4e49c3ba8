// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Self-checks runnable from the command line: finite-difference gradients,
// block reversibility, the pipeline delay law, and lockstep/reference
// equivalence.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace petra::verify {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Report {
  std::string suite;
  std::vector<Check> checks;

  bool passed() const;
  std::string text() const;
};

struct Options {
  std::uint64_t seed = 1;
  /// Pipeline depth for the staleness suite.
  int stages = 10;
  /// Micro-batches for the staleness suite; 0 means 20 * stages.
  std::int64_t micro_batches = 0;
};

/// Every layer kind and every stage kind against central differences
/// (f64, h = 1e-5, relative error < 1e-4).
Report grad(const Options& options = {});
/// 100 random blocks: inverse of forward within 1e-11 (f64) / 1e-5 (f32);
/// fused backward bitwise equal to inverse + record + VJP.
Report reversibility(const Options& options = {});
/// Rounds engine: forward-to-backward delay at stage j is 2(J - j) once the
/// pipeline is full, and reversible stages never buffer.
Report staleness(const Options& options = {});
/// Lockstep engine and single-stage threads engine reproduce the monolithic
/// trainer bitwise for 20 steps.
Report oracle(const Options& options = {});

/// grad | reversibility | staleness | oracle. Throws ConfigError otherwise.
Report run(const std::string& suite, const Options& options = {});
std::vector<std::string> suites();

}  // namespace petra::verify
