// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "petra/errors.hpp"
#include "petra/verify.hpp"

namespace petra {
namespace {

TEST(Verify, EverySuitePasses) {
  verify::Options o;
  o.stages = 6;
  for (const auto& name : verify::suites()) {
    const auto r = verify::run(name, o);
    EXPECT_TRUE(r.passed()) << r.text();
    EXPECT_FALSE(r.checks.empty());
  }
}

TEST(Verify, StalenessCoversEveryStage) {
  verify::Options o;
  o.stages = 5;
  o.micro_batches = 30;
  const auto r = verify::staleness(o);
  EXPECT_EQ(r.checks.size(), 5u);
  EXPECT_NE(r.text().find("staleness: ok"), std::string::npos);
}

TEST(Verify, UnknownSuite) { EXPECT_THROW(verify::run("speed"), ConfigError); }

TEST(Verify, FailedCheckFailsReport) {
  verify::Report r{"x", {{"a", true, ""}, {"b", false, "bad"}}};
  EXPECT_FALSE(r.passed());
  EXPECT_NE(r.text().find("FAIL x/b  bad"), std::string::npos);
}

}  // namespace
}  // namespace petra
