// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "petra/cli.hpp"

int main(int argc, char** argv) { return petra::cli::run(argc, argv, std::cout, std::cerr); }
