// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace trafficdiff {

// Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print a
// JSON object {"error": {"type", "message"}} on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace trafficdiff
