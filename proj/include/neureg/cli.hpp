#pragma once

// Command-line front end: synth, preprocess, train, register, evaluate.
//
// Each successful run prints one JSON manifest on `out`. Failures print one
// line of JSON {"code", "message"} on `err`. Exit codes: 0 success,
// 1 validation error, 2 I/O error.

#include <iosfwd>
#include <string>
#include <vector>

namespace neureg::cli {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

/// `args[0]` is the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace neureg::cli
