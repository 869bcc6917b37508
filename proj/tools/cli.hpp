#pragma once

#include <string>
#include <vector>

namespace saml::cli {

enum ExitCode { kOk = 0, kUserError = 1, kInternalError = 2 };

/// Runs one command line ("saml <command> ..."); never throws.
int run(const std::vector<std::string>& args);

}  // namespace saml::cli
